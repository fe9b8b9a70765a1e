// Command-line front end for scenario runs and trigger thresholds.
//
//   etl run <scenario>            run and write the trace CSV + metadata sidecar
//   etl estimate-tau <scenario>   Monte Carlo E[tau] of the initial model and its kappa
//   etl kappa --eta --n --tau-max [--mode exact|approx]
//   etl validate <scenario>       schema check only
//
// Exit codes: 0 ok, 2 configuration error, 3 numerical error, 4 I/O error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "etl/scenario_io.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string out;
};

etl::ScenarioConfig load(const std::string& path, const GlobalOptions& g) {
    auto cfg = etl::load_scenario(path);
    if (g.seed) cfg.run.seed = *g.seed;
    return cfg;
}

int cmd_run(const std::string& path, const GlobalOptions& g) {
    const auto cfg = load(path, g);
    const auto trace = etl::run_scenario(cfg);
    const auto out = etl::resolve_output(cfg, g.out);
    etl::emit_csv(cfg, trace, out);

    std::size_t completed = 0;
    for (const auto& e : trace.episodes) completed += e.completed ? 1 : 0;
    std::cout << "scenario      " << cfg.name << "\n"
              << "steps         " << trace.records.size() << "\n"
              << "state updates " << trace.taus.size() << "\n"
              << "episodes      " << completed << " completed, " << trace.episodes.size() - completed
              << " unfinished\n";
    for (const auto& e : trace.episodes)
        std::cout << "  learning    " << e.start << " s -> " << e.end << " s (model version " << e.model.version
                  << ")\n";
    if (!trace.records.empty())
        std::cout << "messages      " << trace.records.back().messages << " (" << trace.records.back().bytes
                  << " bytes)\n";
    std::cout << "trace         " << out.string() << "\n";
    return kOk;
}

int cmd_estimate_tau(const std::string& path, const GlobalOptions& g) {
    const auto cfg = load(path, g);
    const auto& t = cfg.trigger;
    const auto est = etl::model_stopping_time(cfg.initial_model, cfg.Ts, cfg.delta, t,
                                              etl::sim_seed(cfg.run.seed, cfg.initial_model.version));
    std::printf("E[tau] = %.6f s (M = %zu paths, delta = %g, tau_max = %g s)\n", est.mean, est.sample_count,
                cfg.delta, t.tau_max);
    if (t.kappa) {
        std::printf("kappa = %.4f s (user override, not certified)\n", *t.kappa);
    } else if (t.window == etl::WindowKind::Count) {
        std::printf("kappa = %.4f s (%s, eta = %g, N = %zu)\n", t.threshold(t.N),
                    t.mode == etl::TriggerMode::Exact ? "exact" : "approx", t.eta, t.N);
    } else {
        std::printf("kappa depends on the number of samples in the %g s window\n", t.window_seconds);
    }
    return kOk;
}

int cmd_validate(const std::string& path, const GlobalOptions& g) {
    const auto cfg = load(path, g);
    std::cout << path << ": ok (scenario '" << cfg.name << "', n = " << cfg.A.rows() << ", q = " << cfg.B.cols()
              << ")\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event-triggered state estimation and model learning"};
    app.require_subcommand(1);

    GlobalOptions g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Override the scenario seed");
    app.add_option("--out", g.out, "Output CSV path (default: run.output, under $ETL_OUTPUT_DIR if set)");

    std::string scenario;
    auto* run = app.add_subcommand("run", "Execute a scenario and write its trace");
    run->add_option("scenario", scenario, "Scenario file")->required();
    auto* est = app.add_subcommand("estimate-tau", "Print the model-implied E[tau] and kappa");
    est->add_option("scenario", scenario, "Scenario file")->required();
    auto* val = app.add_subcommand("validate", "Check a scenario file");
    val->add_option("scenario", scenario, "Scenario file")->required();

    double eta = 0.0, n = 0.0, tau_max = 0.0;
    std::string mode = "approx";
    auto* kap = app.add_subcommand("kappa", "Print the Hoeffding trigger threshold");
    kap->add_option("--eta", eta, "Confidence level in (0, 1)")->required();
    kap->add_option("--n", n, "Empirical window size N")->required();
    kap->add_option("--tau-max", tau_max, "Maximum inter-communication time [s]")->required();
    kap->add_option("--mode", mode, "exact or approx")->check(CLI::IsMember({"exact", "approx"}));

    // Global flags are accepted after the subcommand as well.
    for (auto* sub : {run, est, val, kap}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kConfig;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*kap) {
            if (!(eta > 0.0 && eta < 1.0) || !(n >= 1.0) || !(tau_max > 0.0))
                throw etl::ConfigError("kappa: need 0 < eta < 1, n >= 1 and tau_max > 0");
            const double k = mode == "exact" ? etl::kappa_exact(eta, n, tau_max) : etl::kappa_approx(eta, n, tau_max);
            std::printf("%.4f\n", k);
            return kOk;
        }
        if (*run) return cmd_run(scenario, g);
        if (*est) return cmd_estimate_tau(scenario, g);
        if (*val) return cmd_validate(scenario, g);
    } catch (const etl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const etl::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const etl::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    }
    return kConfig;
}

#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include "etl/scenario.hpp"

// Scenario file schema (YAML, `schema: 1`):
//
//   schema: 1
//   name: paper-sim
//   system:    { Ts, A, B, Sigma, F, x0 }            F defaults to zero, x0 to the origin
//   model:     { A_cl, B, Sigma, version }           version defaults to 0
//   trigger:   { delta, eta, mode, tau_max, sim_samples, kappa, sustain,
//                window: { size: N } | { seconds: T, min_samples } }
//   reference: { kind: zero | cosine | chirp, amplitude, omega | f0, f1, duration }
//   learning:  { samples, chirp: { amplitude, f0, f1, duration } }
//   events:    [ { time, A, Sigma }, ... ]
//   run:       { duration, seed, output }
//
// Matrices are lists of rows, e.g. A: [[0.9]] or A: [[1, 0.01], [0, 1]].

namespace etl {

inline constexpr int kScenarioSchema = 1;

namespace yaml_detail {

inline void reject_unknown(const YAML::Node& node, const std::string& path, std::set<std::string> allowed) {
    if (!node.IsMap()) throw ConfigError(path + ": expected a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) throw ConfigError(path + "." + key + ": unknown key");
    }
}

inline YAML::Node child(const YAML::Node& node, const std::string& key, const std::string& path) {
    const auto c = node[key];
    if (!c) throw ConfigError(path + "." + key + ": missing");
    return c;
}

inline double number(const YAML::Node& node, const std::string& path) {
    if (!node.IsScalar()) throw ConfigError(path + ": expected a number");
    try {
        return node.as<double>();
    } catch (const YAML::Exception&) {
        throw ConfigError(path + ": expected a number, got '" + node.Scalar() + "'");
    }
}

inline double number(const YAML::Node& parent, const std::string& key, const std::string& path) {
    return number(child(parent, key, path), path + "." + key);
}

inline double number_or(const YAML::Node& parent, const std::string& key, const std::string& path, double fallback) {
    return parent[key] ? number(parent[key], path + "." + key) : fallback;
}

inline std::uint64_t unsigned_integer(const YAML::Node& node, const std::string& path) {
    if (!node.IsScalar()) throw ConfigError(path + ": expected a non-negative integer");
    try {
        return node.as<std::uint64_t>();
    } catch (const YAML::Exception&) {
        throw ConfigError(path + ": expected a non-negative integer, got '" + node.Scalar() + "'");
    }
}

inline std::string text(const YAML::Node& node, const std::string& path) {
    if (!node.IsScalar()) throw ConfigError(path + ": expected a string");
    return node.Scalar();
}

inline Matrix matrix(const YAML::Node& node, const std::string& path) {
    if (!node.IsSequence() || node.size() == 0) throw ConfigError(path + ": expected a non-empty list of rows");
    const auto rows = static_cast<Eigen::Index>(node.size());
    Eigen::Index cols = -1;
    Matrix m;
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto row = node[static_cast<std::size_t>(i)];
        const std::string rpath = path + "[" + std::to_string(i) + "]";
        if (!row.IsSequence()) throw ConfigError(rpath + ": expected a list of numbers");
        if (cols < 0) {
            cols = static_cast<Eigen::Index>(row.size());
            if (cols == 0) throw ConfigError(rpath + ": empty row");
            m.resize(rows, cols);
        } else if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw ConfigError(rpath + ": expected " + std::to_string(cols) + " entries, got " +
                              std::to_string(row.size()));
        }
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = number(row[static_cast<std::size_t>(j)], rpath + "[" + std::to_string(j) + "]");
    }
    return m;
}

inline Vector vector(const YAML::Node& node, const std::string& path) {
    if (!node.IsSequence() || node.size() == 0) throw ConfigError(path + ": expected a non-empty list of numbers");
    Vector v(static_cast<Eigen::Index>(node.size()));
    for (std::size_t i = 0; i < node.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = number(node[i], path + "[" + std::to_string(i) + "]");
    return v;
}

inline ChirpReference chirp(const YAML::Node& node, const std::string& path) {
    ChirpReference c;
    c.amplitude = number_or(node, "amplitude", path, 1.0);
    c.f0 = number(node, "f0", path);
    c.f1 = number(node, "f1", path);
    c.duration = number(node, "duration", path);
    return c;
}

inline ReferenceSignal reference(const YAML::Node& node, const std::string& path) {
    const auto kind = text(child(node, "kind", path), path + ".kind");
    if (kind == "zero") {
        reject_unknown(node, path, {"kind"});
        return ZeroReference{};
    }
    if (kind == "cosine") {
        reject_unknown(node, path, {"kind", "amplitude", "omega"});
        return CosineReference{number_or(node, "amplitude", path, 1.0), number(node, "omega", path)};
    }
    if (kind == "chirp") {
        reject_unknown(node, path, {"kind", "amplitude", "f0", "f1", "duration"});
        return chirp(node, path);
    }
    throw ConfigError(path + ".kind: expected zero, cosine or chirp, got '" + kind + "'");
}

} // namespace yaml_detail

/// Parses a scenario document. Shape and range checks run through ScenarioConfig::validate().
inline ScenarioConfig parse_scenario(const YAML::Node& doc) {
    using namespace yaml_detail;
    if (!doc.IsMap()) throw ConfigError("scenario: expected a mapping at the top level");
    reject_unknown(doc, "scenario",
                   {"schema", "name", "system", "model", "trigger", "reference", "learning", "events", "run"});
    const auto schema = unsigned_integer(child(doc, "schema", "scenario"), "schema");
    if (schema != kScenarioSchema)
        throw ConfigError("schema: unsupported version " + std::to_string(schema) + " (expected " +
                          std::to_string(kScenarioSchema) + ")");

    ScenarioConfig cfg;
    if (doc["name"]) cfg.name = text(doc["name"], "name");

    const auto sys = child(doc, "system", "scenario");
    reject_unknown(sys, "system", {"Ts", "A", "B", "Sigma", "F", "x0"});
    cfg.Ts = number(sys, "Ts", "system");
    cfg.A = matrix(child(sys, "A", "system"), "system.A");
    cfg.B = matrix(child(sys, "B", "system"), "system.B");
    cfg.Sigma = matrix(child(sys, "Sigma", "system"), "system.Sigma");
    cfg.F = sys["F"] ? matrix(sys["F"], "system.F") : Matrix::Zero(cfg.B.cols(), cfg.A.rows());
    if (sys["x0"]) cfg.x0 = vector(sys["x0"], "system.x0");

    const auto model = child(doc, "model", "scenario");
    reject_unknown(model, "model", {"A_cl", "B", "Sigma", "version"});
    cfg.initial_model.A_cl = matrix(child(model, "A_cl", "model"), "model.A_cl");
    cfg.initial_model.B = matrix(child(model, "B", "model"), "model.B");
    cfg.initial_model.Sigma = matrix(child(model, "Sigma", "model"), "model.Sigma");
    if (model["version"]) cfg.initial_model.version = unsigned_integer(model["version"], "model.version");

    const auto trig = child(doc, "trigger", "scenario");
    reject_unknown(trig, "trigger",
                   {"delta", "eta", "mode", "tau_max", "sim_samples", "kappa", "sustain", "window"});
    cfg.delta = number(trig, "delta", "trigger");
    auto& tc = cfg.trigger;
    tc.eta = number(trig, "eta", "trigger");
    tc.tau_max = number(trig, "tau_max", "trigger");
    tc.M = unsigned_integer(child(trig, "sim_samples", "trigger"), "trigger.sim_samples");
    if (trig["kappa"] && !trig["kappa"].IsNull()) tc.kappa = number(trig["kappa"], "trigger.kappa");
    tc.sustain = number_or(trig, "sustain", "trigger", 0.0);
    const auto mode = trig["mode"] ? text(trig["mode"], "trigger.mode") : std::string("approximated");
    if (mode == "exact") tc.mode = TriggerMode::Exact;
    else if (mode == "approximated") tc.mode = TriggerMode::Approximated;
    else throw ConfigError("trigger.mode: expected exact or approximated, got '" + mode + "'");
    const auto win = child(trig, "window", "trigger");
    if (win["size"]) {
        reject_unknown(win, "trigger.window", {"size"});
        tc.window = WindowKind::Count;
        tc.N = unsigned_integer(win["size"], "trigger.window.size");
    } else if (win["seconds"]) {
        reject_unknown(win, "trigger.window", {"seconds", "min_samples"});
        tc.window = WindowKind::Duration;
        tc.window_seconds = number(win, "seconds", "trigger.window");
        if (win["min_samples"]) tc.min_samples = unsigned_integer(win["min_samples"], "trigger.window.min_samples");
    } else {
        throw ConfigError("trigger.window: needs size (count window) or seconds (duration window)");
    }

    cfg.reference = doc["reference"] ? reference(doc["reference"], "reference") : ReferenceSignal{ZeroReference{}};

    const auto learn = child(doc, "learning", "scenario");
    reject_unknown(learn, "learning", {"samples", "chirp"});
    cfg.learning.samples = static_cast<Eigen::Index>(unsigned_integer(child(learn, "samples", "learning"),
                                                                      "learning.samples"));
    const auto ch = child(learn, "chirp", "learning");
    reject_unknown(ch, "learning.chirp", {"amplitude", "f0", "f1", "duration"});
    cfg.learning.chirp = chirp(ch, "learning.chirp");

    if (const auto evs = doc["events"]) {
        if (!evs.IsSequence()) throw ConfigError("events: expected a list");
        for (std::size_t i = 0; i < evs.size(); ++i) {
            const std::string path = "events[" + std::to_string(i) + "]";
            reject_unknown(evs[i], path, {"time", "A", "Sigma"});
            DynamicsEvent e;
            e.time = number(evs[i], "time", path);
            if (evs[i]["A"]) e.A = matrix(evs[i]["A"], path + ".A");
            if (evs[i]["Sigma"]) e.Sigma = matrix(evs[i]["Sigma"], path + ".Sigma");
            cfg.events.push_back(std::move(e));
        }
    }

    const auto run = child(doc, "run", "scenario");
    reject_unknown(run, "run", {"duration", "seed", "output"});
    cfg.run.duration = number(run, "duration", "run");
    cfg.run.seed = run["seed"] ? unsigned_integer(run["seed"], "run.seed") : 1;
    if (run["output"]) cfg.run.output = text(run["output"], "run.output");

    cfg.validate();
    return cfg;
}

inline ScenarioConfig parse_scenario_text(const std::string& yaml) {
    try {
        return parse_scenario(YAML::Load(yaml));
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("scenario: YAML parse error: ") + e.what());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    if (in.bad()) throw IoError("failed reading " + path.string());
    return os.str();
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) { return parse_scenario_text(read_file(path)); }

// Output ----------------------------------------------------------------------

/// Shortest round-trip decimal representation.
inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("SHA-256 digest failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

namespace yaml_detail {

inline void emit_matrix(YAML::Emitter& out, const Matrix& m) {
    out << YAML::Flow << YAML::BeginSeq;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << YAML::Flow << YAML::BeginSeq;
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << YAML::Value << format_number(m(i, j));
        out << YAML::EndSeq;
    }
    out << YAML::EndSeq;
}

inline void emit_chirp(YAML::Emitter& out, const ChirpReference& c) {
    out << YAML::Key << "amplitude" << YAML::Value << format_number(c.amplitude);
    out << YAML::Key << "f0" << YAML::Value << format_number(c.f0);
    out << YAML::Key << "f1" << YAML::Value << format_number(c.f1);
    out << YAML::Key << "duration" << YAML::Value << format_number(c.duration);
}

} // namespace yaml_detail

/// Canonical YAML form of a configuration; parse_scenario_text(to_yaml(c)) reproduces c.
inline std::string to_yaml(const ScenarioConfig& c) {
    using yaml_detail::emit_matrix;
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "schema" << YAML::Value << kScenarioSchema;
    out << YAML::Key << "name" << YAML::Value << c.name;

    out << YAML::Key << "system" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "Ts" << YAML::Value << format_number(c.Ts);
    out << YAML::Key << "A" << YAML::Value;
    emit_matrix(out, c.A);
    out << YAML::Key << "B" << YAML::Value;
    emit_matrix(out, c.B);
    out << YAML::Key << "Sigma" << YAML::Value;
    emit_matrix(out, c.Sigma);
    out << YAML::Key << "F" << YAML::Value;
    emit_matrix(out, c.F);
    if (c.x0) {
        out << YAML::Key << "x0" << YAML::Value << YAML::Flow << YAML::BeginSeq;
        for (Eigen::Index i = 0; i < c.x0->size(); ++i) out << format_number((*c.x0)[i]);
        out << YAML::EndSeq;
    }
    out << YAML::EndMap;

    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "A_cl" << YAML::Value;
    emit_matrix(out, c.initial_model.A_cl);
    out << YAML::Key << "B" << YAML::Value;
    emit_matrix(out, c.initial_model.B);
    out << YAML::Key << "Sigma" << YAML::Value;
    emit_matrix(out, c.initial_model.Sigma);
    out << YAML::Key << "version" << YAML::Value << c.initial_model.version;
    out << YAML::EndMap;

    const auto& t = c.trigger;
    out << YAML::Key << "trigger" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "delta" << YAML::Value << format_number(c.delta);
    out << YAML::Key << "eta" << YAML::Value << format_number(t.eta);
    out << YAML::Key << "mode" << YAML::Value << (t.mode == TriggerMode::Exact ? "exact" : "approximated");
    out << YAML::Key << "tau_max" << YAML::Value << format_number(t.tau_max);
    out << YAML::Key << "sim_samples" << YAML::Value << t.M;
    if (t.kappa) out << YAML::Key << "kappa" << YAML::Value << format_number(*t.kappa);
    out << YAML::Key << "sustain" << YAML::Value << format_number(t.sustain);
    out << YAML::Key << "window" << YAML::Value << YAML::Flow << YAML::BeginMap;
    if (t.window == WindowKind::Count) {
        out << YAML::Key << "size" << YAML::Value << t.N;
    } else {
        out << YAML::Key << "seconds" << YAML::Value << format_number(t.window_seconds);
        out << YAML::Key << "min_samples" << YAML::Value << t.min_samples;
    }
    out << YAML::EndMap << YAML::EndMap;

    out << YAML::Key << "reference" << YAML::Value << YAML::Flow << YAML::BeginMap;
    if (std::holds_alternative<ZeroReference>(c.reference)) {
        out << YAML::Key << "kind" << YAML::Value << "zero";
    } else if (const auto* cr = std::get_if<CosineReference>(&c.reference)) {
        out << YAML::Key << "kind" << YAML::Value << "cosine";
        out << YAML::Key << "amplitude" << YAML::Value << format_number(cr->amplitude);
        out << YAML::Key << "omega" << YAML::Value << format_number(cr->omega);
    } else {
        out << YAML::Key << "kind" << YAML::Value << "chirp";
        yaml_detail::emit_chirp(out, std::get<ChirpReference>(c.reference));
    }
    out << YAML::EndMap;

    out << YAML::Key << "learning" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "samples" << YAML::Value << c.learning.samples;
    out << YAML::Key << "chirp" << YAML::Value << YAML::Flow << YAML::BeginMap;
    yaml_detail::emit_chirp(out, c.learning.chirp);
    out << YAML::EndMap << YAML::EndMap;

    if (!c.events.empty()) {
        out << YAML::Key << "events" << YAML::Value << YAML::BeginSeq;
        for (const auto& e : c.events) {
            out << YAML::BeginMap << YAML::Key << "time" << YAML::Value << format_number(e.time);
            if (e.A) {
                out << YAML::Key << "A" << YAML::Value;
                emit_matrix(out, *e.A);
            }
            if (e.Sigma) {
                out << YAML::Key << "Sigma" << YAML::Value;
                emit_matrix(out, *e.Sigma);
            }
            out << YAML::EndMap;
        }
        out << YAML::EndSeq;
    }

    out << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "duration" << YAML::Value << format_number(c.run.duration);
    out << YAML::Key << "seed" << YAML::Value << c.run.seed;
    if (!c.run.output.empty()) out << YAML::Key << "output" << YAML::Value << c.run.output;
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

inline std::string config_hash(const ScenarioConfig& c) { return sha256_hex(to_yaml(c)); }

inline const char* const kTraceColumns[] = {"t",       "z_norm",          "gamma_state", "tau",
                                            "emp_mean", "sim_mean",        "kappa",       "gamma_learn_raw",
                                            "gamma_learn", "model_version", "messages",    "bytes"};

/// RFC 4180 quoting: fields containing comma, quote or line breaks are quoted.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline void write_csv(std::ostream& os, const ScenarioTrace& trace) {
    auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    bool first = true;
    for (const char* c : kTraceColumns) {
        os << (first ? "" : ",") << csv_field(c);
        first = false;
    }
    os << "\r\n";
    for (const auto& r : trace.records) {
        os << format_number(r.t) << ',' << opt(r.z_norm) << ',' << (r.gamma_state ? 1 : 0) << ',' << opt(r.tau)
           << ',' << opt(r.empirical_mean) << ',' << opt(r.sim_mean) << ',' << opt(r.kappa) << ','
           << (r.gamma_learn_raw ? (*r.gamma_learn_raw ? "1" : "0") : "") << ',' << (r.gamma_learn ? 1 : 0) << ','
           << r.model_version << ',' << r.messages << ',' << r.bytes << "\r\n";
    }
}

inline nlohmann::json matrix_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json trace_metadata(const ScenarioConfig& cfg, const ScenarioTrace& trace) {
    nlohmann::json meta;
    meta["schema"] = kScenarioSchema;
    meta["scenario"] = cfg.name;
    meta["config_sha256"] = config_hash(cfg);
    meta["seed"] = cfg.run.seed;
    meta["Ts"] = trace.Ts;
    meta["steps"] = trace.records.size();
    meta["columns"] = kTraceColumns;
    auto episodes = nlohmann::json::array();
    for (const auto& e : trace.episodes) {
        episodes.push_back({{"start", e.start},
                            {"end", e.end},
                            {"completed", e.completed},
                            {"version", e.model.version},
                            {"A_cl", matrix_json(e.model.A_cl)},
                            {"B", matrix_json(e.model.B)},
                            {"Sigma", matrix_json(e.model.Sigma)}});
    }
    meta["episodes"] = std::move(episodes);
    if (!trace.records.empty()) {
        meta["messages"] = trace.records.back().messages;
        meta["bytes"] = trace.records.back().bytes;
    }
    return meta;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
    auto p = csv;
    p += ".meta.json";
    return p;
}

/// Writes the trace CSV and its metadata sidecar (<path>.meta.json).
inline void emit_csv(const ScenarioConfig& cfg, const ScenarioTrace& trace, const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        write_csv(out, trace);
        if (!out) throw IoError("failed writing " + path.string());
    }
    const auto meta = sidecar_path(path);
    std::ofstream out(meta, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + meta.string() + " for writing");
    out << trace_metadata(cfg, trace).dump(2) << "\n";
    if (!out) throw IoError("failed writing " + meta.string());
}

/// Output path for a run: explicit override, else run.output resolved against $ETL_OUTPUT_DIR.
inline std::filesystem::path resolve_output(const ScenarioConfig& cfg, const std::string& override_path = {}) {
    if (!override_path.empty()) return override_path;
    std::filesystem::path p = cfg.run.output.empty() ? cfg.name + ".csv" : cfg.run.output;
    if (p.is_relative()) {
        if (const char* dir = std::getenv("ETL_OUTPUT_DIR"); dir && *dir) return std::filesystem::path(dir) / p;
    }
    return p;
}

} // namespace etl

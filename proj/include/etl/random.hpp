#pragma once

#include <array>
#include <cstdint>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/taus88.hpp>
#include <boost/random/uniform_01.hpp>
#include <Eigen/Core>

namespace etl {

/**
 * @brief Seeded pseudo-random stream with an attached standard normal source.
 *
 * Uses L'Ecuyer's taus88 with a ziggurat normal sampler: the engine state is
 * three words, so a fresh sub-stream per Monte Carlo path costs next to
 * nothing. Sub-streams are derived from (seed, index) by hashing both into the
 * engine state, so a consumer that draws path i from substream(seed, i) gets
 * the same numbers no matter how paths are scheduled across threads.
 */
class RngStream {
public:
    using Engine = boost::random::taus88;

    explicit RngStream(std::uint64_t seed) : RngStream(seed, 0, 0) {}

    static RngStream substream(std::uint64_t seed, std::uint64_t index) {
        return RngStream(seed, index, 1);
    }

    double normal() { return normal_(engine_); }

    double uniform() { return boost::random::uniform_01<double>()(engine_); }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    Engine& engine() { return engine_; }

private:
    RngStream(std::uint64_t seed, std::uint64_t index, std::uint32_t tag) {
        const std::uint64_t h1 = mix(seed ^ mix(index + 0x632BE59BD9B4E019ULL * (tag + 1)));
        const std::uint64_t h2 = mix(h1);
        // taus88 ignores seed words below 2, 8 and 16 for its three components.
        std::array<std::uint32_t, 3> words{static_cast<std::uint32_t>(h1) | 2u,
                                           static_cast<std::uint32_t>(h1 >> 32) | 8u,
                                           static_cast<std::uint32_t>(h2) | 16u};
        auto first = words.begin();
        engine_.seed(first, words.end());
    }

    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    Engine engine_;
    boost::random::normal_distribution<double> normal_;
};

} // namespace etl

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "splitsim/common.hpp"

namespace splitsim {

/// splitmix64 finalizer; used to turn structured stream keys into seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Role of a derived random stream. Every consumer of randomness in a run
/// gets its own stream keyed by (seed, client, round, role), so results do
/// not depend on the order in which client-server pairs execute.
enum class StreamRole : std::uint64_t {
    client_perturb = 1,
    server_perturb = 2,
    batch = 3,
    selection = 4,
    timing = 5,
    data_gen = 6,
    param_init = 7,
    partition = 8,
    holdout = 9,
};

struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t client = 0;
    std::uint64_t round = 0;
    StreamRole role = StreamRole::client_perturb;

    std::uint64_t derive_seed() const {
        std::uint64_t h = mix64(seed);
        h = mix64(h ^ client);
        h = mix64(h ^ round);
        h = mix64(h ^ static_cast<std::uint64_t>(role));
        return h;
    }
};

/// Deterministic random stream. The engine is std::mt19937_64 (bit-exact by
/// the standard); all distributions are implemented here rather than taken
/// from <random>, whose distributions are implementation-defined.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    static RngStream derive(const StreamKey& key) { return RngStream(key.derive_seed()); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Marsaglia polar; caches the spare deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double scale = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * scale;
        has_spare_ = true;
        return u * scale;
    }

    double exponential(double mean) {
        if (!(mean > 0.0)) throw Error("exponential draw requires positive mean");
        return -mean * std::log(1.0 - uniform01());
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw Error("gamma draw requires positive shape");
        if (shape < 1.0) {
            const double u = uniform01();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform01();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    /// Unbiased uniform index in [0, n) via rejection.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw Error("uniform_index requires n > 0");
        const std::uint64_t range = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = ~0ull - (~0ull % range + 1ull) % range;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r > limit);
        return static_cast<std::size_t>(r % range);
    }

    /// k distinct values from [0, n), ascending order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw Error("cannot sample more elements than available");
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + uniform_index(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        std::sort(pool.begin(), pool.end());
        return pool;
    }

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace splitsim

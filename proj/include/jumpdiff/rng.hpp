#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace jumpdiff {

// Deterministic RNG with explicit transforms (uniform via the top 53 bits,
// normals via Box-Muller) so that streams do not depend on the standard
// library's distribution implementations. Every sampler takes one of these
// by reference; parallel workers own independently seeded instances.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Independent stream derived from a base seed, e.g. one per sampling chain.
    static Rng forked(std::uint64_t seed, std::uint64_t stream) {
        return Rng(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

    std::uint64_t bits() { return gen_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::vector<double> normal_vec(size_t k) {
        std::vector<double> v(k);
        for (auto& e : v) e = normal();
        return v;
    }

    // Uniform integer in [0, k); k >= 1. Modulo bias is negligible for the
    // small k used here.
    int below(int k) {
        if (k < 1) throw std::invalid_argument("Rng::below: k must be >= 1");
        return static_cast<int>(gen_() % static_cast<std::uint64_t>(k));
    }

    // Index in [0, weights.size()) with probability proportional to weights.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w))
                throw std::invalid_argument("Rng::categorical: bad weight");
            total += w;
        }
        if (total <= 0.0) throw std::invalid_argument("Rng::categorical: zero total weight");
        double u = uniform() * total;
        for (size_t i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[below(i + 1)]);
    }

    double exponential(double rate) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(u) / rate;
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace jumpdiff

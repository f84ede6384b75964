#ifndef MIPL_RNG_HPP
#define MIPL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mipl::rng {

// splitmix64 step; used to derive independent stream seeds from a master seed.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic generator. The engine is std::mt19937_64 (bit-exact by the
// standard); all distributions are hand-rolled here because the std::
// distribution objects are implementation-defined and would break
// byte-identical output across toolchains.
class Engine {
  public:
    explicit Engine(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Rejection keeps it unbiased.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return lo + static_cast<int>(x % span);
    }

    // Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fisher-Yates; std::shuffle is implementation-defined, this is not.
template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = eng.uniform_int(0, i);
        std::swap(v[i], v[j]);
    }
}

} // namespace mipl::rng

#endif

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace coxcp {

// Counter-free splitmix64 step; also used to derive independent substreams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Small self-contained RNG so that seeded runs are bit-identical regardless of
// the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // warm up so that nearby seeds decorrelate
        splitmix64(state_);
        splitmix64(state_);
    }

    // Substream for replicate `index`, independent of scheduling order.
    static Rng for_replicate(std::uint64_t master_seed, std::uint64_t index) {
        std::uint64_t s = master_seed;
        std::uint64_t base = splitmix64(s);
        std::uint64_t t = base + 0x9e3779b97f4a7c15ULL * (index + 1);
        return Rng(splitmix64(t));
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform on the open interval (0,1)
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // standard normal, Marsaglia polar method
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    double exponential() { return -std::log(uniform01()); }

    bool bernoulli_half() { return (next_u64() & 1ULL) != 0; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Kahan-Neumaier compensated accumulator; summation order is fixed by the
// caller, which keeps aggregated experiment reports bit-identical.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// log Phi(x), usable far into the lower tail where erfc underflows.
inline double norm_logcdf(double x) {
    if (x > -10.0) {
        const double p = norm_cdf(x);
        if (p > 0.0) return std::log(p);
    }
    // asymptotic expansion of Mills' ratio for x << 0
    const double x2 = x * x;
    double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    return -0.5 * x2 - 0.5 * std::log(2.0 * M_PI) - std::log(-x) + std::log(series);
}

namespace detail {

// Gauss-Kronrod 7-15 nodes on [-1,1] (nonnegative abscissae; symmetric).
inline constexpr double gk_nodes[8] = {
    0.0,
    0.2077849550078985,
    0.4058451513773972,
    0.5860872354676911,
    0.7415311855993945,
    0.8648644233597691,
    0.9491079123427585,
    0.9914553711208126};
inline constexpr double gk_weights[8] = {
    0.2094821410847278,
    0.2044329400752989,
    0.1903505780647854,
    0.1690047266392679,
    0.1406532597155259,
    0.1047900103222502,
    0.0630920926299786,
    0.0229353220105292};
inline constexpr double gauss_weights[4] = {
    0.4179591836734694,
    0.3818300505051189,
    0.2797053914892767,
    0.1294849661688697};

template <class F>
inline void gk15(const F& f, double a, double b, double& kronrod, double& err) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    double fv[15];
    fv[7] = f(c);
    for (int i = 0; i < 7; ++i) {
        const double dx = h * gk_nodes[7 - i];
        fv[i] = f(c - dx);
        fv[14 - i] = f(c + dx);
    }
    double resk = gk_weights[0] * fv[7];
    double resg = gauss_weights[0] * fv[7];
    for (int i = 1; i < 8; ++i) resk += gk_weights[i] * (fv[7 - i] + fv[7 + i]);
    for (int i = 1; i < 4; ++i) resg += gauss_weights[i] * (fv[7 - 2 * i] + fv[7 + 2 * i]);
    kronrod = resk * h;
    err = std::abs((resk - resg) * h);
}

}  // namespace detail

// Adaptive Gauss-Kronrod integration of f over [a,b] to absolute tolerance.
template <class F>
inline double integrate(const F& f, double a, double b, double abs_tol = 1e-9,
                        int max_depth = 60) {
    struct Seg {
        double a, b, val, err;
        int depth;
    };
    double val, err;
    detail::gk15(f, a, b, val, err);
    std::vector<Seg> stack{{a, b, val, err, 0}};
    double total = 0.0;
    double total_err = 0.0;
    CompensatedSum acc;
    while (!stack.empty()) {
        Seg s = stack.back();
        stack.pop_back();
        if (s.err <= abs_tol * (s.b - s.a) / (b - a) || s.depth >= max_depth) {
            acc.add(s.val);
            total_err += s.err;
            continue;
        }
        const double m = 0.5 * (s.a + s.b);
        double v1, e1, v2, e2;
        detail::gk15(f, s.a, m, v1, e1);
        detail::gk15(f, m, s.b, v2, e2);
        stack.push_back({s.a, m, v1, e1, s.depth + 1});
        stack.push_back({m, s.b, v2, e2, s.depth + 1});
    }
    total = acc.value();
    if (!std::isfinite(total)) throw std::runtime_error("quadrature did not converge");
    return total;
}

}  // namespace coxcp

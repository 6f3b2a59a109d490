#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "coxcp/math.hpp"

namespace coxcp {

// Two-sided Brownian motion with negative drift away from the origin:
//   V(s) = -tau1 |s| + sigma1 W(s)  for s < 0,
//   V(s) = -tau2  s  + sigma2 W(s)  for s >= 0,
// with W a two-sided standard Brownian motion. This process governs the
// localization error of an estimated change point; its expected supremum and
// the expected depth at an independent copy's argmax are the quantities the
// information-criterion penalty plugs in.
struct DriftedBmSpec {
    double tau1 = 0.5;
    double tau2 = 0.5;
    double sigma1 = 1.0;
    double sigma2 = 1.0;

    void validate() const {
        if (!(tau1 > 0.0 && tau2 > 0.0 && sigma1 > 0.0 && sigma2 > 0.0))
            throw std::domain_error("drift and diffusion coefficients must be positive");
    }
};

// P{ sup_{s>0} (W_s - a2 s) > a1 } = exp(-2 a1 a2) for a1, a2 > 0.
inline double drifted_bm_tail_prob(double a1, double a2) {
    if (!(a1 > 0.0 && a2 > 0.0)) throw std::domain_error("tail law requires positive constants");
    return std::exp(-2.0 * a1 * a2);
}

// E sup V in closed form: with c_i = 2 tau_i / sigma_i^2 the two one-sided
// suprema are independent exponentials with rates c1, c2, so
//   E sup = 1/c1 + 1/c2 - 1/(c1 + c2).
inline double expected_supremum(const DriftedBmSpec& spec) {
    spec.validate();
    const double c1 = 2.0 * spec.tau1 / (spec.sigma1 * spec.sigma1);
    const double c2 = 2.0 * spec.tau2 / (spec.sigma2 * spec.sigma2);
    return 1.0 / c1 + 1.0 / c2 - 1.0 / (c1 + c2);
}

namespace detail {

// One-sided argmax density kernel
//   g(s | a1, a2) = 2 a1 (a1 + 2 a2) e^{2 a2 (a1 + a2) s} Phi(-(a1 + 2 a2) sqrt(s))
//                   - 2 a1^2 Phi(-a1 sqrt(s)),   s >= 0.
// Both terms are evaluated in log space; the growing exponential is always
// dominated by the Gaussian tail it multiplies.
inline double argmax_kernel(double s, double a1, double a2) {
    if (s < 0.0) return 0.0;
    const double rs = std::sqrt(s);
    const double l1 = std::log(2.0 * a1 * (a1 + 2.0 * a2)) + 2.0 * a2 * (a1 + a2) * s +
                      norm_logcdf(-(a1 + 2.0 * a2) * rs);
    const double l2 = std::log(2.0 * a1 * a1) + norm_logcdf(-a1 * rs);
    const double g = std::exp(l2) * std::expm1(l1 - l2);
    return g > 0.0 ? g : 0.0;
}

}  // namespace detail

// Density of argmax_s V(s); discontinuous at 0, right-continuous by convention.
inline double argmax_density(const DriftedBmSpec& spec, double s) {
    spec.validate();
    if (s < 0.0)
        return detail::argmax_kernel(-s, spec.tau1 / spec.sigma1,
                                     spec.tau2 * spec.sigma1 / (spec.sigma2 * spec.sigma2));
    return detail::argmax_kernel(s, spec.tau2 / spec.sigma2,
                                 spec.tau1 * spec.sigma2 / (spec.sigma1 * spec.sigma1));
}

// E{ -V(S') } for S' the argmax of an independent copy of V. Since V(s) has
// mean -tau |s| at fixed s and S' is independent,
//   E{-V(S')} = tau1 E(|S'| ; S'<0) + tau2 E(S' ; S'>=0),
// evaluated by quadrature against the argmax density. For every valid spec
// this equals expected_supremum(spec); the equality is cross-checked by the
// simulation gate rather than assumed.
inline double expected_depth_at_copy_argmax(const DriftedBmSpec& spec, double abs_tol = 1e-8) {
    spec.validate();
    const double a1_left = spec.tau1 / spec.sigma1;
    const double a2_left = spec.tau2 * spec.sigma1 / (spec.sigma2 * spec.sigma2);
    const double a1_right = spec.tau2 / spec.sigma2;
    const double a2_right = spec.tau1 * spec.sigma2 / (spec.sigma1 * spec.sigma1);
    // the kernel decays like e^{-a1^2 s / 2}; 120/a1^2 puts the remainder far
    // below the quadrature tolerance
    const auto side = [&](double tau, double a1, double a2) {
        const double horizon = std::max(120.0 / (a1 * a1), 40.0);
        return tau * integrate([&](double s) { return s * detail::argmax_kernel(s, a1, a2); },
                               0.0, horizon, abs_tol);
    };
    return side(spec.tau1, a1_left, a2_left) + side(spec.tau2, a1_right, a2_right);
}

struct BmSimConfig {
    double horizon = 0.0;  // per-side range; 0 chooses 12 * max(sigma^2/tau^2)
    double step = 0.0;     // grid increment; 0 chooses horizon/2400
    long paths = 100000;
    std::uint64_t seed = 1;
};

struct BmSimResult {
    double mean_sup = 0.0;
    double se_sup = 0.0;
    double mean_depth_at_copy_argmax = 0.0;  // Monte Carlo E{-V at copy's argmax}
    double se_depth = 0.0;
    std::vector<double> sup_samples;
    std::vector<double> argmax_samples;
    double horizon = 0.0;
    double step = 0.0;
    long paths = 0;
    std::uint64_t seed = 0;
};

namespace detail {

struct PathSummary {
    double sup = 0.0;
    bool argmax_right = true;
    std::size_t argmax_interval = 0;  // interval [k*h, (k+1)*h) on its side
};

// Exact endpoint increments plus exact Brownian-bridge interval maxima: the
// drift is linear inside each step, so conditionally on the endpoints the
// piece is a Brownian bridge and its maximum M over a step of length h solves
//   P(M >= m) = exp(-2 (m-a)(m-b) / (sigma^2 h)),
// giving M = (a + b + sqrt((a-b)^2 - 2 sigma^2 h log U)) / 2. The sampled
// supremum is therefore exact in distribution over the truncated horizon and
// the argmax interval is identified exactly.
inline PathSummary simulate_path(Rng& rng, const DriftedBmSpec& spec, double step,
                                 std::size_t n_steps) {
    PathSummary best;  // V(0) = 0 is always attainable
    best.sup = 0.0;
    const double sqrt_step = std::sqrt(step);
    for (int side = 0; side < 2; ++side) {
        const double tau = side == 0 ? spec.tau1 : spec.tau2;
        const double sigma = side == 0 ? spec.sigma1 : spec.sigma2;
        double prev = 0.0;
        for (std::size_t k = 0; k < n_steps; ++k) {
            const double next = prev - tau * step + sigma * sqrt_step * rng.normal();
            const double diff = prev - next;
            const double bridge =
                0.5 * (prev + next +
                       std::sqrt(diff * diff -
                                 2.0 * sigma * sigma * step * std::log(rng.uniform01())));
            if (bridge > best.sup) {
                best.sup = bridge;
                best.argmax_right = (side == 1);
                best.argmax_interval = k;
            }
            prev = next;
        }
    }
    return best;
}

}  // namespace detail

// Seeded Monte Carlo for the supremum and the depth at an independent copy's
// argmax. Replicate r draws from a substream derived from (seed, r), so the
// result does not depend on scheduling; aggregation runs in replicate order.
inline BmSimResult simulate_sup_and_argmax(const DriftedBmSpec& spec, const BmSimConfig& config) {
    spec.validate();
    if (config.paths < 2) throw std::invalid_argument("need at least two paths");
    const double scale = std::max(spec.sigma1 * spec.sigma1 / (spec.tau1 * spec.tau1),
                                  spec.sigma2 * spec.sigma2 / (spec.tau2 * spec.tau2));
    const double horizon = config.horizon > 0.0 ? config.horizon : 12.0 * scale;
    const double step = config.step > 0.0 ? config.step : horizon / 2400.0;
    const std::size_t n_steps = static_cast<std::size_t>(std::ceil(horizon / step));

    const std::size_t n = static_cast<std::size_t>(config.paths);
    std::vector<double> sups(n), depths(n), argmaxes(n);

    const auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            Rng rng = Rng::for_replicate(config.seed, r);
            const auto main_path = detail::simulate_path(rng, spec, step, n_steps);
            const auto copy_path = detail::simulate_path(rng, spec, step, n_steps);
            sups[r] = main_path.sup;
            const double mid = (static_cast<double>(main_path.argmax_interval) + 0.5) * step;
            argmaxes[r] = main_path.argmax_right ? mid : -mid;
            // V is independent of the copy's argmax S' and E{V(s)} = -tau|s|
            // pointwise, so tau |S'| averages to E{-V(S')} with the noise of
            // the Brownian part integrated out.
            const double copy_mid =
                (static_cast<double>(copy_path.argmax_interval) + 0.5) * step;
            depths[r] = (copy_path.argmax_right ? spec.tau2 : spec.tau1) * copy_mid;
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t chunk = (n + hw - 1) / hw;
    std::vector<std::thread> threads;
    for (std::size_t b = 0; b < n; b += chunk)
        threads.emplace_back(worker, b, std::min(n, b + chunk));
    for (auto& t : threads) t.join();

    const auto mean_se = [&](const std::vector<double>& xs, double& mean, double& se) {
        CompensatedSum sum;
        for (double x : xs) sum.add(x);
        mean = sum.value() / static_cast<double>(xs.size());
        CompensatedSum sq;
        for (double x : xs) sq.add((x - mean) * (x - mean));
        se = std::sqrt(sq.value() / (static_cast<double>(xs.size()) - 1.0) /
                       static_cast<double>(xs.size()));
    };
    BmSimResult out;
    mean_se(sups, out.mean_sup, out.se_sup);
    mean_se(depths, out.mean_depth_at_copy_argmax, out.se_depth);
    out.sup_samples = std::move(sups);
    out.argmax_samples = std::move(argmaxes);
    out.horizon = horizon;
    out.step = step;
    out.paths = config.paths;
    out.seed = config.seed;
    return out;
}

// Spec of the limit process for a cut between two segments, from the
// quadratic forms of the diffusion-side matrices (d1, d2) and drift-side
// matrices (e1, e2) along the coefficient jump:
//   tau_i = e_i / 2,  sigma_i = sqrt(d_i).
inline DriftedBmSpec spec_from_quadratic_forms(double d1, double d2, double e1, double e2) {
    if (!(d1 > 0.0 && d2 > 0.0 && e1 > 0.0 && e2 > 0.0))
        throw std::domain_error("quadratic forms must be positive");
    return DriftedBmSpec{0.5 * e1, 0.5 * e2, std::sqrt(d1), std::sqrt(d2)};
}

inline DriftedBmSpec spec_from_matrices(const Eigen::MatrixXd& a_j, const Eigen::MatrixXd& a_j1,
                                        const Eigen::MatrixXd& b_j, const Eigen::MatrixXd& b_j1,
                                        const Eigen::VectorXd& delta) {
    return spec_from_quadratic_forms(delta.dot(a_j * delta), delta.dot(a_j1 * delta),
                                     delta.dot(b_j * delta), delta.dot(b_j1 * delta));
}

// Agreement gate between the closed form, the quadrature and the simulation,
// optionally against an externally supplied penalty constant (two_c = 2 C).
struct BiasVerification {
    double closed_form = 0.0;
    double quadrature = 0.0;
    BmSimResult sim;
    double two_c = 0.0;
    bool has_two_c = false;
    bool agree = true;
};

inline BiasVerification verify_bias_constants(const DriftedBmSpec& spec, const BmSimConfig& config,
                                              std::optional<double> two_c = {}) {
    BiasVerification v;
    v.closed_form = expected_supremum(spec);
    v.quadrature = expected_depth_at_copy_argmax(spec);
    v.sim = simulate_sup_and_argmax(spec, config);
    v.agree = std::abs(v.quadrature - v.closed_form) <= 1e-6 * std::max(1.0, v.closed_form) &&
              std::abs(v.sim.mean_sup - v.closed_form) <= 3.0 * v.sim.se_sup &&
              std::abs(v.sim.mean_depth_at_copy_argmax - v.quadrature) <= 3.0 * v.sim.se_depth;
    if (two_c) {
        v.has_two_c = true;
        v.two_c = *two_c;
        const double mc = v.sim.mean_sup + v.sim.mean_depth_at_copy_argmax;
        const double se = std::sqrt(v.sim.se_sup * v.sim.se_sup + v.sim.se_depth * v.sim.se_depth);
        v.agree = v.agree && std::abs(mc - v.two_c) <= 3.0 * se;
    }
    return v;
}

}  // namespace coxcp

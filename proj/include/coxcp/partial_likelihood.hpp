#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "coxcp/errors.hpp"
#include "coxcp/survival.hpp"

namespace coxcp {

struct RidgeConfig {
    double xi = 0.0;             // ridge weight inside every event term
    double newton_tol = 1e-8;    // sup-norm of the segment gradient
    int max_iter = 50;
    int step_halvings = 20;
};

struct SegmentFit {
    Eigen::VectorXd beta;
    double log_pl = 0.0;  // this segment's contribution to the objective
    bool converged = false;
    int iterations = 0;
};

namespace detail {

struct SegmentScan {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd neg_hessian;
    double event_weight = 0.0;
};

// One backward pass over the dataset evaluating a segment's contribution to
// the ridge log-partial likelihood together with its derivatives. Subjects
// are folded into the risk sums one tied-time group at a time, so every tied
// event sees the full risk set at its time (Breslow). The running shift is
// the suffix maximum of beta'z, which keeps the exponentials bounded by 1.
inline SegmentScan scan_segment(const SurvivalDataset& data, double lo, double hi,
                                bool closed_right, const Eigen::VectorXd& beta, double xi,
                                bool need_gradient, bool need_hessian) {
    const int p = data.covariate_dim();
    SegmentScan out;
    if (need_gradient) out.gradient = Eigen::VectorXd::Zero(p);
    if (need_hessian) out.neg_hessian = Eigen::MatrixXd::Zero(p, p);

    double shift = -std::numeric_limits<double>::infinity();
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2;
    if (need_hessian) s2 = Eigen::MatrixXd::Zero(p, p);
    const double ridge = 0.5 * xi * beta.squaredNorm();

    const auto& subjects = data.subjects();
    std::ptrdiff_t i = static_cast<std::ptrdiff_t>(subjects.size()) - 1;
    while (i >= 0) {
        const double t = subjects[static_cast<std::size_t>(i)].time;
        std::ptrdiff_t first = i;
        while (first > 0 && subjects[static_cast<std::size_t>(first - 1)].time == t) --first;
        for (std::ptrdiff_t k = i; k >= first; --k) {
            const Subject& s = subjects[static_cast<std::size_t>(k)];
            const double eta = beta.dot(s.covariates);
            if (eta > shift) {
                const double rescale = std::isfinite(shift) ? std::exp(shift - eta) : 0.0;
                s0 *= rescale;
                s1 *= rescale;
                if (need_hessian) s2 *= rescale;
                shift = eta;
            }
            const double e = s.weight * std::exp(eta - shift);
            s0 += e;
            s1 += e * s.covariates;
            if (need_hessian) s2 += e * (s.covariates * s.covariates.transpose());
        }
        const bool in_segment = (t >= lo) && (t < hi || (closed_right && t == hi));
        if (in_segment) {
            for (std::ptrdiff_t k = first; k <= i; ++k) {
                const Subject& s = subjects[static_cast<std::size_t>(k)];
                if (!s.event) continue;
                if (s0 <= 0.0) throw std::domain_error("empty risk set at an event time");
                const double w = s.weight;
                out.event_weight += w;
                out.value += w * (beta.dot(s.covariates) - (shift + std::log(s0)) - ridge);
                if (need_gradient) {
                    out.gradient += w * (s.covariates - s1 / s0 - xi * beta);
                }
                if (need_hessian) {
                    const Eigen::VectorXd mean = s1 / s0;
                    Eigen::MatrixXd cov = s2 / s0 - mean * mean.transpose();
                    cov.diagonal().array() += xi;
                    out.neg_hessian += w * cov;
                }
            }
        }
        i = first - 1;
    }
    return out;
}

inline void segment_bounds(const SurvivalDataset& data, const SegmentPartition& partition,
                           int j, double& lo, double& hi, bool& closed_right) {
    if (j < 1 || j > partition.num_segments())
        throw std::domain_error("segment index out of range");
    partition.validate(data.horizon());
    lo = partition.lower(j);
    hi = partition.upper(j, data.horizon());
    closed_right = (j == partition.num_segments());
}

}  // namespace detail

// Ridge log-partial likelihood of the whole model: sum over segments of
//   sum_{events i in segment j} w_i [ beta_j'z_i - log(sum_{risk set} w e^{beta_j'z})
//                                     - (xi/2) beta_j'beta_j ].
inline double log_partial_likelihood(const SurvivalDataset& data,
                                     const SegmentPartition& partition,
                                     const std::vector<Eigen::VectorXd>& betas, double xi) {
    if (static_cast<int>(betas.size()) != partition.num_segments())
        throw std::invalid_argument("one coefficient vector per segment required");
    partition.validate(data.horizon());
    double total = 0.0;
    for (int j = 1; j <= partition.num_segments(); ++j) {
        double lo, hi;
        bool closed;
        detail::segment_bounds(data, partition, j, lo, hi, closed);
        total += detail::scan_segment(data, lo, hi, closed,
                                      betas[static_cast<std::size_t>(j - 1)], xi, false, false)
                     .value;
    }
    return total;
}

// Flat-parameter overload: beta_all stacks the m+1 segment vectors.
inline double log_partial_likelihood(const SurvivalDataset& data,
                                     const SegmentPartition& partition,
                                     const Eigen::VectorXd& beta_all, double xi) {
    const int p = data.covariate_dim();
    const int segs = partition.num_segments();
    if (beta_all.size() != static_cast<Eigen::Index>(p) * segs)
        throw std::invalid_argument("beta_all must have length p*(m+1)");
    std::vector<Eigen::VectorXd> betas;
    betas.reserve(static_cast<std::size_t>(segs));
    for (int j = 0; j < segs; ++j) betas.push_back(beta_all.segment(j * p, p));
    return log_partial_likelihood(data, partition, betas, xi);
}

// Analytic gradient of segment j's contribution with respect to its own beta.
inline Eigen::VectorXd segment_gradient(const SurvivalDataset& data,
                                        const SegmentPartition& partition, int j,
                                        const Eigen::VectorXd& beta, double xi) {
    double lo, hi;
    bool closed;
    detail::segment_bounds(data, partition, j, lo, hi, closed);
    return detail::scan_segment(data, lo, hi, closed, beta, xi, true, false).gradient;
}

// Analytic Hessian of segment j's contribution; the ridge term sits inside
// every event term, so the ridge shift scales with the segment event weight.
inline Eigen::MatrixXd segment_hessian(const SurvivalDataset& data,
                                       const SegmentPartition& partition, int j,
                                       const Eigen::VectorXd& beta, double xi) {
    double lo, hi;
    bool closed;
    detail::segment_bounds(data, partition, j, lo, hi, closed);
    return -detail::scan_segment(data, lo, hi, closed, beta, xi, false, true).neg_hessian;
}

namespace detail {

// Newton ascent with step halving on one segment's concave objective.
inline SegmentFit fit_one_segment(const SurvivalDataset& data, double lo, double hi,
                                  bool closed_right, double xi, const RidgeConfig& config,
                                  const Eigen::VectorXd& init) {
    SegmentFit fit;
    fit.beta = init;
    SegmentScan scan = scan_segment(data, lo, hi, closed_right, fit.beta, xi, true, true);
    for (int iter = 0; iter < config.max_iter; ++iter) {
        if (scan.gradient.lpNorm<Eigen::Infinity>() <= config.newton_tol) {
            fit.converged = true;
            break;
        }
        fit.iterations = iter + 1;
        Eigen::LLT<Eigen::MatrixXd> llt(scan.neg_hessian);
        if (llt.info() != Eigen::Success) {
            if (xi == 0.0)
                throw InfeasibleModelError(
                    "singular Hessian in a segment fit (e.g. constant covariate); "
                    "rerun with a positive ridge weight xi");
            throw std::runtime_error("segment Hessian factorization failed");
        }
        Eigen::VectorXd step = llt.solve(scan.gradient);
        bool improved = false;
        // near the optimum the true improvement sinks below the objective's
        // rounding noise; accept steps that are not numerically worse
        const double noise =
            16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(scan.value));
        for (int h = 0; h <= config.step_halvings; ++h) {
            const Eigen::VectorXd candidate = fit.beta + step;
            SegmentScan trial = scan_segment(data, lo, hi, closed_right, candidate, xi, true, true);
            if (trial.value >= scan.value - noise) {
                fit.beta = candidate;
                scan = trial;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) break;  // line search exhausted; report unconverged below
        if (scan.gradient.lpNorm<Eigen::Infinity>() <= config.newton_tol) {
            fit.converged = true;
            break;
        }
    }
    if (!fit.converged)
        fit.converged = scan.gradient.lpNorm<Eigen::Infinity>() <= config.newton_tol;
    fit.log_pl = scan.value;
    return fit;
}

}  // namespace detail

// Per-segment maximization of the ridge log-partial likelihood. The objective
// separates across segments, so each segment is solved independently.
// Non-convergence is reported through the flag, not an exception.
inline std::vector<SegmentFit> fit_segments(const SurvivalDataset& data,
                                            const SegmentPartition& partition, double xi,
                                            const RidgeConfig& config = {},
                                            const std::optional<Eigen::VectorXd>& init = {}) {
    partition.validate(data.horizon());
    const int p = data.covariate_dim();
    std::vector<SegmentFit> fits;
    for (int j = 1; j <= partition.num_segments(); ++j) {
        double lo, hi;
        bool closed;
        detail::segment_bounds(data, partition, j, lo, hi, closed);
        Eigen::VectorXd start = init.value_or(Eigen::VectorXd::Zero(p));
        fits.push_back(detail::fit_one_segment(data, lo, hi, closed, xi, config, start));
    }
    return fits;
}

}  // namespace coxcp

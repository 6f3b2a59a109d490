#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coxcp/criteria.hpp"
#include "coxcp/errors.hpp"
#include "coxcp/math.hpp"
#include "coxcp/survival.hpp"

namespace coxcp {

enum class CovariateLaw { bernoulli_half, standard_normal };

// Piecewise-proportional-hazards truth with an exponential baseline:
// hazard lambda0 * ratio_j^z on segment j. With one change point, alpha
// places it where the baseline survival has dropped to 1 - alpha. Subjects
// are administratively censored at the horizon_quantile baseline quantile
// (1.0 means no censoring).
struct TruthSpec {
    int m_star = 0;
    std::vector<double> hazard_ratios{1.0};
    std::optional<double> alpha;
    std::vector<double> k_star;
    double baseline_rate = 1.0;
    CovariateLaw covariate_law = CovariateLaw::bernoulli_half;
    int target_events = 100;
    double horizon_quantile = 0.95;

    void validate() const {
        if (m_star < 0) throw DataError("m_star must be nonnegative");
        if (static_cast<int>(hazard_ratios.size()) != m_star + 1)
            throw DataError("need one hazard ratio per segment (m_star + 1)");
        for (double r : hazard_ratios)
            if (!(r > 0.0)) throw DataError("hazard ratios must be positive");
        for (int j = 0; j < m_star; ++j)
            if (hazard_ratios[static_cast<std::size_t>(j)] ==
                hazard_ratios[static_cast<std::size_t>(j) + 1])
                throw DataError("adjacent segments must have different hazard ratios");
        if (!(baseline_rate > 0.0)) throw DataError("baseline rate must be positive");
        if (!(horizon_quantile > 0.0 && horizon_quantile <= 1.0))
            throw DataError("horizon quantile must lie in (0, 1]");
        if (m_star >= 1) {
            if (alpha.has_value()) {
                if (m_star != 1) throw DataError("alpha placement needs m_star = 1");
                if (!(*alpha > 0.0 && *alpha < 1.0)) throw DataError("alpha must lie in (0,1)");
            } else if (static_cast<int>(k_star.size()) != m_star) {
                throw DataError("either alpha or an explicit k_star vector is required");
            }
        }
        const double T = censor_time();
        for (double k : change_points()) {
            if (!(k > 0.0)) throw DataError("true change points must be positive");
            if (!(k < T)) throw DataError("true change points must precede the censoring time");
        }
    }

    std::vector<double> change_points() const {
        if (m_star == 0) return {};
        if (alpha.has_value()) return {-std::log1p(-*alpha) / baseline_rate};
        return k_star;
    }

    double censor_time() const {
        if (horizon_quantile >= 1.0) return std::numeric_limits<double>::infinity();
        return -std::log1p(-horizon_quantile) / baseline_rate;
    }

    std::vector<Eigen::VectorXd> true_betas() const {
        std::vector<Eigen::VectorXd> betas;
        for (double r : hazard_ratios) {
            Eigen::VectorXd b(1);
            b[0] = std::log(r);
            betas.push_back(b);
        }
        return betas;
    }

    // cumulative hazard at t for covariate value z
    double cumulative_hazard(double t, double z) const {
        const auto cuts = change_points();
        double cum = 0.0;
        double lo = 0.0;
        for (int j = 0; j <= m_star; ++j) {
            const double hi = j < m_star ? cuts[static_cast<std::size_t>(j)]
                                         : std::numeric_limits<double>::infinity();
            const double rate =
                baseline_rate * std::pow(hazard_ratios[static_cast<std::size_t>(j)], z);
            if (t <= hi) return cum + rate * (t - lo);
            cum += rate * (hi - lo);
            lo = hi;
        }
        return cum;
    }

    double event_time_from_exponential(double e, double z) const {
        const auto cuts = change_points();
        double cum = 0.0;
        double lo = 0.0;
        for (int j = 0; j <= m_star; ++j) {
            const double hi = j < m_star ? cuts[static_cast<std::size_t>(j)]
                                         : std::numeric_limits<double>::infinity();
            const double rate =
                baseline_rate * std::pow(hazard_ratios[static_cast<std::size_t>(j)], z);
            const double seg = (hi - lo) * rate;
            if (e <= cum + seg || j == m_star) return lo + (e - cum) / rate;
            cum += seg;
            lo = hi;
        }
        return lo;  // unreachable
    }
};

// Table-3-style randomized truth: one change point at a uniformly drawn
// baseline survival level, with hazard-ratio jump 2^{u1 (psi + u2)}.
struct RandomTruthSpec {
    double psi = 1.0;
    double alpha_min = 0.1;
    double alpha_max = 0.9;
    TruthSpec base;  // m_star/hazard_ratios/alpha are overwritten per draw

    TruthSpec draw(Rng& rng) const {
        TruthSpec t = base;
        t.m_star = 1;
        t.alpha = alpha_min + (alpha_max - alpha_min) * rng.uniform01();
        t.k_star.clear();
        const double sign = rng.bernoulli_half() ? 1.0 : -1.0;
        const double jump = std::pow(2.0, sign * (psi + rng.uniform01()));
        const double base_ratio = base.hazard_ratios.empty() ? 1.0 : base.hazard_ratios.front();
        t.hazard_ratios = {base_ratio, base_ratio * jump};
        t.validate();
        return t;
    }
};

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master;
    std::uint64_t base = splitmix64(s);
    std::uint64_t t = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    return splitmix64(t);
}

// One draw from the truth: covariates i.i.d., event times by inverse
// transform of the piecewise cumulative hazard, administrative censoring.
inline SurvivalDataset generate_dataset(const TruthSpec& truth, int n, std::uint64_t seed) {
    truth.validate();
    if (n < 1) throw std::invalid_argument("n must be positive");
    Rng rng(seed);
    const double censor = truth.censor_time();
    std::vector<Subject> subjects;
    subjects.reserve(static_cast<std::size_t>(n));
    double max_time = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = truth.covariate_law == CovariateLaw::bernoulli_half
                             ? (rng.bernoulli_half() ? 1.0 : 0.0)
                             : rng.normal();
        const double y = truth.event_time_from_exponential(rng.exponential(), z);
        Subject s;
        s.covariates.resize(1);
        s.covariates[0] = z;
        if (y <= censor) {
            s.time = y;
            s.event = true;
        } else {
            s.time = censor;
            s.event = false;
        }
        if (!(s.time > 0.0)) s.time = std::numeric_limits<double>::min();
        max_time = std::max(max_time, s.time);
        subjects.push_back(std::move(s));
    }
    const double horizon = std::isfinite(censor) ? censor : max_time;
    return SurvivalDataset(std::move(subjects), horizon);
}

// Probability that a subject's event is observed before the censoring time.
inline double event_probability(const TruthSpec& truth) {
    truth.validate();
    const double T = truth.censor_time();
    if (!std::isfinite(T)) return 1.0;
    const auto p_event = [&](double z) { return -std::expm1(-truth.cumulative_hazard(T, z)); };
    if (truth.covariate_law == CovariateLaw::bernoulli_half)
        return 0.5 * (p_event(0.0) + p_event(1.0));
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
    return integrate(
        [&](double z) { return p_event(z) * inv_sqrt_2pi * std::exp(-0.5 * z * z); }, -10.0,
        10.0, 1e-10);
}

// Sample size that makes the expected event count hit the target; the data
// law itself stays untouched (no conditioning on the realized count).
inline int calibrate_n_for_events(const TruthSpec& truth, int target_events) {
    if (target_events < 10) throw std::invalid_argument("target event count must be at least 10");
    const double p = event_probability(truth);
    if (p < 1e-3) throw InfeasibleModelError("censoring is too heavy to reach the event target");
    return static_cast<int>(std::llround(target_events / p));
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

namespace detail {

inline MeanSe mean_se(const std::vector<double>& xs) {
    MeanSe out;
    CompensatedSum sum;
    for (double x : xs) sum.add(x);
    out.mean = sum.value() / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        CompensatedSum sq;
        for (double x : xs) sq.add((x - out.mean) * (x - out.mean));
        out.se = std::sqrt(sq.value() / (static_cast<double>(xs.size()) - 1.0) /
                           static_cast<double>(xs.size()));
    }
    return out;
}

// Slot-based parallel loop: replicate results land in preassigned slots, so
// the aggregate does not depend on thread scheduling.
inline void parallel_replicates(std::size_t n, const std::function<void(std::size_t)>& body) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (hw == 1 || n < 4) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(hw);
    const std::size_t chunk = (n + hw - 1) / hw;
    for (unsigned t = 0; t < hw; ++t) {
        const std::size_t b = t * chunk;
        if (b >= n) break;
        const std::size_t e = std::min(n, b + chunk);
        threads.emplace_back([&, t, b, e]() {
            try {
                for (std::size_t i = b; i < e; ++i) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace detail

// Monte Carlo estimate of the partial-likelihood risk
//   2 E_u [ l(beta*, k*; u) - l(beta_hat, k_hat; u) ]
// over fresh datasets u of size n drawn from the truth (xi = 0 evaluation).
inline MeanSe kl_risk(const TruthSpec& truth, const ChangePointModelFit& fit, int replicates,
                      int n, std::uint64_t seed) {
    truth.validate();
    if (replicates < 1) throw std::invalid_argument("need at least one replicate");
    SegmentPartition true_partition{truth.change_points()};
    const auto true_betas = truth.true_betas();
    std::vector<double> values(static_cast<std::size_t>(replicates));
    for (std::size_t r = 0; r < values.size(); ++r) {
        const SurvivalDataset u = generate_dataset(truth, n, derive_seed(seed, r));
        const double l_true = log_partial_likelihood(u, true_partition, true_betas, 0.0);
        const double l_fit = log_partial_likelihood(u, fit.partition, fit.betas, 0.0);
        values[r] = 2.0 * (l_true - l_fit);
    }
    return detail::mean_se(values);
}

struct CriterionCell {
    std::string criterion;
    std::vector<double> select_percent;  // index m = 0..m_max
    MeanSe kl;
};

struct ExperimentReport {
    std::string experiment;
    int replicates = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config_echo;
    // bias experiment
    MeanSe bias;
    // selection experiment
    int m_max = 0;
    std::vector<CriterionCell> cells;
    double mean_realized_events = 0.0;
};

// Paired-replicate estimate of the optimism of the maximized log-partial
// likelihood for the one-change-point model:
//   E [ l(fit on t; t) - l(fit on u; t) ],  u an independent copy of t.
// The change-point-aware criterion predicts 3m + p(m+1) for this quantity
// (twice it is the -2l penalty); the formal count predicts m + p(m+1).
inline ExperimentReport bias_experiment(const TruthSpec& truth, int replicates,
                                        std::uint64_t seed, const SearchConfig& config = {},
                                        const RidgeConfig& ridge = {}) {
    truth.validate();
    if (truth.m_star != 1) throw std::invalid_argument("bias experiment uses an m* = 1 truth");
    if (replicates < 2) throw std::invalid_argument("need at least two replicates");
    const int n = calibrate_n_for_events(truth, truth.target_events);
    std::vector<double> values(static_cast<std::size_t>(replicates));
    std::vector<double> events(static_cast<std::size_t>(replicates));
    detail::parallel_replicates(values.size(), [&](std::size_t r) {
        const SurvivalDataset t = generate_dataset(truth, n, derive_seed(seed, 2 * r));
        const SurvivalDataset u = generate_dataset(truth, n, derive_seed(seed, 2 * r + 1));
        ProfileSearcher search_t(t, 0.0, config, ridge);
        ProfileSearcher search_u(u, 0.0, config, ridge);
        const ChangePointModelFit fit_t = search_t.search(1);
        const ChangePointModelFit fit_u = search_u.search(1);
        const double l_cross = log_partial_likelihood(t, fit_u.partition, fit_u.betas, 0.0);
        values[r] = fit_t.log_pl - l_cross;
        events[r] = t.total_event_weight();
    });
    ExperimentReport report;
    report.experiment = "bias";
    report.replicates = replicates;
    report.seed = seed;
    report.bias = detail::mean_se(values);
    report.mean_realized_events = detail::mean_se(events).mean;
    return report;
}

namespace detail {

inline ExperimentReport selection_experiment_impl(
    const std::function<TruthSpec(std::size_t)>& truth_for, bool fixed_n, const TruthSpec& base,
    int m_max, const std::vector<CriterionKind>& criteria, int replicates, std::uint64_t seed,
    int kl_eval_replicates, const SearchConfig& config, const RidgeConfig& ridge) {
    if (replicates < 1) throw std::invalid_argument("need at least one replicate");
    if (m_max < 0) throw std::invalid_argument("m_max must be nonnegative");
    const int n_fixed = fixed_n ? calibrate_n_for_events(base, base.target_events) : 0;
    std::set<CriterionKind> kinds(criteria.begin(), criteria.end());

    const std::size_t R = static_cast<std::size_t>(replicates);
    std::vector<std::vector<int>> chosen(criteria.size(), std::vector<int>(R, 0));
    std::vector<std::vector<double>> kl(criteria.size(), std::vector<double>(R, 0.0));
    std::vector<double> events(R, 0.0);

    parallel_replicates(R, [&](std::size_t r) {
        const TruthSpec truth = truth_for(r);
        const int n = fixed_n ? n_fixed : calibrate_n_for_events(truth, truth.target_events);
        const SurvivalDataset data = generate_dataset(truth, n, derive_seed(seed, 3 * r));
        events[r] = data.total_event_weight();
        const auto reports = evaluate_models(data, m_max, 0.0, kinds, config, ridge);
        for (std::size_t c = 0; c < criteria.size(); ++c) {
            const CriterionReport* best = nullptr;
            for (const auto& rep : reports) {
                if (!best ||
                    criterion_of(rep, criteria[c]).value < criterion_of(*best, criteria[c]).value)
                    best = &rep;
            }
            chosen[c][r] = best->m;
            kl[c][r] = kl_risk(truth, best->fit, kl_eval_replicates, n,
                               derive_seed(seed, 3 * r + 1 + c))
                           .mean;
        }
    });

    ExperimentReport report;
    report.experiment = "selection";
    report.replicates = replicates;
    report.seed = seed;
    report.m_max = m_max;
    report.mean_realized_events = mean_se(events).mean;
    for (std::size_t c = 0; c < criteria.size(); ++c) {
        CriterionCell cell;
        cell.criterion = criterion_name(criteria[c]);
        cell.select_percent.assign(static_cast<std::size_t>(m_max) + 1, 0.0);
        for (int m : chosen[c]) cell.select_percent[static_cast<std::size_t>(m)] += 1.0;
        for (double& p : cell.select_percent) p *= 100.0 / replicates;
        cell.kl = mean_se(kl[c]);
        report.cells.push_back(std::move(cell));
    }
    return report;
}

}  // namespace detail

// Fixed-truth selection experiment: generate, rank m = 0..m_max per
// criterion, record the chosen m and the risk of the chosen fit.
inline ExperimentReport selection_experiment(const TruthSpec& truth, int m_max,
                                             const std::vector<CriterionKind>& criteria,
                                             int replicates, std::uint64_t seed,
                                             int kl_eval_replicates = 100,
                                             const SearchConfig& config = {},
                                             const RidgeConfig& ridge = {}) {
    truth.validate();
    return detail::selection_experiment_impl([&](std::size_t) { return truth; }, true, truth,
                                             m_max, criteria, replicates, seed,
                                             kl_eval_replicates, config, ridge);
}

// Randomized-truth variant: each replicate draws its own truth.
inline ExperimentReport selection_experiment(const RandomTruthSpec& random, int m_max,
                                             const std::vector<CriterionKind>& criteria,
                                             int replicates, std::uint64_t seed,
                                             int kl_eval_replicates = 100,
                                             const SearchConfig& config = {},
                                             const RidgeConfig& ridge = {}) {
    return detail::selection_experiment_impl(
        [&](std::size_t r) {
            Rng rng(derive_seed(seed, 0x7000000000000000ULL + r));
            return random.draw(rng);
        },
        false, random.base, m_max, criteria, replicates, seed, kl_eval_replicates, config,
        ridge);
}

}  // namespace coxcp

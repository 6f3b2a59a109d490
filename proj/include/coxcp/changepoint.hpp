#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "coxcp/errors.hpp"
#include "coxcp/partial_likelihood.hpp"
#include "coxcp/survival.hpp"

namespace coxcp {

enum class CandidateRule { event_times, midpoints };

struct SearchConfig {
    int min_events_per_segment = 2;  // at least p+1 for identifiability
    CandidateRule candidate_rule = CandidateRule::event_times;
    int exhaustive_limit = 30;  // max instance size the brute-force test oracle handles
    // Coefficients live in a compact set: segment fits whose sup-norm exceeds
    // this bound (quasi-separated segments) count as non-identified and get
    // the -inf profile cost.
    double beta_bound = 10.0;
};

struct SearchStats {
    int candidates = 0;
    int cost_evaluations = 0;
};

struct ChangePointModelFit {
    int m = 0;
    SegmentPartition partition;
    std::vector<Eigen::VectorXd> betas;
    std::vector<SegmentFit> segment_fits;
    double log_pl = 0.0;
    double xi = 0.0;
    SearchStats stats;
};

// Candidate cut locations. The profiled objective is a step function of the
// cut that only changes when the cut crosses an event time (a cut at an event
// time puts that event in the right-hand segment under the half-open
// convention), so distinct event times enumerate every achievable partition.
// Midpoints of consecutive distinct event times give the same partitions with
// cuts placed away from the data.
inline std::vector<double> candidate_grid(const SurvivalDataset& data, CandidateRule rule) {
    const std::vector<double> events = data.distinct_event_times();
    if (events.size() < 2) throw DataError("need at least two distinct event times");
    if (rule == CandidateRule::event_times) return events;
    std::vector<double> mids;
    mids.reserve(events.size() - 1);
    for (std::size_t i = 0; i + 1 < events.size(); ++i)
        mids.push_back(0.5 * (events[i] + events[i + 1]));
    return mids;
}

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// Memoizing profile searcher over one dataset. Cut index 0 is the interval
// start, indices 1..G are candidates, index G+1 is the follow-up horizon.
class ProfileSearcher {
public:
    ProfileSearcher(const SurvivalDataset& data, double xi, SearchConfig config = {},
                    RidgeConfig ridge = {})
        : data_(data), xi_(xi), config_(config), ridge_(ridge),
          candidates_(candidate_grid(data, config.candidate_rule)) {
        // identifiability floor: never fewer than p+1 events per segment
        config_.min_events_per_segment =
            std::max(config_.min_events_per_segment, data.covariate_dim() + 1);
        const std::size_t cuts = candidates_.size() + 2;
        memo_.assign(cuts * cuts, std::nullopt);
        // cumulative event weight strictly before each cut, for cheap counts
        event_weight_before_.assign(cuts, 0.0);
        for (std::size_t c = 1; c < cuts; ++c) {
            const double hi = cut_value(c);
            double w = 0.0;
            for (const auto& s : data_.subjects()) {
                if (!s.event) continue;
                if (s.time < hi || (c + 1 == cuts && s.time == hi)) w += s.weight;
            }
            event_weight_before_[c] = w;
        }
    }

    int num_candidates() const { return static_cast<int>(candidates_.size()); }
    const std::vector<double>& candidates() const { return candidates_; }
    std::size_t end_index() const { return candidates_.size() + 1; }

    double cut_value(std::size_t c) const {
        if (c == 0) return 0.0;
        if (c == end_index()) return data_.horizon();
        return candidates_[c - 1];
    }

    double event_weight_between(std::size_t l, std::size_t r) const {
        return event_weight_before_[r] - event_weight_before_[l];
    }

    // Maximized segment contribution on [cut_l, cut_r); -inf when the segment
    // has fewer events than required or its Newton fit does not converge.
    double segment_cost(std::size_t l, std::size_t r) {
        return cost_entry(l, r).value;
    }

    const SegmentFit& segment_fit(std::size_t l, std::size_t r) { return cost_entry(l, r).fit; }

    int cost_evaluations() const { return evaluations_; }

    // Profile maximization over all partitions with m cuts on the candidate
    // grid. The profiled objective is additive across segments, which makes
    // the suffix recursion below exact; ties break toward the smallest cut
    // vector in lexicographic order.
    ChangePointModelFit search(int m) {
        if (m < 0) throw std::invalid_argument("m must be nonnegative");
        const int G = num_candidates();
        if (m > G)
            throw InfeasibleModelError("more change points than candidate cut locations");
        const std::size_t end = end_index();

        ChangePointModelFit fit;
        fit.m = m;
        fit.xi = xi_;
        fit.stats.candidates = G;

        if (m == 0) {
            if (data_.total_event_weight() < config_.min_events_per_segment)
                throw InfeasibleModelError(
                    "fewer events than min_events_per_segment = " +
                    std::to_string(config_.min_events_per_segment));
            if (segment_cost(0, end) == neg_inf)
                throw InfeasibleModelError(
                    "full-interval fit did not converge inside the coefficient bound");
            finalize(fit, {});
            return fit;
        }

        // best[j][l]: best value splitting [cut_l, horizon) into j segments,
        // with choice[j][l] the smallest next cut attaining it.
        const int segs = m + 1;
        std::vector<std::vector<double>> best(static_cast<std::size_t>(segs) + 1,
                                              std::vector<double>(end + 1, neg_inf));
        std::vector<std::vector<std::size_t>> choice(static_cast<std::size_t>(segs) + 1,
                                                     std::vector<std::size_t>(end + 1, 0));
        for (std::size_t l = 0; l <= end; ++l)
            if (l < end) best[1][l] = feasible(l, end) ? segment_cost(l, end) : neg_inf;
        for (int j = 2; j <= segs; ++j) {
            // the j-segment split of [cut_l, T) needs j-1 more cuts after l
            for (std::size_t l = 0; l + static_cast<std::size_t>(j) <= end; ++l) {
                double best_val = neg_inf;
                std::size_t best_r = 0;
                for (std::size_t r = l + 1; r + static_cast<std::size_t>(j) - 1 <= end; ++r) {
                    if (best[j - 1][r] == neg_inf) continue;
                    if (!feasible(l, r)) continue;
                    const double v = segment_cost(l, r);
                    if (v == neg_inf) continue;
                    const double total = v + best[j - 1][r];
                    if (total > best_val) {
                        best_val = total;
                        best_r = r;
                    }
                }
                best[static_cast<std::size_t>(j)][l] = best_val;
                choice[static_cast<std::size_t>(j)][l] = best_r;
            }
        }
        if (best[static_cast<std::size_t>(segs)][0] == neg_inf)
            throw InfeasibleModelError(
                "no partition with " + std::to_string(m) + " change points satisfies "
                "min_events_per_segment = " + std::to_string(config_.min_events_per_segment));

        std::vector<std::size_t> cut_idx;
        std::size_t l = 0;
        for (int j = segs; j >= 2; --j) {
            l = choice[static_cast<std::size_t>(j)][l];
            cut_idx.push_back(l);
        }
        finalize(fit, cut_idx);
        return fit;
    }

private:
    struct CostEntry {
        double value = neg_inf;
        SegmentFit fit;
    };

    bool feasible(std::size_t l, std::size_t r) const {
        return event_weight_between(l, r) >= config_.min_events_per_segment;
    }

    const CostEntry& cost_entry(std::size_t l, std::size_t r) {
        if (l >= r || r > end_index()) throw std::invalid_argument("invalid cut pair");
        auto& slot = memo_[l * (end_index() + 1) + r];
        if (!slot) {
            ++evaluations_;
            CostEntry entry;
            if (feasible(l, r)) {
                RidgeConfig rc = ridge_;
                rc.xi = xi_;
                entry.fit = detail::fit_one_segment(data_, cut_value(l), cut_value(r),
                                                    r == end_index(), xi_, rc,
                                                    Eigen::VectorXd::Zero(data_.covariate_dim()));
                if (entry.fit.converged &&
                    entry.fit.beta.lpNorm<Eigen::Infinity>() <= config_.beta_bound)
                    entry.value = entry.fit.log_pl;
            } else {
                entry.fit.beta = Eigen::VectorXd::Zero(data_.covariate_dim());
            }
            slot = std::move(entry);
        }
        return *slot;
    }

    void finalize(ChangePointModelFit& fit, std::vector<std::size_t> cut_idx) {
        fit.partition.cuts.clear();
        for (std::size_t c : cut_idx) fit.partition.cuts.push_back(cut_value(c));
        std::vector<std::size_t> bounds{0};
        for (std::size_t c : cut_idx) bounds.push_back(c);
        bounds.push_back(end_index());
        fit.log_pl = 0.0;
        for (std::size_t j = 0; j + 1 < bounds.size(); ++j) {
            const SegmentFit& sf = segment_fit(bounds[j], bounds[j + 1]);
            fit.segment_fits.push_back(sf);
            fit.betas.push_back(sf.beta);
            fit.log_pl += sf.log_pl;
        }
        fit.stats.cost_evaluations = evaluations_;
    }

    const SurvivalDataset& data_;
    double xi_;
    SearchConfig config_;
    RidgeConfig ridge_;
    std::vector<double> candidates_;
    std::vector<std::optional<CostEntry>> memo_;
    std::vector<double> event_weight_before_;
    int evaluations_ = 0;
};

// One-off segment cost: maximized contribution of [a, b), or -inf.
inline double segment_cost(const SurvivalDataset& data, double a, double b, double xi,
                           const SearchConfig& config = {}, const RidgeConfig& ridge = {}) {
    if (!(a < b)) throw std::invalid_argument("segment requires a < b");
    const bool closed = (b == data.horizon());
    double weight = 0.0;
    for (const auto& s : data.subjects())
        if (s.event && s.time >= a && (s.time < b || (closed && s.time == b))) weight += s.weight;
    if (weight < std::max(config.min_events_per_segment, data.covariate_dim() + 1))
        return neg_inf;
    RidgeConfig rc = ridge;
    rc.xi = xi;
    SegmentFit fit = detail::fit_one_segment(data, a, b, b == data.horizon(), xi, rc,
                                             Eigen::VectorXd::Zero(data.covariate_dim()));
    if (!fit.converged || fit.beta.lpNorm<Eigen::Infinity>() > config.beta_bound)
        return neg_inf;
    return fit.log_pl;
}

// One-off profile search; rank_models keeps a ProfileSearcher alive instead
// so the cost memo is shared across m.
inline ChangePointModelFit search(const SurvivalDataset& data, int m, double xi,
                                  const SearchConfig& config = {}, const RidgeConfig& ridge = {}) {
    ProfileSearcher searcher(data, xi, config, ridge);
    return searcher.search(m);
}

}  // namespace coxcp

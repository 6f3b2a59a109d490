#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "coxcp/errors.hpp"

namespace coxcp {

// One right-censored observation. `weight` is an integer replication count:
// every sum over subjects multiplies by it, so a weight-2 row behaves exactly
// like two identical rows.
struct Subject {
    double time = 0.0;
    bool event = false;
    Eigen::VectorXd covariates;
    int weight = 1;
};

// Immutable survival sample, sorted ascending by time, with follow-up horizon
// `horizon` >= every observed time. Operations on it are pure functions.
class SurvivalDataset {
public:
    SurvivalDataset(std::vector<Subject> subjects, double horizon)
        : subjects_(std::move(subjects)), horizon_(horizon) {
        if (subjects_.empty()) throw DataError("dataset is empty");
        std::stable_sort(subjects_.begin(), subjects_.end(),
                         [](const Subject& a, const Subject& b) { return a.time < b.time; });
        p_ = static_cast<int>(subjects_.front().covariates.size());
        bool any_event = false;
        double prev_event_time = -1.0;
        for (std::size_t i = 0; i < subjects_.size(); ++i) {
            const Subject& s = subjects_[i];
            if (!(s.time > 0.0))
                throw DataError("subject " + std::to_string(i + 1) + ": time must be positive");
            if (s.weight < 1)
                throw DataError("subject " + std::to_string(i + 1) + ": weight must be a positive integer");
            if (static_cast<int>(s.covariates.size()) != p_)
                throw DataError("subject " + std::to_string(i + 1) + ": covariate length differs");
            if (s.event) {
                if (s.time == prev_event_time) has_tied_event_times_ = true;
                prev_event_time = s.time;
                any_event = true;
            }
        }
        if (!any_event) throw DataError("dataset has no events");
        if (!(horizon_ >= subjects_.back().time))
            throw DataError("follow-up horizon is smaller than the largest observed time");
    }

    const std::vector<Subject>& subjects() const { return subjects_; }
    std::size_t size() const { return subjects_.size(); }
    int covariate_dim() const { return p_; }
    double horizon() const { return horizon_; }
    bool has_tied_event_times() const { return has_tied_event_times_; }

    // total replication weight (the effective n in all 1/n normalizations)
    double total_weight() const {
        double w = 0.0;
        for (const auto& s : subjects_) w += s.weight;
        return w;
    }

    double total_event_weight() const {
        double w = 0.0;
        for (const auto& s : subjects_)
            if (s.event) w += s.weight;
        return w;
    }

    // index of the first subject with time >= t (subjects at risk form the suffix from here)
    std::size_t risk_begin(double t) const {
        auto it = std::lower_bound(subjects_.begin(), subjects_.end(), t,
                                   [](const Subject& s, double v) { return s.time < v; });
        return static_cast<std::size_t>(it - subjects_.begin());
    }

    std::vector<double> distinct_event_times() const {
        std::vector<double> out;
        for (const auto& s : subjects_)
            if (s.event && (out.empty() || out.back() != s.time)) out.push_back(s.time);
        return out;
    }

private:
    std::vector<Subject> subjects_;
    double horizon_;
    int p_ = 0;
    bool has_tied_event_times_ = false;
};

// Strictly increasing interior cut points 0 < k1 < ... < km < horizon.
// Segment j (1-based) is [k_{j-1}, k_j) with k_0 = 0 and k_{m+1} = horizon;
// an observation exactly at the horizon belongs to the last segment so that
// the segments partition every event.
struct SegmentPartition {
    std::vector<double> cuts;

    int num_segments() const { return static_cast<int>(cuts.size()) + 1; }
    int num_changepoints() const { return static_cast<int>(cuts.size()); }

    void validate(double horizon) const {
        double prev = 0.0;
        for (double c : cuts) {
            if (!(c > prev)) throw DataError("change points must be strictly increasing and positive");
            if (!(c < horizon)) throw DataError("change points must lie inside the follow-up horizon");
            prev = c;
        }
    }

    double lower(int j) const { return j <= 1 ? 0.0 : cuts[static_cast<std::size_t>(j) - 2]; }
    double upper(int j, double horizon) const {
        return j >= num_segments() ? horizon : cuts[static_cast<std::size_t>(j) - 1];
    }

    // 1-based segment index of time t
    int segment_of(double t, double horizon) const {
        if (t >= horizon) return num_segments();
        int j = 1;
        for (double c : cuts) {
            if (t < c) break;
            ++j;
        }
        return j;
    }
};

// Subjects still under observation at time t: {i : t_i >= t}.
// (The >= convention keeps a subject at risk at its own event time.)
inline std::vector<std::size_t> risk_set(const SurvivalDataset& data, double t) {
    if (!(t > 0.0)) throw std::domain_error("risk_set requires t > 0");
    std::vector<std::size_t> idx;
    for (std::size_t i = data.risk_begin(t); i < data.size(); ++i) idx.push_back(i);
    return idx;
}

// Events falling in segment j of the partition.
inline std::vector<std::size_t> event_set(const SurvivalDataset& data,
                                          const SegmentPartition& partition, int j) {
    if (j < 1 || j > partition.num_segments())
        throw std::domain_error("segment index out of range");
    partition.validate(data.horizon());
    const double lo = partition.lower(j);
    const double hi = partition.upper(j, data.horizon());
    const bool last = (j == partition.num_segments());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Subject& s = data.subjects()[i];
        if (!s.event) continue;
        if (s.time >= lo && (s.time < hi || (last && s.time == hi))) idx.push_back(i);
    }
    return idx;
}

namespace detail {

// Weighted risk-set moments of exp(beta'z) at time t:
//   s0 = sum w e^eta, s1 = sum w z e^eta, s2 = sum w zz' e^eta,
// accumulated with a common shift for overflow control.
struct RiskMoments {
    double shift = 0.0;
    double s0 = 0.0;
    Eigen::VectorXd s1;
    Eigen::MatrixXd s2;
};

inline RiskMoments risk_moments(const SurvivalDataset& data, double t,
                                const Eigen::VectorXd& beta, bool need_second) {
    const int p = data.covariate_dim();
    RiskMoments m;
    m.s1 = Eigen::VectorXd::Zero(p);
    if (need_second) m.s2 = Eigen::MatrixXd::Zero(p, p);
    const std::size_t begin = data.risk_begin(t);
    if (begin >= data.size()) return m;
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = begin; i < data.size(); ++i)
        shift = std::max(shift, beta.dot(data.subjects()[i].covariates));
    m.shift = shift;
    for (std::size_t i = begin; i < data.size(); ++i) {
        const Subject& s = data.subjects()[i];
        const double e = s.weight * std::exp(beta.dot(s.covariates) - shift);
        m.s0 += e;
        m.s1 += e * s.covariates;
        if (need_second) m.s2 += e * (s.covariates * s.covariates.transpose());
    }
    return m;
}

}  // namespace detail

// Risk-set mean of the covariates under the exp(beta'z) weighting.
inline Eigen::VectorXd covariate_mean(const SurvivalDataset& data, double t,
                                      const Eigen::VectorXd& beta) {
    const auto m = detail::risk_moments(data, t, beta, false);
    if (m.s0 <= 0.0) throw std::domain_error("empty risk set");
    return m.s1 / m.s0;
}

// Risk-set second moment of the covariates under the same weighting; the
// difference second_moment - mean*mean' is a covariance and hence PSD.
inline Eigen::MatrixXd covariate_second_moment(const SurvivalDataset& data, double t,
                                               const Eigen::VectorXd& beta) {
    const auto m = detail::risk_moments(data, t, beta, true);
    if (m.s0 <= 0.0) throw std::domain_error("empty risk set");
    return m.s2 / m.s0;
}

struct KaplanMeierPoint {
    double time;
    double survival;
};

// Product-limit estimate per group; weights count as replicates. Curves start
// at (0,1) and drop only at event times.
inline std::map<int, std::vector<KaplanMeierPoint>> kaplan_meier(
    const SurvivalDataset& data, const std::vector<int>& group_labels) {
    if (group_labels.size() != data.size())
        throw DataError("group label count differs from subject count");
    std::map<int, std::vector<KaplanMeierPoint>> curves;
    std::map<int, double> at_risk;
    for (std::size_t i = 0; i < data.size(); ++i)
        at_risk[group_labels[i]] += data.subjects()[i].weight;
    for (auto& [g, n] : at_risk) curves[g].push_back({0.0, 1.0});
    std::map<int, double> surv;
    for (auto& [g, n] : at_risk) surv[g] = 1.0;
    // walk time groups (subjects are sorted)
    std::size_t i = 0;
    while (i < data.size()) {
        const double t = data.subjects()[i].time;
        std::map<int, double> deaths, removed;
        for (; i < data.size() && data.subjects()[i].time == t; ++i) {
            const int g = group_labels[i];
            const double w = data.subjects()[i].weight;
            removed[g] += w;
            if (data.subjects()[i].event) deaths[g] += w;
        }
        for (auto& [g, d] : deaths) {
            surv[g] *= 1.0 - d / at_risk[g];
            curves[g].push_back({t, surv[g]});
        }
        for (auto& [g, r] : removed) at_risk[g] -= r;
    }
    return curves;
}

// --- CSV ingestion -----------------------------------------------------------
//
// Expected header: time,event,<covariate names...>[,weight]; `event` in {0,1};
// positive times; dot decimal separator. Errors carry row/column diagnostics.

struct CsvData {
    SurvivalDataset dataset;
    std::vector<std::string> covariate_names;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline double parse_number(const std::string& s, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("row " + std::to_string(row) + ", column '" + col +
                        "': cannot parse value '" + s + "'");
    }
}

}  // namespace detail

inline CsvData read_survival_csv(std::istream& in, std::optional<double> horizon = {}) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "time" || header[1] != "event")
        throw DataError("CSV header must be time,event,<covariates...>[,weight]");
    const bool has_weight = header.back() == "weight";
    const std::size_t p = header.size() - 2 - (has_weight ? 1 : 0);
    if (p == 0) throw DataError("CSV has no covariate columns");
    std::vector<std::string> names(header.begin() + 2, header.end() - (has_weight ? 1 : 0));

    std::vector<Subject> subjects;
    std::size_t row = 1;
    double max_time = 0.0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw DataError("row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        Subject s;
        s.time = detail::parse_number(fields[0], row, "time");
        if (!(s.time > 0.0))
            throw DataError("row " + std::to_string(row) + ", column 'time': must be positive");
        const double ev = detail::parse_number(fields[1], row, "event");
        if (ev != 0.0 && ev != 1.0)
            throw DataError("row " + std::to_string(row) + ", column 'event': must be 0 or 1");
        s.event = ev == 1.0;
        s.covariates.resize(static_cast<Eigen::Index>(p));
        for (std::size_t c = 0; c < p; ++c)
            s.covariates[static_cast<Eigen::Index>(c)] =
                detail::parse_number(fields[2 + c], row, names[c]);
        if (has_weight) {
            const double w = detail::parse_number(fields.back(), row, "weight");
            if (w < 1.0 || w != std::floor(w))
                throw DataError("row " + std::to_string(row) +
                                ", column 'weight': must be a positive integer");
            s.weight = static_cast<int>(w);
        }
        max_time = std::max(max_time, s.time);
        subjects.push_back(std::move(s));
    }
    if (subjects.empty()) throw DataError("CSV has no data rows");
    return CsvData{SurvivalDataset(std::move(subjects), horizon.value_or(max_time)), names};
}

inline CsvData read_survival_csv_file(const std::string& path, std::optional<double> horizon = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    return read_survival_csv(in, horizon);
}

}  // namespace coxcp

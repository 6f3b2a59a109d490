#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coxcp/errors.hpp"
#include "coxcp/simulation.hpp"
#include "coxcp/version.hpp"

namespace coxcp {

// Key-value experiment recipe (one `key = value` per line, '#' comments).
// Unknown keys are rejected so that typos cannot silently change a run.
struct SimulationConfig {
    std::string experiment;  // "bias" or "selection"
    bool random_truth = false;
    TruthSpec truth;
    RandomTruthSpec random;
    int replicates = 100;
    std::uint64_t seed = 1;
    int m_max = 3;
    std::vector<CriterionKind> criteria{CriterionKind::aic_naive, CriterionKind::aic};
    int kl_eval_replicates = 100;
    int min_events_per_segment = 2;
    double beta_bound = 10.0;
    std::string output = "report";
    std::map<std::string, std::string> echo;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double config_number(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw DataError("config: cannot parse number for '" + key + "': " + value);
    }
}

inline std::vector<double> config_numbers(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(config_number(key, trim(item)));
    if (out.empty()) throw DataError("config: empty list for '" + key + "'");
    return out;
}

inline CriterionKind parse_criterion(const std::string& name) {
    if (name == "aic") return CriterionKind::aic;
    if (name == "naive" || name == "aic_naive") return CriterionKind::aic_naive;
    if (name == "aic_ridge") return CriterionKind::aic_ridge;
    if (name == "tic") return CriterionKind::tic;
    throw DataError("unknown criterion '" + name + "'");
}

}  // namespace detail

inline SimulationConfig parse_simulation_config(std::istream& in) {
    SimulationConfig cfg;
    bool saw_criteria = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        cfg.echo[key] = value;
        if (key == "experiment") {
            if (value != "bias" && value != "selection")
                throw DataError("config: experiment must be 'bias' or 'selection'");
            cfg.experiment = value;
        } else if (key == "random_truth") {
            cfg.random_truth = (value == "true" || value == "1");
        } else if (key == "m_star") {
            cfg.truth.m_star = static_cast<int>(detail::config_number(key, value));
        } else if (key == "hazard_ratios") {
            cfg.truth.hazard_ratios = detail::config_numbers(key, value);
        } else if (key == "alpha") {
            cfg.truth.alpha = detail::config_number(key, value);
        } else if (key == "k_star") {
            cfg.truth.k_star = detail::config_numbers(key, value);
        } else if (key == "baseline_rate") {
            cfg.truth.baseline_rate = detail::config_number(key, value);
        } else if (key == "covariate_law") {
            if (value == "bernoulli_half")
                cfg.truth.covariate_law = CovariateLaw::bernoulli_half;
            else if (value == "standard_normal")
                cfg.truth.covariate_law = CovariateLaw::standard_normal;
            else
                throw DataError("config: unknown covariate law '" + value + "'");
        } else if (key == "target_events") {
            cfg.truth.target_events = static_cast<int>(detail::config_number(key, value));
        } else if (key == "horizon_quantile") {
            cfg.truth.horizon_quantile = detail::config_number(key, value);
        } else if (key == "psi") {
            cfg.random.psi = detail::config_number(key, value);
        } else if (key == "alpha_range") {
            const auto range = detail::config_numbers(key, value);
            if (range.size() != 2) throw DataError("config: alpha_range needs two values");
            cfg.random.alpha_min = range[0];
            cfg.random.alpha_max = range[1];
        } else if (key == "replicates") {
            cfg.replicates = static_cast<int>(detail::config_number(key, value));
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(detail::config_number(key, value));
        } else if (key == "m_max") {
            cfg.m_max = static_cast<int>(detail::config_number(key, value));
        } else if (key == "kl_eval_replicates") {
            cfg.kl_eval_replicates = static_cast<int>(detail::config_number(key, value));
        } else if (key == "min_events_per_segment") {
            cfg.min_events_per_segment = static_cast<int>(detail::config_number(key, value));
        } else if (key == "beta_bound") {
            cfg.beta_bound = detail::config_number(key, value);
        } else if (key == "criteria") {
            cfg.criteria.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ','))
                cfg.criteria.push_back(detail::parse_criterion(detail::trim(item)));
            saw_criteria = true;
        } else if (key == "output") {
            cfg.output = value;
        } else {
            throw DataError("config: unknown key '" + key + "'");
        }
    }
    if (cfg.experiment.empty()) throw DataError("config: missing 'experiment'");
    if (cfg.experiment == "selection" && !saw_criteria && cfg.criteria.empty())
        throw DataError("config: selection experiment needs a criteria list");
    cfg.random.base = cfg.truth;
    return cfg;
}

inline SimulationConfig parse_simulation_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    return parse_simulation_config(in);
}

inline ExperimentReport run_experiment(const SimulationConfig& cfg) {
    SearchConfig search_cfg;
    search_cfg.min_events_per_segment = cfg.min_events_per_segment;
    search_cfg.beta_bound = cfg.beta_bound;
    ExperimentReport report;
    if (cfg.experiment == "bias") {
        report = bias_experiment(cfg.truth, cfg.replicates, cfg.seed, search_cfg);
    } else if (cfg.random_truth) {
        report = selection_experiment(cfg.random, cfg.m_max, cfg.criteria, cfg.replicates,
                                      cfg.seed, cfg.kl_eval_replicates, search_cfg);
    } else {
        report = selection_experiment(cfg.truth, cfg.m_max, cfg.criteria, cfg.replicates,
                                      cfg.seed, cfg.kl_eval_replicates, search_cfg);
    }
    report.config_echo = cfg.echo;
    return report;
}

inline nlohmann::json experiment_report_json(const ExperimentReport& report) {
    nlohmann::json j;
    j["tool"] = "coxcp";
    j["version"] = version;
    j["experiment"] = report.experiment;
    j["seed"] = report.seed;
    j["replicates"] = report.replicates;
    j["config"] = report.config_echo;
    j["mean_realized_events"] = report.mean_realized_events;
    if (report.experiment == "bias") {
        j["bias"] = {{"mean", report.bias.mean}, {"se", report.bias.se}};
    } else {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& cell : report.cells) {
            nlohmann::json c;
            c["criterion"] = cell.criterion;
            c["kl_mean"] = cell.kl.mean;
            c["kl_se"] = cell.kl.se;
            c["select_percent"] = cell.select_percent;
            cells.push_back(c);
        }
        j["cells"] = cells;
        j["m_max"] = report.m_max;
    }
    return j;
}

inline std::string experiment_report_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "# coxcp " << version << "\n";
    out << "# seed = " << report.seed << "\n";
    for (const auto& [k, v] : report.config_echo) out << "# " << k << " = " << v << "\n";
    out.precision(17);
    if (report.experiment == "bias") {
        out << "statistic,mean,se,replicates,mean_events\n";
        out << "bias," << report.bias.mean << "," << report.bias.se << "," << report.replicates
            << "," << report.mean_realized_events << "\n";
    } else {
        out << "criterion,kl_mean,kl_se";
        for (int m = 0; m <= report.m_max; ++m) out << ",pct_m" << m;
        out << "\n";
        for (const auto& cell : report.cells) {
            out << cell.criterion << "," << cell.kl.mean << "," << cell.kl.se;
            for (double p : cell.select_percent) out << "," << p;
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace coxcp

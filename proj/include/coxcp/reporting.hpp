#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "coxcp/criteria.hpp"
#include "coxcp/version.hpp"

namespace coxcp {

// One JSON object per fitted m; each computed criterion carries its value and
// the split of its penalty into the change-point and regression parts.
inline nlohmann::json model_report_json(const CriterionReport& report) {
    nlohmann::json j;
    j["m"] = report.m;
    j["k_hat"] = report.fit.partition.cuts;
    nlohmann::json betas = nlohmann::json::array();
    for (const auto& b : report.fit.betas)
        betas.push_back(std::vector<double>(b.data(), b.data() + b.size()));
    j["beta_hat"] = betas;
    j["log_pl"] = report.fit.log_pl;
    j["xi"] = report.fit.xi;
    nlohmann::json crits;
    const auto add = [&](const char* name, const std::optional<CriterionValue>& v) {
        if (!v) return;
        crits[name] = {{"criterion", v->value},
                       {"penalty_changepoint", v->penalty_changepoint},
                       {"penalty_regression", v->penalty_regression}};
    };
    add("aic", report.aic);
    add("aic_naive", report.aic_naive);
    add("aic_ridge", report.aic_ridge);
    add("tic", report.tic);
    j["criteria"] = crits;
    return j;
}

inline nlohmann::json model_reports_json(const std::vector<CriterionReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(model_report_json(r));
    return arr;
}

}  // namespace coxcp

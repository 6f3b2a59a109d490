// coxcp: change-point Cox model fitting, model selection by information
// criteria, simulation experiments, and the Brownian-motion penalty gate.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coxcp/bm_limit.hpp"
#include "coxcp/criteria.hpp"
#include "coxcp/errors.hpp"
#include "coxcp/experiment_io.hpp"
#include "coxcp/reporting.hpp"
#include "coxcp/survival.hpp"
#include "coxcp/version.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_data = 2;
constexpr int exit_infeasible = 3;
constexpr int exit_contract = 4;
constexpr int exit_oracle = 5;

struct CommonOpts {
    std::uint64_t seed = 1;
    std::string output;
    std::string format = "json";
};

nlohmann::json run_header(const std::string& command, const nlohmann::json& config,
                          std::uint64_t seed) {
    nlohmann::json j;
    j["tool"] = "coxcp";
    j["version"] = coxcp::version;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    return j;
}

void emit(const nlohmann::json& doc, const CommonOpts& opts) {
    const std::string text = doc.dump(2) + "\n";
    if (opts.output.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(opts.output);
        if (!out) throw coxcp::DataError("cannot write output file: " + opts.output);
        out << text;
        std::cout << "wrote " << opts.output << "\n";
    }
}

void emit_text(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(path);
        if (!out) throw coxcp::DataError("cannot write output file: " + path);
        out << text;
        std::cout << "wrote " << path << "\n";
    }
}

std::vector<coxcp::CriterionKind> parse_criteria_list(const std::string& csv) {
    std::vector<coxcp::CriterionKind> kinds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        kinds.push_back(coxcp::detail::parse_criterion(coxcp::detail::trim(item)));
    if (kinds.empty()) throw coxcp::DataError("empty criteria list");
    return kinds;
}

coxcp::CriterionReport make_report(const coxcp::SurvivalDataset& data,
                                   coxcp::ChangePointModelFit fit,
                                   const std::vector<coxcp::CriterionKind>& kinds) {
    coxcp::CriterionReport r;
    r.m = fit.m;
    r.fit = std::move(fit);
    for (auto kind : kinds) {
        switch (kind) {
            case coxcp::CriterionKind::aic: r.aic = coxcp::aic(r.fit); break;
            case coxcp::CriterionKind::aic_naive: r.aic_naive = coxcp::aic_naive(r.fit); break;
            case coxcp::CriterionKind::aic_ridge:
                r.aic_ridge = coxcp::aic_ridge(r.fit, coxcp::plugin_matrices(data, r.fit));
                break;
            case coxcp::CriterionKind::tic: r.tic = coxcp::tic(data, r.fit); break;
        }
    }
    return r;
}

int cmd_fit(const std::string& csv_path, int m, double xi, int min_events,
            const std::string& criterion, const CommonOpts& opts) {
    const auto csv = coxcp::read_survival_csv_file(csv_path);
    coxcp::SearchConfig config;
    config.min_events_per_segment =
        min_events > 0 ? min_events : csv.dataset.covariate_dim() + 1;
    const auto kind = coxcp::detail::parse_criterion(criterion);
    if (kind == coxcp::CriterionKind::tic && xi != 0.0)
        throw coxcp::ContractError("tic is defined for xi = 0 only");
    auto fit = coxcp::search(csv.dataset, m, xi, config);
    const auto report = make_report(csv.dataset, std::move(fit), {kind});

    nlohmann::json config_echo{{"csv", csv_path},       {"m", m},
                               {"xi", xi},              {"min_events", config.min_events_per_segment},
                               {"criterion", criterion}, {"format", opts.format}};
    nlohmann::json doc = run_header("fit", config_echo, opts.seed);
    doc["model"] = coxcp::model_report_json(report);
    if (opts.format == "csv") {
        std::ostringstream out;
        out << "# coxcp " << coxcp::version << " fit seed=" << opts.seed << "\n";
        out << "# " << config_echo.dump() << "\n";
        out.precision(17);
        out << "m,k_hat,log_pl,criterion,value,penalty_changepoint,penalty_regression\n";
        const auto& v = coxcp::criterion_of(report, kind);
        out << report.m << ",\"";
        for (std::size_t i = 0; i < report.fit.partition.cuts.size(); ++i)
            out << (i ? ";" : "") << report.fit.partition.cuts[i];
        out << "\"," << report.fit.log_pl << "," << criterion << "," << v.value << ","
            << v.penalty_changepoint << "," << v.penalty_regression << "\n";
        emit_text(out.str(), opts.output);
    } else {
        emit(doc, opts);
    }
    // human summary
    std::cout.precision(10);
    std::cout << "m = " << report.m << "  log_pl = " << report.fit.log_pl << "\n";
    for (std::size_t j = 0; j < report.fit.betas.size(); ++j) {
        std::cout << "segment " << j + 1 << ": beta =";
        for (Eigen::Index c = 0; c < report.fit.betas[j].size(); ++c)
            std::cout << " " << report.fit.betas[j][c];
        if (j < report.fit.partition.cuts.size())
            std::cout << "   cut at " << report.fit.partition.cuts[j];
        std::cout << "\n";
    }
    const auto& v = coxcp::criterion_of(report, kind);
    std::cout << criterion << " = " << v.value << "  (penalty: changepoint "
              << v.penalty_changepoint << " + regression " << v.penalty_regression << ")\n";
    return exit_ok;
}

int cmd_select(const std::string& csv_path, int max_m, double xi, const std::string& criteria,
               int min_events, const CommonOpts& opts) {
    const auto csv = coxcp::read_survival_csv_file(csv_path);
    coxcp::SearchConfig config;
    config.min_events_per_segment =
        min_events > 0 ? min_events : csv.dataset.covariate_dim() + 1;
    const auto kinds = parse_criteria_list(criteria);
    for (auto kind : kinds)
        if ((kind == coxcp::CriterionKind::tic || kind == coxcp::CriterionKind::aic ||
             kind == coxcp::CriterionKind::aic_naive) &&
            xi != 0.0)
            throw coxcp::ContractError(coxcp::criterion_name(kind) +
                                       " is defined for xi = 0 only; use aic_ridge");

    coxcp::ProfileSearcher searcher(csv.dataset, xi, config);
    std::vector<coxcp::CriterionReport> reports;
    for (int m = 0; m <= max_m; ++m)
        reports.push_back(make_report(csv.dataset, searcher.search(m), kinds));

    nlohmann::json config_echo{{"csv", csv_path},     {"max_m", max_m},
                               {"xi", xi},            {"criteria", criteria},
                               {"min_events", config.min_events_per_segment},
                               {"format", opts.format}};
    nlohmann::json doc = run_header("select", config_echo, opts.seed);
    doc["models"] = coxcp::model_reports_json(reports);
    nlohmann::json best;
    for (auto kind : kinds) {
        int best_m = 0;
        double best_v = std::numeric_limits<double>::infinity();
        for (const auto& r : reports) {
            const double v = coxcp::criterion_of(r, kind).value;
            if (v < best_v) {
                best_v = v;
                best_m = r.m;
            }
        }
        best[coxcp::criterion_name(kind)] = best_m;
    }
    doc["selected_m"] = best;

    if (opts.format == "csv") {
        std::ostringstream out;
        out << "# coxcp " << coxcp::version << " select seed=" << opts.seed << "\n";
        out << "# " << config_echo.dump() << "\n";
        out.precision(17);
        out << "m,k_hat,log_pl";
        for (auto kind : kinds) out << "," << coxcp::criterion_name(kind);
        for (auto kind : kinds) out << ",best_" << coxcp::criterion_name(kind);
        out << "\n";
        for (const auto& r : reports) {
            out << r.m << ",\"";
            for (std::size_t i = 0; i < r.fit.partition.cuts.size(); ++i)
                out << (i ? ";" : "") << r.fit.partition.cuts[i];
            out << "\"," << r.fit.log_pl;
            for (auto kind : kinds) out << "," << coxcp::criterion_of(r, kind).value;
            for (auto kind : kinds)
                out << "," << (best[coxcp::criterion_name(kind)] == r.m ? 1 : 0);
            out << "\n";
        }
        emit_text(out.str(), opts.output);
    } else {
        emit(doc, opts);
    }

    std::cout.precision(10);
    std::cout << " m | log_pl";
    for (auto kind : kinds) std::cout << " | " << coxcp::criterion_name(kind);
    std::cout << "\n";
    for (const auto& r : reports) {
        std::cout << " " << r.m << " | " << r.fit.log_pl;
        for (auto kind : kinds) {
            std::cout << " | " << coxcp::criterion_of(r, kind).value;
            if (best[coxcp::criterion_name(kind)] == r.m) std::cout << "*";
        }
        std::cout << "\n";
    }
    return exit_ok;
}

int cmd_simulate(const std::string& config_path, const CommonOpts& opts) {
    auto cfg = coxcp::parse_simulation_config_file(config_path);
    if (!opts.output.empty()) cfg.output = opts.output;
    const auto report = coxcp::run_experiment(cfg);
    nlohmann::json doc = experiment_report_json(report);
    {
        std::ofstream out(cfg.output + ".json");
        if (!out) throw coxcp::DataError("cannot write " + cfg.output + ".json");
        out << doc.dump(2) << "\n";
    }
    {
        std::ofstream out(cfg.output + ".csv");
        if (!out) throw coxcp::DataError("cannot write " + cfg.output + ".csv");
        out << coxcp::experiment_report_csv(report);
    }
    std::cout << "wrote " << cfg.output << ".json and " << cfg.output << ".csv\n";
    if (report.experiment == "bias") {
        std::cout << "bias mean = " << report.bias.mean << " (se " << report.bias.se << ")\n";
    } else {
        for (const auto& cell : report.cells) {
            std::cout << cell.criterion << ": K-L " << cell.kl.mean << ", select %";
            for (double p : cell.select_percent) std::cout << " " << p;
            std::cout << "\n";
        }
    }
    return exit_ok;
}

int cmd_verify_bias(const std::string& spec_csv, const std::string& matrices_path, long paths,
                    std::optional<double> two_c_override, const CommonOpts& opts) {
    coxcp::DriftedBmSpec spec;
    std::optional<double> two_c;
    nlohmann::json config_echo{{"paths", paths}};
    if (!matrices_path.empty()) {
        std::ifstream in(matrices_path);
        if (!in) throw coxcp::DataError("cannot open matrices file: " + matrices_path);
        nlohmann::json j;
        in >> j;
        const auto mat = [&](const nlohmann::json& rows) {
            Eigen::MatrixXd m(rows.size(), rows[0].size());
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
            return m;
        };
        const Eigen::MatrixXd a_j = mat(j.at("score_moment")[0]);
        const Eigen::MatrixXd a_j1 = mat(j.at("score_moment")[1]);
        const Eigen::MatrixXd b_j = mat(j.at("information")[0]);
        const Eigen::MatrixXd b_j1 = mat(j.at("information")[1]);
        const std::vector<double> d = j.at("delta");
        Eigen::VectorXd delta(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) delta[i] = d[i];
        spec = coxcp::spec_from_matrices(a_j, a_j1, b_j, b_j1, delta);
        const auto c = coxcp::changepoint_penalty_constant(a_j, a_j1, b_j, b_j1, delta);
        two_c = 2.0 * c.value;
        config_echo["from_matrices"] = matrices_path;
    } else {
        std::vector<double> v;
        std::stringstream ss(spec_csv);
        std::string item;
        while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
        if (v.size() != 4)
            throw coxcp::DataError("--spec needs tau1,tau2,sigma1,sigma2");
        spec = coxcp::DriftedBmSpec{v[0], v[1], v[2], v[3]};
        config_echo["spec"] = spec_csv;
    }
    if (two_c_override) {
        two_c = two_c_override;
        config_echo["two_c"] = *two_c_override;
    }
    spec.validate();
    coxcp::BmSimConfig sim;
    sim.paths = paths;
    sim.seed = opts.seed;
    const auto v = coxcp::verify_bias_constants(spec, sim, two_c);

    std::cout.precision(10);
    std::cout << "closed-form  E sup V            = " << v.closed_form << "\n";
    std::cout << "quadrature   E{-V at copy argmax} = " << v.quadrature << "\n";
    std::cout << "monte carlo  E sup V            = " << v.sim.mean_sup << "  (se "
              << v.sim.se_sup << ")\n";
    std::cout << "monte carlo  E{-V at copy argmax} = " << v.sim.mean_depth_at_copy_argmax
              << "  (se " << v.sim.se_depth << ")\n";
    if (v.has_two_c) {
        std::cout << "matrices     2*C                = " << v.two_c << "\n";
        std::cout << "monte carlo  sum                = "
                  << v.sim.mean_sup + v.sim.mean_depth_at_copy_argmax << "\n";
    }
    std::cout << (v.agree ? "AGREE within 3 standard errors\n"
                          : "DISAGREE beyond 3 standard errors\n");

    nlohmann::json doc = run_header("verify-bias", config_echo, opts.seed);
    doc["closed_form"] = v.closed_form;
    doc["quadrature"] = v.quadrature;
    doc["mc_sup"] = {{"mean", v.sim.mean_sup}, {"se", v.sim.se_sup}};
    doc["mc_depth"] = {{"mean", v.sim.mean_depth_at_copy_argmax}, {"se", v.sim.se_depth}};
    if (v.has_two_c) doc["two_c"] = v.two_c;
    doc["agree"] = v.agree;
    if (!opts.output.empty()) emit(doc, opts);
    return v.agree ? exit_ok : exit_oracle;
}

int cmd_km(const std::string& csv_path, const std::string& group_col, const CommonOpts& opts) {
    const auto csv = coxcp::read_survival_csv_file(csv_path);
    int col = -1;
    for (std::size_t i = 0; i < csv.covariate_names.size(); ++i)
        if (csv.covariate_names[i] == group_col) col = static_cast<int>(i);
    if (col < 0) throw coxcp::DataError("group column '" + group_col + "' not found in CSV");
    std::vector<int> labels;
    for (const auto& s : csv.dataset.subjects())
        labels.push_back(static_cast<int>(std::lround(s.covariates[col])));
    const auto curves = coxcp::kaplan_meier(csv.dataset, labels);

    std::ostringstream out;
    out << "# coxcp " << coxcp::version << " km seed=" << opts.seed << " csv=" << csv_path
        << " group_col=" << group_col << "\n";
    out.precision(17);
    out << "group,time,survival\n";
    for (const auto& [g, curve] : curves)
        for (const auto& pt : curve) out << g << "," << pt.time << "," << pt.survival << "\n";
    emit_text(out.str(), opts.output);
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cox proportional hazards with change points: fitting, information-criterion "
                 "selection, simulation experiments, and penalty-constant verification"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string("coxcp ") + coxcp::version);

    CommonOpts opts;
    app.add_option("--seed", opts.seed, "master seed for all randomness");

    std::string csv_path, config_path, criterion = "aic", criteria = "aic_naive,aic";
    std::string spec_csv, matrices_path, group_col;
    int m = 0, max_m = 3, min_events = 0;
    double xi = 0.0;
    long paths = 100000;

    auto* fit = app.add_subcommand("fit", "fit an m-change-point model to a CSV dataset");
    fit->add_option("csv", csv_path, "input CSV (time,event,z...[,weight])")->required();
    fit->add_option("--m", m, "number of change points");
    fit->add_option("--xi", xi, "ridge weight");
    fit->add_option("--min-events", min_events, "minimum events per segment (default p+1)");
    fit->add_option("--criterion", criterion, "aic | aic_naive | aic_ridge | tic");
    fit->add_option("--output", opts.output, "write the report to this file");
    fit->add_option("--format", opts.format, "json | csv")
        ->check(CLI::IsMember({"json", "csv"}));

    auto* select = app.add_subcommand("select", "rank m = 0..max_m by information criteria");
    select->add_option("csv", csv_path, "input CSV")->required();
    select->add_option("--max-m", max_m, "largest number of change points");
    select->add_option("--xi", xi, "ridge weight");
    select->add_option("--criteria", criteria, "comma list: aic,aic_naive,aic_ridge,tic");
    select->add_option("--min-events", min_events, "minimum events per segment (default p+1)");
    select->add_option("--output", opts.output, "write the report to this file");
    select->add_option("--format", opts.format, "json | csv")
        ->check(CLI::IsMember({"json", "csv"}));

    auto* simulate = app.add_subcommand("simulate", "run a simulation experiment recipe");
    simulate->add_option("config", config_path, "experiment config file")->required();
    simulate->add_option("--output", opts.output, "report basename (overrides config)");

    auto* verify = app.add_subcommand("verify-bias",
                                      "compare the closed-form penalty constant with quadrature "
                                      "and Monte Carlo simulation");
    double two_c_flag = 0.0;
    verify->add_option("--spec", spec_csv, "tau1,tau2,sigma1,sigma2");
    verify->add_option("--from-matrices", matrices_path,
                       "JSON file with score_moment, information, delta");
    auto* two_c_opt =
        verify->add_option("--two-c", two_c_flag,
                           "externally claimed 2*C value to hold the simulation against");
    verify->add_option("--paths", paths, "Monte Carlo paths");
    verify->add_option("--output", opts.output, "write the comparison to this file");

    auto* km = app.add_subcommand("km", "per-group Kaplan-Meier curves as tidy CSV");
    km->add_option("csv", csv_path, "input CSV")->required();
    km->add_option("--group-col", group_col, "covariate column holding group labels")->required();
    km->add_option("--output", opts.output, "write the curves to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_data;
    }

    try {
        if (fit->parsed()) return cmd_fit(csv_path, m, xi, min_events, criterion, opts);
        if (select->parsed()) return cmd_select(csv_path, max_m, xi, criteria, min_events, opts);
        if (simulate->parsed()) return cmd_simulate(config_path, opts);
        if (verify->parsed()) {
            if (spec_csv.empty() && matrices_path.empty())
                throw coxcp::DataError("verify-bias needs --spec or --from-matrices");
            std::optional<double> two_c;
            if (two_c_opt->count() > 0) two_c = two_c_flag;
            return cmd_verify_bias(spec_csv, matrices_path, paths, two_c, opts);
        }
        if (km->parsed()) return cmd_km(csv_path, group_col, opts);
    } catch (const coxcp::ContractError& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return exit_contract;
    } catch (const coxcp::InfeasibleModelError& e) {
        std::cerr << "infeasible model: " << e.what() << "\n";
        return exit_infeasible;
    } catch (const coxcp::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_data;
    }
    return exit_ok;
}

#include <catch2/catch.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(COXCP_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    char buffer[4096];
    while (std::size_t got = std::fread(buffer, 1, sizeof(buffer), pipe))
        result.output.append(buffer, got);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
    const auto dir = std::filesystem::temp_directory_path() / "coxcp_cli_tests";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream out(path);
    out << content;
    return path;
}

// twelve subjects, two covariate groups, every row weighted by 2
const char* weighted_csv =
    "time,event,z1,weight\n"
    "1.0,1,0,2\n"
    "2.0,1,1,2\n"
    "3.0,1,0,2\n"
    "4.0,1,1,2\n"
    "5.0,1,0,2\n"
    "6.0,1,1,2\n"
    "7.0,1,0,2\n"
    "8.0,1,1,2\n"
    "9.0,1,0,2\n"
    "10.0,1,1,2\n"
    "11.0,0,0,2\n"
    "12.0,0,1,2\n";

std::string strip_comments(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.empty() || line[0] != '#') out << line << "\n";
    return out.str();
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("help and version exit cleanly", "[cli]") {
    CHECK(run_cli("--help").exit_code == 0);
    const auto version = run_cli("--version");
    CHECK(version.exit_code == 0);
    CHECK(version.output.find("coxcp") != std::string::npos);
}

TEST_CASE("unknown flags are rejected", "[cli]") {
    const auto r = run_cli("fit whatever.csv --not-a-flag");
    CHECK(r.exit_code == 2);
}

TEST_CASE("malformed data exits with a diagnostic", "[cli]") {
    const auto csv = temp_file("bad_event.csv", "time,event,z1\n1.0,1,0\n2.0,2,1\n");
    const auto r = run_cli("fit " + csv.string() + " --m 0");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("row 3") != std::string::npos);
}

TEST_CASE("infeasible partitions exit with code 3", "[cli]") {
    const auto csv = temp_file("tiny.csv", "time,event,z1\n1.0,1,0\n2.0,1,1\n3.0,1,0\n");
    const auto r = run_cli("fit " + csv.string() + " --m 10");
    CHECK(r.exit_code == 3);
}

TEST_CASE("tic with a ridge weight violates its contract", "[cli]") {
    const auto csv = temp_file("wf.csv", weighted_csv);
    const auto r = run_cli("select " + csv.string() + " --max-m 1 --criteria tic --xi 0.1");
    CHECK(r.exit_code == 4);
}

TEST_CASE("fit reports the criterion identity", "[cli]") {
    const auto csv = temp_file("wf.csv", weighted_csv);
    const auto out = std::filesystem::temp_directory_path() / "coxcp_cli_tests" / "fit.json";
    const auto r =
        run_cli("fit " + csv.string() + " --m 1 --criterion aic --output " + out.string());
    REQUIRE(r.exit_code == 0);
    const json doc = json::parse(read_file(out));
    CHECK(doc.at("tool") == "coxcp");
    CHECK(doc.at("config").at("m") == 1);
    const auto& model = doc.at("model");
    REQUIRE(model.at("k_hat").size() == 1);
    const double log_pl = model.at("log_pl");
    const double aic = model.at("criteria").at("aic").at("criterion");
    CHECK(aic == Approx(-2.0 * log_pl + 10.0).margin(1e-9));

    const auto r0 = run_cli("fit " + csv.string() + " --m 0 --criterion aic --output " +
                            out.string());
    REQUIRE(r0.exit_code == 0);
    const json doc0 = json::parse(read_file(out));
    CHECK(doc0.at("model").at("criteria").at("aic").at("penalty_regression") == 2.0);
    CHECK(doc0.at("model").at("criteria").at("aic").at("penalty_changepoint") == 0.0);
}

TEST_CASE("select emits one row per m and flags the argmin", "[cli]") {
    const auto csv = temp_file("wf.csv", weighted_csv);
    const auto out = std::filesystem::temp_directory_path() / "coxcp_cli_tests" / "sel.json";
    const auto r = run_cli("select " + csv.string() +
                           " --max-m 2 --criteria aic,aic_naive,tic --output " + out.string());
    REQUIRE(r.exit_code == 0);
    const json doc = json::parse(read_file(out));
    CHECK(doc.at("models").size() == 3);
    CHECK(doc.at("selected_m").contains("aic"));
    CHECK(doc.at("selected_m").contains("tic"));

    const auto single = run_cli("select " + csv.string() + " --max-m 0 --output " + out.string());
    REQUIRE(single.exit_code == 0);
    CHECK(json::parse(read_file(out)).at("models").size() == 1);
}

TEST_CASE("km outputs match between weighted and duplicated rows", "[cli]") {
    const auto weighted = temp_file("km_w.csv",
                                    "time,event,z1,weight\n"
                                    "1,1,0,2\n"
                                    "2,0,0,1\n"
                                    "3,1,1,3\n"
                                    "4,1,1,1\n");
    const auto duplicated = temp_file("km_d.csv",
                                      "time,event,z1\n"
                                      "1,1,0\n"
                                      "1,1,0\n"
                                      "2,0,0\n"
                                      "3,1,1\n"
                                      "3,1,1\n"
                                      "3,1,1\n"
                                      "4,1,1\n");
    const auto dir = std::filesystem::temp_directory_path() / "coxcp_cli_tests";
    const auto out_w = dir / "km_w.out";
    const auto out_d = dir / "km_d.out";
    REQUIRE(run_cli("km " + weighted.string() + " --group-col z1 --output " + out_w.string())
                .exit_code == 0);
    REQUIRE(run_cli("km " + duplicated.string() + " --group-col z1 --output " + out_d.string())
                .exit_code == 0);
    CHECK(strip_comments(read_file(out_w)) == strip_comments(read_file(out_d)));

    const auto missing = run_cli("km " + weighted.string() + " --group-col nope");
    CHECK(missing.exit_code == 2);
}

TEST_CASE("verify-bias gate maps disagreement to exit 5", "[cli]") {
    const auto ok = run_cli("verify-bias --spec 0.5,0.5,1,1 --two-c 3.0 --paths 4000 --seed 3");
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("AGREE") != std::string::npos);
    const auto bad = run_cli("verify-bias --spec 0.5,0.5,1,1 --two-c 3.4 --paths 4000 --seed 3");
    CHECK(bad.exit_code == 5);
    CHECK(bad.output.find("DISAGREE") != std::string::npos);
    const auto none = run_cli("verify-bias --paths 10");
    CHECK(none.exit_code == 2);
}

TEST_CASE("simulate reruns byte-identically under one seed", "[cli]") {
    const auto dir = std::filesystem::temp_directory_path() / "coxcp_cli_tests";
    const auto cfg = temp_file("tiny.cfg",
                               "experiment = selection\n"
                               "m_star = 0\n"
                               "hazard_ratios = 1.0\n"
                               "target_events = 25\n"
                               "replicates = 4\n"
                               "seed = 9\n"
                               "m_max = 1\n"
                               "criteria = aic\n"
                               "kl_eval_replicates = 4\n"
                               "min_events_per_segment = 2\n");
    const auto out1 = dir / "sim_a";
    const auto out2 = dir / "sim_b";
    REQUIRE(run_cli("simulate " + cfg.string() + " --output " + out1.string()).exit_code == 0);
    REQUIRE(run_cli("simulate " + cfg.string() + " --output " + out2.string()).exit_code == 0);
    CHECK(read_file(out1.string() + ".json") == read_file(out2.string() + ".json"));
    CHECK(read_file(out1.string() + ".csv") == read_file(out2.string() + ".csv"));

    const auto bad_cfg = temp_file("broken.cfg", "experiment = selection\nwat = 1\n");
    CHECK(run_cli("simulate " + bad_cfg.string()).exit_code == 2);
}

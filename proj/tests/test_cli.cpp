#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#ifdef __unix__
#include <sys/wait.h>
#endif

#include "branchlens/csv.hpp"
#include "json.hpp"
#include "testutil.hpp"

using testutil::TempDir;
namespace csv = branchlens::csv;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(CLI_BIN) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
#ifdef __unix__
    if (WIFEXITED(rc)) return WEXITSTATUS(rc);
#endif
    return rc;
}

std::string synth_config_json() {
    nlohmann::json j;
    j["classes"] = {"bonafide", "AX", "AY"};
    j["strategy_map"]["AX"] = {{"kind", "EXPERT"}, {"block", "B1"}};
    j["strategy_map"]["AY"] = {{"kind", "CONFLICT"}, {"block", "B2"}};
    j["rows_d"] = 6;
    j["cols_n"] = 12;
    j["samples_per_class"] = 10;
    j["signal_strength"] = 5.0;
    j["k"] = 4;
    j["seed"] = 5;
    return j.dump(2);
}

std::string pipeline_config_json(const std::string& dataset) {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["k"] = 4;
    j["train"] = {{"iterations", 40}, {"learning_rate", 0.1}, {"depth", 3}, {"bins", 16}};
    j["jobs"] = 2;
    return j.dump(2);
}

}  // namespace

TEST_CASE("synth and run produce the full report set end to end") {
    TempDir dir;
    testutil::write_file(dir.file("synth.json"), synth_config_json());
    CHECK(run_cli("synth --config " + dir.file("synth.json") + " --out " + dir.file("data")) == 0);
    CHECK(std::filesystem::exists(dir.file("data/manifest.json")));

    testutil::write_file(dir.file("cfg.json"), pipeline_config_json(dir.file("data/manifest.json")));
    CHECK(run_cli("run --config " + dir.file("cfg.json") + " --out " + dir.file("out")) == 0);

    // Every advertised report exists and re-parses.
    for (const char* f : {"table1.csv", "table3_phi.csv", "table4_shares.csv",
                          "strategy_matrix.csv", "features.csv", "shap_values.csv"}) {
        CAPTURE(f);
        csv::Table t = csv::read_table(dir.file("out/" + std::string(f)));
        CHECK(!t.rows.empty());
    }
    csv::Table t1 = csv::read_table(dir.file("out/table1.csv"));
    CHECK(t1.rows.size() == 2);  // AX and AY
    nlohmann::json summary =
        nlohmann::json::parse(testutil::read_file(dir.file("out/summary.json")));
    CHECK(summary["records"].size() == 2);
    CHECK(testutil::read_file(dir.file("out/strategy_matrix.svg")).find("<svg") !=
          std::string::npos);
    CHECK(std::filesystem::exists(dir.file("out/model.json")));
}

TEST_CASE("piecewise subcommands write their slice") {
    TempDir dir;
    testutil::write_file(dir.file("synth.json"), synth_config_json());
    REQUIRE(run_cli("synth --config " + dir.file("synth.json") + " --out " + dir.file("data")) == 0);
    testutil::write_file(dir.file("cfg.json"), pipeline_config_json(dir.file("data/manifest.json")));
    const std::string base = " --config " + dir.file("cfg.json") + " --out ";

    CHECK(run_cli("extract" + base + dir.file("e")) == 0);
    csv::Table feats = csv::read_table(dir.file("e/features.csv"));
    CHECK(feats.rows.size() == 30);
    CHECK(feats.header.size() == 2 + 14 * 4);

    CHECK(run_cli("ablate-eig" + base + dir.file("a") + " --ks 2,4") == 0);
    csv::Table eig = csv::read_table(dir.file("a/eig_ablation.csv"));
    CHECK(eig.rows.size() == 2);

    CHECK(run_cli("ablate-penalty" + base + dir.file("p")) == 0);
    csv::Table pen = csv::read_table(dir.file("p/penalty_ablation.csv"));
    CHECK(!pen.rows.empty());
}

TEST_CASE("exit codes separate usage, config, and data failures") {
    TempDir dir;
    testutil::write_file(dir.file("bad.json"), "{\"k\": 0}");
    testutil::write_file(dir.file("unknown.json"), "{\"mystery\": 1}");
    testutil::write_file(dir.file("orphan.json"),
                         pipeline_config_json(dir.file("nowhere/manifest.json")));

    CHECK(run_cli("") == 2);                       // a subcommand is required
    CHECK(run_cli("frobnicate --config x") == 2);  // unknown subcommand
    CHECK(run_cli("run") == 2);                    // --config is required
    CHECK(run_cli("run --config " + dir.file("bad.json") + " --out " + dir.file("o1")) == 2);
    CHECK(run_cli("run --config " + dir.file("unknown.json") + " --out " + dir.file("o2")) == 2);
    // Missing files are data errors, not usage errors.
    CHECK(run_cli("run --config " + dir.file("absent.json") + " --out " + dir.file("o3")) == 3);
    CHECK(run_cli("run --config " + dir.file("orphan.json") + " --out " + dir.file("o4")) == 3);

    // A valid config without an output directory is a config error.
    testutil::write_file(dir.file("synth.json"), synth_config_json());
    CHECK(run_cli("synth --config " + dir.file("synth.json")) == 2);
}

TEST_CASE("seed flag changes the generated dataset") {
    TempDir dir;
    testutil::write_file(dir.file("synth.json"), synth_config_json());
    REQUIRE(run_cli("synth --config " + dir.file("synth.json") + " --out " + dir.file("d1")) == 0);
    REQUIRE(run_cli("synth --config " + dir.file("synth.json") + " --seed 6 --out " +
                    dir.file("d2")) == 0);
    REQUIRE(run_cli("synth --config " + dir.file("synth.json") + " --out " + dir.file("d3")) == 0);

    auto tensor_bytes = [&](const std::string& root) {
        std::string all;
        std::vector<std::filesystem::path> paths;
        for (const auto& e : std::filesystem::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().extension() == ".blns") paths.push_back(e.path());
        std::sort(paths.begin(), paths.end());
        for (const auto& p : paths) all += testutil::read_file(p.string());
        return all;
    };
    std::string b1 = tensor_bytes(dir.file("d1"));
    REQUIRE(!b1.empty());
    CHECK(b1 == tensor_bytes(dir.file("d3")));  // same seed, same bytes
    CHECK(b1 != tensor_bytes(dir.file("d2")));  // overridden seed differs
}

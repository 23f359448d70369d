// End-to-end smoke of the command-line pipeline: pretrain -> warmup ->
// adapt -> report, exit-code contract, and byte-identical reruns. Uses a
// miniature config so the whole flow stays in seconds.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef FOCTA_CLI_PATH
#error "FOCTA_CLI_PATH must point at the built binary"
#endif

namespace {

int run(const std::string& args) {
    std::string cmd = std::string(FOCTA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json small_config(const std::string& out_dir) {
    return json{{"dataset_n", 400},       {"num_classes", 4},
                {"seed", 7},              {"conv_widths", json::array({16, 8, 16})},
                {"pretrain_epochs", 3},   {"pretrain_target_accuracy", 90.0},
                {"pretrain_floor_accuracy", 50.0},
                {"samples_per_segment", 64},
                {"batch", 16},
                {"sweep_batches", json::array({16, 8})},
                {"out_dir", out_dir}};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("pipeline runs end to end and reruns byte-identically") {
    TempDir dir("focta_cli_smoke");
    std::string cfg_path = dir.str() + "/config.json";
    {
        std::ofstream out(cfg_path);
        out << small_config(dir.str() + "/runs").dump(1);
    }
    std::string base = "--config " + cfg_path;

    CHECK(run(base + " dataset") == 0);
    CHECK(fs::exists(dir.str() + "/runs/dataset.bin"));

    CHECK(run(base + " pretrain") == 0);
    std::string ck = dir.str() + "/runs/checkpoint.json";
    REQUIRE(fs::exists(ck));

    CHECK(run(base + " warmup --checkpoint " + ck) == 0);
    std::string plan = dir.str() + "/runs/plan.json";
    REQUIRE(fs::exists(plan));

    CHECK(run(base + " adapt --checkpoint " + ck + " --plan " + plan) == 0);
    std::string summary = dir.str() + "/runs/summary-focta-B16.json";
    std::string log = dir.str() + "/runs/log-focta-B16.csv";
    REQUIRE(fs::exists(summary));
    REQUIRE(fs::exists(log));

    json s = json::parse(slurp(summary));
    CHECK(s.at("mode") == "focta");
    CHECK(s.at("per_domain").size() == 5);
    CHECK(s.contains("config_hash"));
    CHECK(s.contains("memory"));

    std::string log_head = slurp(log).substr(0, 64);
    CHECK(log_head.rfind("step,domain,severity,batch-error,kept-fraction,L_ent,L_reg,L_total",
                         0) == 0);

    // identical config + seed => byte-identical summary
    std::string first = slurp(summary);
    CHECK(run(base + " adapt --checkpoint " + ck + " --plan " + plan) == 0);
    CHECK(slurp(summary) == first);

    CHECK(run(base + " report " + dir.str() + "/runs") == 0);
    CHECK(run(base + " report " + dir.str() + "/runs --budget 999999999 --write " + dir.str() +
              "/runs/report.txt") == 0);
    CHECK(fs::exists(dir.str() + "/runs/report.txt"));
}

TEST_CASE("config and artifact errors map to the exit-code contract") {
    TempDir dir("focta_cli_errors");
    std::string cfg_path = dir.str() + "/config.json";
    {
        std::ofstream out(cfg_path);
        json bad = small_config(dir.str() + "/runs");
        bad["num_classes"] = 0;  // invalid
        out << bad.dump(1);
    }
    CHECK(run("--config " + cfg_path + " pretrain") == 2);

    {
        std::ofstream out(cfg_path);
        json j = small_config(dir.str() + "/runs");
        j["unknown_key"] = 1;
        out << j.dump(1);
    }
    CHECK(run("--config " + cfg_path + " pretrain") == 2);

    // missing artifacts are an explicit failure
    {
        std::ofstream out(cfg_path);
        out << small_config(dir.str() + "/runs").dump(1);
    }
    CHECK(run("--config " + cfg_path + " adapt --checkpoint " + dir.str() +
              "/does-not-exist.json --plan nope.json") == 2);

    // artifact produced under a different config is rejected
    CHECK(run("--config " + cfg_path + " pretrain") == 0);
    {
        std::ofstream out(cfg_path);
        json j = small_config(dir.str() + "/runs");
        j["seed"] = 8;  // config hash changes
        out << j.dump(1);
    }
    CHECK(run("--config " + cfg_path + " warmup --checkpoint " + dir.str() +
              "/runs/checkpoint.json") == 2);
}

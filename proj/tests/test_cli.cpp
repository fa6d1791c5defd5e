// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Drives the cevo executable end to end through a shell.

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "support.hpp"

using cevo::test::TempDir;

namespace {

struct Outcome {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome cli(const TempDir& dir, const std::string& args) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.path().string() + "' && '" + CEVO_CLI_PATH + "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("simulate, run, eval, inspect and export through the CLI", "[cli]") {
    TempDir dir("cli");
    auto r = cli(dir, "simulate --seed 1 --out world.json --manifest manifest.jsonl");
    REQUIRE(r.exit_code == 0);
    REQUIRE(nlohmann::json::parse(r.out).at("classes") == 10);
    REQUIRE(std::filesystem::exists(dir / "manifest.jsonl"));

    r = cli(dir, "init --world_path=world.json --out lib.json --log_level=warn");
    REQUIRE(r.exit_code == 0);
    REQUIRE(nlohmann::json::parse(r.out).at("concepts") == 30);

    r = cli(dir, "run --world_path=world.json --T=6 --K=10 --seed=1 --run_dir=run --log_level=warn");
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    const auto summary = nlohmann::json::parse(r.out);
    REQUIRE(summary.at("iterations") == 6);
    REQUIRE(summary.at("final_accuracy").get<double>() > 0.9);

    SECTION("eval prints a single accuracy line") {
        r = cli(dir, "eval --library lib.json --world world.json");
        REQUIRE(r.exit_code == 0);
        REQUIRE(line_count(r.out) == 1);
        REQUIRE(r.out.rfind("accuracy=", 0) == 0);
        r = cli(dir, "eval --library run/final/library.json --weights run/final/weights.bin --world world.json");
        REQUIRE(r.exit_code == 0);
        REQUIRE(std::stod(r.out.substr(9)) > 0.9);
    }
    SECTION("inspect-pair reports empty and populated histories") {
        const auto history = nlohmann::json::parse(slurp(dir / "run" / "iter_005" / "history.json"));
        std::set<std::pair<int, int>> evolved;
        for (const auto& e : history.at("entries")) evolved.emplace(e.at("pair")[0], e.at("pair")[1]);
        REQUIRE_FALSE(evolved.empty());
        std::optional<std::pair<int, int>> fresh;
        for (int i = 0; i < 10 && !fresh; ++i)
            for (int j = i + 1; j < 10 && !fresh; ++j)
                if (!evolved.contains({i, j})) fresh = std::pair{i, j};
        REQUIRE(fresh.has_value());

        r = cli(dir, "inspect-pair " + std::to_string(fresh->second) + " " + std::to_string(fresh->first) +
                         " --run-dir run");
        REQUIRE(r.exit_code == 0);
        REQUIRE(r.out.find("no history") != std::string::npos);
        const auto [i, j] = *evolved.begin();
        r = cli(dir, "inspect-pair " + std::to_string(i) + " " + std::to_string(j) + " --run-dir run");
        REQUIRE(r.exit_code == 0);
        REQUIRE(r.out.find(": added to \"class_") != std::string::npos);
        r = cli(dir, "inspect-pair 3 3 --run-dir run");
        REQUIRE(r.exit_code != 0);
    }
    SECTION("export-report writes one CSV row per iteration") {
        r = cli(dir, "export-report --run-dir run --csv report.csv --confusion confusion.json");
        REQUIRE(r.exit_code == 0);
        REQUIRE(line_count(slurp(dir / "report.csv")) == 1 + 6);
        const auto confusion = nlohmann::json::parse(slurp(dir / "confusion.json"));
        REQUIRE(confusion.at("reports").size() == 6);
    }
    SECTION("resume of a finished run continues from its last checkpoint") {
        r = cli(dir, "resume --run-dir run --T=8");
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        REQUIRE(nlohmann::json::parse(r.out).at("iterations") == 8);
    }
}

TEST_CASE("CLI failures print a machine-readable error line", "[cli]") {
    TempDir dir("cli_err");
    auto r = cli(dir, "run --no_such_key=1");
    REQUIRE(r.exit_code != 0);
    auto err = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
    REQUIRE(err.at("error") == "ConfigError");

    r = cli(dir, "eval --library missing.json --world missing.json");
    REQUIRE(r.exit_code != 0);
    err = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
    REQUIRE(err.contains("message"));

    r = cli(dir, "simulate --overlap 0.95");
    REQUIRE(r.exit_code != 0);
    REQUIRE(nlohmann::json::parse(r.err.substr(0, r.err.find('\n'))).at("error") == "InfeasibleWorld");

    r = cli(dir, "frobnicate");
    REQUIRE(r.exit_code == 2);
}

// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cevo/adapter.hpp"
#include "cevo/errors.hpp"
#include "cevo/orchestrator.hpp"
#include "cevo/simulation.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

Overrides parse_overrides(const std::vector<std::string>& extras) {
    Overrides out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& arg = extras[i];
        if (arg.rfind("--", 0) != 0) throw cevo::ConfigError("unexpected argument '" + arg + "'");
        const auto eq = arg.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
        } else if (i + 1 < extras.size()) {
            out.emplace_back(arg.substr(2), extras[++i]);
        } else {
            throw cevo::ConfigError("override '" + arg + "' has no value");
        }
    }
    return out;
}

cevo::RunConfig load_config(const std::string& path, const std::vector<std::string>& extras) {
    cevo::RunConfig base = path.empty() ? cevo::RunConfig{} : cevo::RunConfig::load(path);
    return cevo::apply_overrides(base, parse_overrides(extras));
}

std::vector<std::string> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw cevo::ConfigError("cannot read " + path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        try {
            return nlohmann::json::parse(text).get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw cevo::ParseError(path + ": " + e.what());
        }
    }
    std::vector<std::string> labels;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) labels.push_back(line);
    }
    return labels;
}

void print_error(const std::string& code, const std::string& message) {
    std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << std::endl;
}

void print_summary(const cevo::RunResult& result) {
    nlohmann::json j{{"iterations", result.records.size()},
                     {"interrupted", result.interrupted},
                     {"early_stopped", result.early_stopped},
                     {"library_size", result.library.total_concepts()},
                     {"final_accuracy", nullptr}};
    if (result.final_accuracy) j["final_accuracy"] = *result.final_accuracy;
    std::cout << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative concept-library refinement for concept-bottleneck classifiers"};
    app.require_subcommand(1);

    std::string config_path;

    auto* init = app.add_subcommand("init", "Generate an initial concept library from class labels");
    std::string labels_path, library_out = "library.json";
    init->add_option("--config", config_path, "Run configuration JSON");
    init->add_option("--labels", labels_path, "Label file: JSON array or one label per line");
    init->add_option("--out", library_out, "Where to write the library")->capture_default_str();
    init->allow_extras();

    auto* run = app.add_subcommand("run", "Run the refinement loop");
    run->add_option("--config", config_path, "Run configuration JSON");
    run->allow_extras();

    auto* resume = app.add_subcommand("resume", "Continue a run from its newest checkpoint");
    std::string run_dir = "run";
    resume->add_option("--run-dir", run_dir, "Run directory")->capture_default_str();
    resume->allow_extras();

    auto* eval = app.add_subcommand("eval", "Report top-1 accuracy of a library and adapter");
    std::string eval_library, eval_weights, eval_world, eval_manifest, eval_cache, eval_backbone = "ViT-L/14",
                                                                               eval_dataset = "dataset";
    eval->add_option("--library", eval_library, "Concept library JSON")->required();
    eval->add_option("--weights", eval_weights, "Adapter weights (.bin); zero-shot weights when omitted");
    eval->add_option("--world", eval_world, "Simulated world JSON (scores and labels)");
    eval->add_option("--manifest", eval_manifest, "Dataset manifest JSONL");
    eval->add_option("--cache-dir", eval_cache, "Score cache directory");
    eval->add_option("--backbone", eval_backbone, "Backbone id of the score cache")->capture_default_str();
    eval->add_option("--dataset", eval_dataset, "Dataset id of the score cache")->capture_default_str();

    auto* inspect = app.add_subcommand("inspect-pair", "Print the evolution history of a class pair");
    std::size_t pair_i = 0, pair_j = 0;
    inspect->add_option("i", pair_i, "First class index")->required();
    inspect->add_option("j", pair_j, "Second class index")->required();
    inspect->add_option("--run-dir", run_dir, "Run directory")->capture_default_str();

    auto* report = app.add_subcommand("export-report", "Export per-iteration CSV and confusion JSON");
    std::string csv_out = "report.csv", confusion_out = "confusion.json";
    report->add_option("--run-dir", run_dir, "Run directory")->capture_default_str();
    report->add_option("--csv", csv_out, "CSV output path")->capture_default_str();
    report->add_option("--confusion", confusion_out, "Confusion JSON output path")->capture_default_str();

    auto* simulate = app.add_subcommand("simulate", "Generate a planted-attribute world fixture");
    cevo::WorldParams params;
    std::string world_out = "world.json", manifest_out;
    simulate->add_option("--classes", params.n_classes, "Number of classes")->capture_default_str();
    simulate->add_option("--attrs", params.attrs_per_class, "Attributes per class")->capture_default_str();
    simulate->add_option("--overlap", params.overlap, "Shared fraction between adjacent classes")->capture_default_str();
    simulate->add_option("--sigma", params.noise_sigma, "Score noise")->capture_default_str();
    simulate->add_option("--images", params.images_per_class, "Images per class")->capture_default_str();
    simulate->add_option("--flip", params.flip_prob, "Per-image attribute flip probability")->capture_default_str();
    simulate->add_option("--seed", params.seed, "World seed")->capture_default_str();
    simulate->add_option("--out", world_out, "World JSON output path")->capture_default_str();
    simulate->add_option("--manifest", manifest_out, "Also write the dataset manifest here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        print_error("UsageError", e.what());
        return 2;
    }

    try {
        if (init->parsed()) {
            const auto config = load_config(config_path, init->remaining());
            auto backends = cevo::make_backends(config);
            if (!labels_path.empty()) backends.labels = cevo::LabelSet(read_labels(labels_path));
            if (!backends.labels) throw cevo::ConfigError("init needs --labels or a world in the config");
            cevo::InitConceptsOptions options;
            options.prompt_template = config.init_template;
            options.min_initial_concepts = config.min_initial_concepts;
            options.max_concept_chars = config.max_concept_chars;
            options.retry_budget = config.retry_budget;
            options.max_inflight = config.max_inflight;
            const auto lib = cevo::init_concepts(*backends.labels, *backends.llm, options);
            lib.save(library_out);
            std::cout << nlohmann::json{{"library", library_out}, {"concepts", lib.total_concepts()}}.dump()
                      << std::endl;
        } else if (run->parsed()) {
            const auto config = load_config(config_path, run->remaining());
            auto backends = cevo::make_backends(config);
            print_summary(cevo::run(config, backends));
        } else if (resume->parsed()) {
            const auto config = load_config((std::filesystem::path(run_dir) / "config.json").string(),
                                            resume->remaining());
            auto backends = cevo::make_backends(config);
            print_summary(cevo::resume(config, backends));
        } else if (eval->parsed()) {
            const auto lib = cevo::ConceptLibrary::load(eval_library);
            std::shared_ptr<cevo::ScorerBackend> backend;
            cevo::DatasetManifest manifest;
            std::shared_ptr<cevo::ScoreCache> cache;
            if (!eval_world.empty()) {
                auto world = std::make_shared<cevo::SyntheticWorld>(cevo::SyntheticWorld::load(eval_world));
                manifest = eval_manifest.empty() ? world->manifest()
                                                 : cevo::DatasetManifest::read_jsonl(eval_manifest, lib.labels());
                backend = std::make_shared<cevo::SimulatedScorer>(world);
            } else {
                if (eval_manifest.empty() || eval_cache.empty())
                    throw cevo::ConfigError("eval needs --world, or --manifest with --cache-dir");
                manifest = cevo::DatasetManifest::read_jsonl(eval_manifest, lib.labels());
                cache = cevo::ScoreCache::open(eval_cache, eval_backbone, eval_dataset, manifest.image_ids());
                backend = std::make_shared<cevo::CacheFileScorer>(cache, eval_backbone);
            }
            cevo::Scorer scorer(backend, cache ? cache : std::make_shared<cevo::ScoreCache>(manifest.image_ids()));
            const auto scores = scorer.score(manifest, lib);
            const auto weights = eval_weights.empty() ? cevo::zero_shot_weights(lib) : cevo::load_weights(eval_weights);
            const auto pred = cevo::evaluate(weights, scores);
            char line[64];
            std::snprintf(line, sizeof line, "accuracy=%.4f", cevo::accuracy(pred, manifest.labels()));
            std::cout << line << std::endl;
        } else if (inspect->parsed()) {
            const auto lib = cevo::ConceptLibrary::load(std::filesystem::path(run_dir) / "initial_library.json");
            if (pair_i == pair_j || pair_i >= lib.num_classes() || pair_j >= lib.num_classes())
                throw cevo::ConfigError("pair indices must be two distinct classes below " +
                                        std::to_string(lib.num_classes()));
            const auto bank = cevo::load_latest_history(run_dir);
            std::cout << cevo::describe_pair_history(bank, lib.labels(), cevo::ClassPair(pair_i, pair_j));
        } else if (report->parsed()) {
            const auto records = cevo::load_records(run_dir);
            if (records.empty()) throw cevo::ConfigError("no iteration records in " + run_dir);
            std::ofstream(csv_out) << cevo::records_csv(records);
            std::ofstream(confusion_out) << cevo::confusion_export(run_dir).dump(2) << "\n";
            std::cout << nlohmann::json{{"rows", records.size()}, {"csv", csv_out}, {"confusion", confusion_out}}.dump()
                      << std::endl;
        } else if (simulate->parsed()) {
            const auto world = cevo::generate_world(params);
            world.save(world_out);
            if (!manifest_out.empty()) world.manifest().write_jsonl(manifest_out);
            std::cout << nlohmann::json{{"world", world_out},
                                        {"classes", world.num_classes()},
                                        {"attributes", world.num_attributes()},
                                        {"images", world.images().size()}}
                             .dump()
                      << std::endl;
        }
    } catch (const cevo::Error& e) {
        print_error(e.code(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("InternalError", e.what());
        return 1;
    }
    return 0;
}

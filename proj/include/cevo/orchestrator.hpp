// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// The outer refinement loop, its configuration and its on-disk checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cevo/adapter.hpp"
#include "cevo/chat.hpp"
#include "cevo/concept_model.hpp"
#include "cevo/evolution.hpp"
#include "cevo/heuristics.hpp"
#include "cevo/scoring.hpp"

namespace cevo {

enum class RunAdapterMode { zero_shot, few_shot, fine_tuned };

RunAdapterMode parse_run_adapter_mode(std::string_view text);
const char* to_string(RunAdapterMode mode);

struct RunConfig {
    std::size_t T = 60;
    std::size_t K = 50;
    std::size_t k = 3;
    double gamma = 1.0 / 30.0;
    std::string heuristic = "topk";
    RunAdapterMode adapter_mode = RunAdapterMode::zero_shot;
    std::size_t few_shot_n = 8;  // images per class for few_shot
    std::uint64_t seed = 0;
    bool history_conditioning = true;
    bool early_stop = true;

    std::size_t epochs = 50;
    double lr = 1e-2;
    std::size_t batch = 32;
    double l1_lambda = 0.0;

    std::size_t max_concepts_per_reply = 5;
    int retry_budget = 3;
    std::size_t max_inflight = 8;
    std::size_t max_concept_chars = kDefaultMaxConceptChars;
    std::size_t min_initial_concepts = 3;
    std::string score_template = kDefaultScoreTemplate;
    std::string init_template = InitConceptsOptions{}.prompt_template;

    // Backends. llm: simulated | http | replay; scorer: simulated | embedding | cache.
    std::string llm = "simulated";
    std::string llm_base_url = "http://127.0.0.1:8000";
    std::string llm_model = "gpt-3.5-turbo-0125";
    std::string llm_replay_path;
    std::string sim_llm_mode = "contrastive";
    std::size_t sim_per_reply = 2;
    double sim_init_fraction = 0.5;
    std::string scorer = "simulated";
    std::string scorer_base_url = "http://127.0.0.1:8080";
    std::string backbone = "ViT-L/14";
    std::string world_path;
    std::string manifest_path;
    std::string library_path;  // initial library; generated through the model when empty
    std::string cache_dir;
    std::string dataset_id = "dataset";

    std::string run_dir = "run";
    std::optional<std::size_t> stop_after;  // end the process after this iteration's checkpoint
    std::string log_level = "info";

    /// Throws ConfigError on invalid combinations.
    void validate() const;
    [[nodiscard]] HeuristicSpec heuristic_spec() const;
    [[nodiscard]] FitConfig fit_config(std::uint64_t seed) const;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Unknown keys are a ConfigError; missing keys keep their defaults.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
};

/// Applies `key=value` overrides. Values are read as JSON when they parse,
/// otherwise as plain strings.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::pair<std::string, std::string>>& overrides);

struct IterationRecord {
    std::size_t t = 0;
    std::size_t library_version = 0;
    std::size_t library_size = 0;
    std::string weights_ref;
    std::optional<double> accuracy;
    std::string confusion_ref;
    std::vector<SampledPair> sampled_pairs;
    std::vector<ClassPair> skipped_pairs;
    std::size_t concepts_added = 0;
    bool early_stopped = false;
    double wall_time_ms = 0.0;

    [[nodiscard]] nlohmann::json to_json() const;
    static IterationRecord from_json(const nlohmann::json& j);

    /// Equality over every field except wall time.
    [[nodiscard]] bool same_outcome(const IterationRecord& other) const;
};

/// Hands out ground-truth labels by purpose. Evaluation may always read them;
/// training and confusion estimation fault in zero-shot runs.
class LabelGuard {
public:
    LabelGuard(const DatasetManifest& manifest, bool zero_shot);

    /// Empty when the manifest is not fully labeled.
    [[nodiscard]] std::span<const ClassIndex> for_eval() const;
    /// Throws LabelAccessViolation in zero-shot runs and NoLabels when unlabeled.
    [[nodiscard]] std::span<const ClassIndex> for_training(std::string_view who) const;

private:
    std::vector<ClassIndex> labels_;
    bool zero_shot_;
};

struct Backends {
    std::shared_ptr<ChatService> llm;
    std::shared_ptr<ScorerBackend> scorer;
    std::shared_ptr<ScoreCache> cache;  // in-memory when null
    DatasetManifest manifest;
    std::optional<LabelSet> labels;
    std::optional<ConceptLibrary> initial_library;
};

/// Builds the backends named in `config`. The API key is read from
/// CEVO_API_KEY.
Backends make_backends(const RunConfig& config);

struct RunResult {
    AdapterWeights weights;
    ConceptLibrary library;
    std::vector<IterationRecord> records;
    std::optional<double> final_accuracy;
    bool early_stopped = false;
    bool interrupted = false;  // stop_after was reached
};

/// Starts a fresh run in config.run_dir. Throws ConfigError when the
/// directory already holds checkpoints.
RunResult run(const RunConfig& config, Backends& backends);

/// Continues from the newest complete checkpoint in config.run_dir.
RunResult resume(const RunConfig& config, Backends& backends);

std::filesystem::path iteration_dir(const std::filesystem::path& run_dir, std::size_t t);
std::vector<IterationRecord> load_records(const std::filesystem::path& run_dir);
/// History bank from the newest checkpoint; empty when there is none.
HistoryBank load_latest_history(const std::filesystem::path& run_dir);

/// Per-iteration CSV with a best-so-far accuracy column.
std::string records_csv(const std::vector<IterationRecord>& records);
/// All confusion reports of a run as one JSON document.
nlohmann::json confusion_export(const std::filesystem::path& run_dir);
/// Human-readable history for one pair.
std::string describe_pair_history(const HistoryBank& bank, const LabelSet& labels, ClassPair pair);

}  // namespace cevo

// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/orchestrator.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cevo/errors.hpp"
#include "cevo/parallel.hpp"
#include "cevo/random.hpp"
#include "cevo/simulation.hpp"

namespace cevo {

namespace fs = std::filesystem;

namespace {

// Seed stream tags.
constexpr std::uint64_t kFitTag = 0x666974;
constexpr std::uint64_t kSampleTag = 0x73616d70;
constexpr std::uint64_t kHeuristicTag = 0x68657572;
constexpr std::uint64_t kFewShotTag = 0x66657773;

std::shared_ptr<spdlog::logger> logger() {
    if (auto existing = spdlog::get("cevo")) return existing;
    auto created = spdlog::stderr_color_mt("cevo");
    created->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    return created;
}

void write_file(const fs::path& path, const std::string& content) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + path.string());
        out << content;
    }
    fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::optional<std::size_t> latest_checkpoint(const fs::path& run_dir) {
    std::optional<std::size_t> latest;
    if (!fs::exists(run_dir)) return latest;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("iter_", 0) != 0) continue;
        if (!fs::exists(entry.path() / "record.json")) continue;
        const auto t = static_cast<std::size_t>(std::stoul(name.substr(5)));
        if (!latest || t > *latest) latest = t;
    }
    return latest;
}

struct LoopState {
    std::size_t next_t = 0;
    ConceptLibrary library;
    HistoryBank bank;
    std::optional<AdapterWeights> weights;  // fitted at next_t - 1
    std::vector<IterationRecord> records;
    bool early_stopped = false;
};

class Loop {
public:
    Loop(const RunConfig& config, Backends& backends)
        : config_(config),
          backends_(backends),
          guard_(backends.manifest, config.adapter_mode == RunAdapterMode::zero_shot),
          spec_(config.heuristic_spec()),
          scorer_(backends.scorer,
                  backends.cache ? backends.cache : std::make_shared<ScoreCache>(backends.manifest.image_ids()),
                  ScoringOptions{config.score_template, config.max_inflight, 32}) {
        if (config.adapter_mode == RunAdapterMode::few_shot) {
            const auto labels = guard_.for_training("few-shot subset");
            few_shot_rows_ = balanced_subsample(labels, backends.initial_library.value().num_classes(),
                                                config.few_shot_n, derive_seed(config.seed, kFewShotTag));
        }
    }

    RunResult drive(LoopState state) {
        const fs::path dir = config_.run_dir;
        while (!state.early_stopped && state.next_t < config_.T) {
            const auto t = state.next_t;
            iterate(state, t);
            if (config_.stop_after && t == *config_.stop_after && state.next_t < config_.T && !state.early_stopped) {
                logger()->info("stopping after iteration {} as configured", t);
                return {state.weights.value(), state.library, state.records, std::nullopt, false, true};
            }
        }
        return finish(std::move(state));
    }

private:
    AdapterWeights fit_weights(const std::optional<AdapterWeights>& prev, const ConceptLibrary& lib,
                               const ScoreMatrix& scores, std::size_t t) {
        if (config_.adapter_mode == RunAdapterMode::zero_shot) return zero_shot_weights(lib);
        const auto labels = guard_.for_training("adapter fit");
        const auto init = prev ? warm_start(*prev, lib) : zero_shot_weights(lib);
        const auto cfg = config_.fit_config(derive_seed(config_.seed, kFitTag, t));
        if (config_.adapter_mode == RunAdapterMode::fine_tuned) return fit(init, scores, labels, cfg);
        std::vector<ClassIndex> sub;
        for (const auto row : few_shot_rows_) sub.push_back(labels[row]);
        return fit(init, select_rows(scores, few_shot_rows_), sub, cfg);
    }

    void iterate(LoopState& state, std::size_t t) {
        const auto started = std::chrono::steady_clock::now();
        auto& lib = state.library;
        const fs::path dir = iteration_dir(config_.run_dir, t);
        fs::create_directories(dir);

        IterationRecord rec;
        rec.t = t;
        rec.library_version = lib.version();
        rec.library_size = lib.total_concepts();

        try {
            const auto scores = scorer_.score(backends_.manifest, lib);
            auto weights = fit_weights(state.weights, lib, scores, t);
            const auto pred = evaluate(weights, scores);
            const auto eval_labels = guard_.for_eval();
            if (!eval_labels.empty()) rec.accuracy = accuracy(pred, eval_labels);

            std::optional<std::span<const ClassIndex>> heuristic_labels;
            if (requires_labels(spec_)) heuristic_labels = guard_.for_training("confusion heuristic");
            auto report = calculate_similarity(spec_, pred, heuristic_labels, derive_seed(config_.seed, kHeuristicTag, t));
            report.iteration = t;

            for (const auto pair : state.bank.awaiting_followup(t))
                state.bank.record_followup(pair, t, report.r(pair.first, pair.second));

            std::optional<PairSample> sample;
            try {
                sample = subsample_pairs(report, state.bank, config_.K, config_.gamma,
                                         derive_seed(config_.seed, kSampleTag, t));
            } catch (const NoEligiblePairs& e) {
                logger()->info("iteration {}: no eligible pairs ({})", t, e.what());
                if (config_.early_stop) {
                    rec.early_stopped = true;
                    state.early_stopped = true;
                }
            }

            ConceptLibrary next = lib;
            if (sample) {
                rec.sampled_pairs = sample->pairs;
                const auto results = evolve(lib, state.bank, sample->pairs, t);
                for (std::size_t p = 0; p < results.size(); ++p) {
                    const auto pair = sample->pairs[p].pair;
                    if (!results[p]) {
                        rec.skipped_pairs.push_back(pair);
                        continue;
                    }
                    next = merge_concepts(next, pair.first, results[p]->new_i);
                    next = merge_concepts(next, pair.second, results[p]->new_j);
                    state.bank.update_history(pair, t, results[p]->new_i, results[p]->new_j);
                }
            }
            rec.concepts_added = next.total_concepts() - lib.total_concepts();
            if (!state.early_stopped) next = next.with_version(t + 1);

            rec.weights_ref = (fs::path(dir.filename()) / "weights.bin").string();
            rec.confusion_ref = (fs::path(dir.filename()) / "confusion.json").string();
            next.save(dir / "library.json");
            save_weights(dir / "weights.bin", weights, t);
            write_file(dir / "confusion.json", report.to_json(lib.labels()).dump(2) + "\n");
            write_file(dir / "history.json", state.bank.to_json().dump(2) + "\n");

            rec.wall_time_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
            write_file(dir / "record.json", rec.to_json().dump(2) + "\n");

            logger()->info("iteration {}: accuracy {}, pairs {}, skipped {}, added {}, library {}", t,
                           rec.accuracy ? std::to_string(*rec.accuracy) : "n/a", rec.sampled_pairs.size(),
                           rec.skipped_pairs.size(), rec.concepts_added, next.total_concepts());
            state.library = std::move(next);
            state.weights = std::move(weights);
            state.records.push_back(rec);
            state.next_t = t + 1;
        } catch (const Error& e) {
            throw Error(e.code(), "iteration " + std::to_string(t) + ": " + e.what());
        }
    }

    std::vector<std::optional<EvolResult>> evolve(const ConceptLibrary& lib, const HistoryBank& bank,
                                                  const std::vector<SampledPair>& pairs, std::size_t t) {
        std::vector<std::optional<EvolResult>> results(pairs.size());
        const PromptOptions prompt_options{config_.history_conditioning, config_.max_concept_chars};
        bounded_for(pairs.size(), config_.max_inflight, [&](std::size_t p) {
            const auto pair = pairs[p].pair;
            const auto& ci = lib.concepts(pair.first);
            const auto& cj = lib.concepts(pair.second);
            const auto prompt = build_disambiguation_prompt(lib.labels()[pair.first], lib.labels()[pair.second], ci,
                                                            cj, bank.rounds(pair), prompt_options);
            EvolContext ctx{t, pair, ci, cj, config_.max_concept_chars, config_.max_concepts_per_reply};
            try {
                results[p] = concept_evol(*backends_.llm, prompt, ctx, config_.retry_budget);
            } catch (const ServiceError& e) {
                logger()->warn("iteration {}: skipping pair ({}, {}): {}", t, pair.first, pair.second, e.what());
            } catch (const ParseError& e) {
                logger()->warn("iteration {}: skipping pair ({}, {}): {}", t, pair.first, pair.second, e.what());
            }
        });
        return results;
    }

    RunResult finish(LoopState state) {
        const fs::path dir = config_.run_dir;
        const auto T = state.records.size();
        const auto scores = scorer_.score(backends_.manifest, state.library);
        auto weights = fit_weights(state.weights, state.library, scores, T);
        const auto pred = evaluate(weights, scores);
        std::optional<double> final_accuracy;
        if (const auto labels = guard_.for_eval(); !labels.empty()) final_accuracy = accuracy(pred, labels);

        fs::create_directories(dir / "final");
        state.library.save(dir / "final" / "library.json");
        save_weights(dir / "final" / "weights.bin", weights, T);
        nlohmann::json summary{{"iterations", T},
                               {"early_stopped", state.early_stopped},
                               {"final_library_size", state.library.total_concepts()},
                               {"final_accuracy", nullptr}};
        if (final_accuracy) summary["final_accuracy"] = *final_accuracy;
        write_file(dir / "summary.json", summary.dump(2) + "\n");
        logger()->info("run finished after {} iterations; final accuracy {}", T,
                       final_accuracy ? std::to_string(*final_accuracy) : "n/a");
        return {std::move(weights), std::move(state.library), std::move(state.records), final_accuracy,
                state.early_stopped, false};
    }

    const RunConfig& config_;
    Backends& backends_;
    LabelGuard guard_;
    HeuristicSpec spec_;
    Scorer scorer_;
    std::vector<std::size_t> few_shot_rows_;
};

void set_log_level(const std::string& level) { logger()->set_level(spdlog::level::from_str(level)); }

ConceptLibrary initial_library(const RunConfig& config, Backends& backends, const LabelSet& labels) {
    if (backends.initial_library) return *backends.initial_library;
    InitConceptsOptions options;
    options.prompt_template = config.init_template;
    options.min_initial_concepts = config.min_initial_concepts;
    options.max_concept_chars = config.max_concept_chars;
    options.retry_budget = config.retry_budget;
    options.max_inflight = config.max_inflight;
    return init_concepts(labels, *backends.llm, options);
}

}  // namespace

RunAdapterMode parse_run_adapter_mode(std::string_view text) {
    if (text == "zero_shot") return RunAdapterMode::zero_shot;
    if (text == "few_shot") return RunAdapterMode::few_shot;
    if (text == "fine_tuned") return RunAdapterMode::fine_tuned;
    throw ConfigError("unknown adapter mode '" + std::string(text) + "'");
}

const char* to_string(RunAdapterMode mode) {
    switch (mode) {
        case RunAdapterMode::zero_shot: return "zero_shot";
        case RunAdapterMode::few_shot: return "few_shot";
        case RunAdapterMode::fine_tuned: return "fine_tuned";
    }
    return "unknown";
}

void RunConfig::validate() const {
    if (T < 1) throw ConfigError("T must be at least 1");
    if (K < 1) throw ConfigError("K must be at least 1");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
    if (retry_budget < 1) throw ConfigError("retry_budget must be at least 1");
    if (max_inflight < 1) throw ConfigError("max_inflight must be at least 1");
    if (max_concepts_per_reply < 1) throw ConfigError("max_concepts_per_reply must be at least 1");
    const auto spec = heuristic_spec();
    if (requires_labels(spec) && adapter_mode == RunAdapterMode::zero_shot)
        throw ConfigError("heuristic '" + heuristic + "' reads labels, which a zero-shot run does not have");
    if (adapter_mode == RunAdapterMode::few_shot && few_shot_n < 1) throw ConfigError("few_shot_n must be positive");
    if (adapter_mode != RunAdapterMode::zero_shot && !(lr > 0.0)) throw ConfigError("lr must be positive");
}

HeuristicSpec RunConfig::heuristic_spec() const {
    auto spec = parse_heuristic(heuristic);
    if (spec.kind == HeuristicKind::topk && heuristic.find(':') == std::string::npos) spec.param = k;
    return spec;
}

FitConfig RunConfig::fit_config(std::uint64_t fit_seed) const {
    FitConfig cfg;
    cfg.lr = lr;
    cfg.epochs = epochs;
    cfg.batch = batch;
    cfg.l1_lambda = l1_lambda;
    cfg.seed = fit_seed;
    return cfg;
}

nlohmann::json RunConfig::to_json() const {
    return {{"T", T},
            {"K", K},
            {"k", k},
            {"gamma", gamma},
            {"heuristic", heuristic},
            {"adapter_mode", cevo::to_string(adapter_mode)},
            {"few_shot_n", few_shot_n},
            {"seed", seed},
            {"history_conditioning", history_conditioning},
            {"early_stop", early_stop},
            {"epochs", epochs},
            {"lr", lr},
            {"batch", batch},
            {"l1_lambda", l1_lambda},
            {"max_concepts_per_reply", max_concepts_per_reply},
            {"retry_budget", retry_budget},
            {"max_inflight", max_inflight},
            {"max_concept_chars", max_concept_chars},
            {"min_initial_concepts", min_initial_concepts},
            {"score_template", score_template},
            {"init_template", init_template},
            {"llm", llm},
            {"llm_base_url", llm_base_url},
            {"llm_model", llm_model},
            {"llm_replay_path", llm_replay_path},
            {"sim_llm_mode", sim_llm_mode},
            {"sim_per_reply", sim_per_reply},
            {"sim_init_fraction", sim_init_fraction},
            {"scorer", scorer},
            {"scorer_base_url", scorer_base_url},
            {"backbone", backbone},
            {"world_path", world_path},
            {"manifest_path", manifest_path},
            {"library_path", library_path},
            {"cache_dir", cache_dir},
            {"dataset_id", dataset_id},
            {"run_dir", run_dir},
            {"stop_after", stop_after ? nlohmann::json(*stop_after) : nlohmann::json(nullptr)},
            {"log_level", log_level}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    auto merged = RunConfig{}.to_json();
    for (const auto& [key, value] : j.items()) {
        if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        merged[key] = value;
    }
    RunConfig c;
    try {
        c.T = merged.at("T").get<std::size_t>();
        c.K = merged.at("K").get<std::size_t>();
        c.k = merged.at("k").get<std::size_t>();
        c.gamma = merged.at("gamma").get<double>();
        c.heuristic = merged.at("heuristic").get<std::string>();
        c.adapter_mode = parse_run_adapter_mode(merged.at("adapter_mode").get<std::string>());
        c.few_shot_n = merged.at("few_shot_n").get<std::size_t>();
        c.seed = merged.at("seed").get<std::uint64_t>();
        c.history_conditioning = merged.at("history_conditioning").get<bool>();
        c.early_stop = merged.at("early_stop").get<bool>();
        c.epochs = merged.at("epochs").get<std::size_t>();
        c.lr = merged.at("lr").get<double>();
        c.batch = merged.at("batch").get<std::size_t>();
        c.l1_lambda = merged.at("l1_lambda").get<double>();
        c.max_concepts_per_reply = merged.at("max_concepts_per_reply").get<std::size_t>();
        c.retry_budget = merged.at("retry_budget").get<int>();
        c.max_inflight = merged.at("max_inflight").get<std::size_t>();
        c.max_concept_chars = merged.at("max_concept_chars").get<std::size_t>();
        c.min_initial_concepts = merged.at("min_initial_concepts").get<std::size_t>();
        c.score_template = merged.at("score_template").get<std::string>();
        c.init_template = merged.at("init_template").get<std::string>();
        c.llm = merged.at("llm").get<std::string>();
        c.llm_base_url = merged.at("llm_base_url").get<std::string>();
        c.llm_model = merged.at("llm_model").get<std::string>();
        c.llm_replay_path = merged.at("llm_replay_path").get<std::string>();
        c.sim_llm_mode = merged.at("sim_llm_mode").get<std::string>();
        c.sim_per_reply = merged.at("sim_per_reply").get<std::size_t>();
        c.sim_init_fraction = merged.at("sim_init_fraction").get<double>();
        c.scorer = merged.at("scorer").get<std::string>();
        c.scorer_base_url = merged.at("scorer_base_url").get<std::string>();
        c.backbone = merged.at("backbone").get<std::string>();
        c.world_path = merged.at("world_path").get<std::string>();
        c.manifest_path = merged.at("manifest_path").get<std::string>();
        c.library_path = merged.at("library_path").get<std::string>();
        c.cache_dir = merged.at("cache_dir").get<std::string>();
        c.dataset_id = merged.at("dataset_id").get<std::string>();
        c.run_dir = merged.at("run_dir").get<std::string>();
        if (!merged.at("stop_after").is_null()) c.stop_after = merged.at("stop_after").get<std::size_t>();
        c.log_level = merged.at("log_level").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) { return from_json(read_json(path)); }

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::pair<std::string, std::string>>& overrides) {
    auto j = base.to_json();
    for (const auto& [key, text] : overrides) {
        if (!j.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error&) {
            value = text;
        }
        // Keep string-typed fields as strings even when the text looks numeric.
        if (j[key].is_string() && !value.is_string()) value = text;
        j[key] = std::move(value);
    }
    return RunConfig::from_json(j);
}

nlohmann::json IterationRecord::to_json() const {
    auto pairs = nlohmann::json::array();
    for (const auto& p : sampled_pairs) pairs.push_back({{"pair", {p.pair.first, p.pair.second}}, {"r", p.r}, {"s", p.s}});
    auto skipped = nlohmann::json::array();
    for (const auto& p : skipped_pairs) skipped.push_back({p.first, p.second});
    return {{"t", t},
            {"library_version", library_version},
            {"library_size", library_size},
            {"weights_ref", weights_ref},
            {"accuracy", accuracy ? nlohmann::json(*accuracy) : nlohmann::json(nullptr)},
            {"confusion_ref", confusion_ref},
            {"sampled_pairs", std::move(pairs)},
            {"skipped_pairs", std::move(skipped)},
            {"concepts_added", concepts_added},
            {"early_stopped", early_stopped},
            {"wall_time_ms", wall_time_ms}};
}

IterationRecord IterationRecord::from_json(const nlohmann::json& j) {
    try {
        IterationRecord r;
        r.t = j.at("t").get<std::size_t>();
        r.library_version = j.at("library_version").get<std::size_t>();
        r.library_size = j.at("library_size").get<std::size_t>();
        r.weights_ref = j.at("weights_ref").get<std::string>();
        if (!j.at("accuracy").is_null()) r.accuracy = j.at("accuracy").get<double>();
        r.confusion_ref = j.at("confusion_ref").get<std::string>();
        for (const auto& p : j.at("sampled_pairs"))
            r.sampled_pairs.push_back({ClassPair(p.at("pair").at(0).get<ClassIndex>(), p.at("pair").at(1).get<ClassIndex>()),
                                       p.at("r").get<double>(), p.at("s").get<double>()});
        for (const auto& p : j.at("skipped_pairs"))
            r.skipped_pairs.emplace_back(p.at(0).get<ClassIndex>(), p.at(1).get<ClassIndex>());
        r.concepts_added = j.at("concepts_added").get<std::size_t>();
        r.early_stopped = j.at("early_stopped").get<bool>();
        r.wall_time_ms = j.at("wall_time_ms").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed iteration record: ") + e.what());
    }
}

bool IterationRecord::same_outcome(const IterationRecord& o) const {
    return t == o.t && library_version == o.library_version && library_size == o.library_size &&
           weights_ref == o.weights_ref && accuracy == o.accuracy && confusion_ref == o.confusion_ref &&
           sampled_pairs == o.sampled_pairs && skipped_pairs == o.skipped_pairs &&
           concepts_added == o.concepts_added && early_stopped == o.early_stopped;
}

LabelGuard::LabelGuard(const DatasetManifest& manifest, bool zero_shot) : zero_shot_(zero_shot) {
    if (manifest.fully_labeled() && manifest.size() > 0) labels_ = manifest.labels();
}

std::span<const ClassIndex> LabelGuard::for_eval() const { return labels_; }

std::span<const ClassIndex> LabelGuard::for_training(std::string_view who) const {
    if (zero_shot_)
        throw LabelAccessViolation(std::string(who) + " requested ground-truth labels in a zero-shot run");
    if (labels_.empty()) throw NoLabels(std::string(who) + " requires a fully labeled manifest");
    return labels_;
}

Backends make_backends(const RunConfig& config) {
    Backends b;
    std::shared_ptr<const SyntheticWorld> world;
    if (!config.world_path.empty()) world = std::make_shared<SyntheticWorld>(SyntheticWorld::load(config.world_path));
    const auto need_world = [&](const char* what) {
        if (!world) throw ConfigError(std::string(what) + " needs world_path");
    };

    std::optional<LabelSet> labels;
    if (!config.library_path.empty()) {
        b.initial_library = ConceptLibrary::load(config.library_path, config.max_concept_chars);
        labels = b.initial_library->labels();
    } else if (world) {
        labels = world->label_set();
    }

    if (!config.manifest_path.empty()) {
        if (!labels) throw ConfigError("reading a manifest needs library_path or world_path for the label set");
        b.manifest = DatasetManifest::read_jsonl(config.manifest_path, *labels);
    } else if (world) {
        b.manifest = world->manifest();
    } else {
        throw ConfigError("no dataset: set manifest_path or world_path");
    }

    if (config.llm == "simulated") {
        need_world("simulated llm");
        b.llm = std::make_shared<SimulatedLlm>(
            world, SimulatedLlmOptions{parse_llm_mode(config.sim_llm_mode), config.sim_per_reply,
                                       config.sim_init_fraction, derive_seed(config.seed, 0x6c6c6dULL)});
    } else if (config.llm == "http") {
        HttpChatOptions options;
        options.base_url = config.llm_base_url;
        options.model = config.llm_model;
        if (const char* key = std::getenv("CEVO_API_KEY")) options.api_key = key;
        b.llm = std::make_shared<HttpChatService>(options);
    } else if (config.llm == "replay") {
        b.llm = std::make_shared<ReplayChatService>(ReplayChatService::load(config.llm_replay_path));
    } else {
        throw ConfigError("unknown llm backend '" + config.llm + "'");
    }

    std::string backbone = config.backbone;
    if (config.scorer == "simulated") {
        need_world("simulated scorer");
        b.scorer = std::make_shared<SimulatedScorer>(world);
        backbone = b.scorer->backbone_id();
    } else if (config.scorer == "embedding") {
        EmbeddingOptions options;
        options.base_url = config.scorer_base_url;
        options.model = config.backbone;
        b.scorer = std::make_shared<EmbeddingServiceScorer>(options);
    } else if (config.scorer != "cache") {
        throw ConfigError("unknown scorer backend '" + config.scorer + "'");
    }
    if (!config.cache_dir.empty())
        b.cache = ScoreCache::open(config.cache_dir, backbone, config.dataset_id, b.manifest.image_ids());
    if (config.scorer == "cache") {
        if (!b.cache) throw ConfigError("cache scorer needs cache_dir");
        b.scorer = std::make_shared<CacheFileScorer>(b.cache, backbone);
    }
    b.labels = labels;
    return b;
}

RunResult run(const RunConfig& config, Backends& backends) {
    config.validate();
    set_log_level(config.log_level);
    const fs::path dir = config.run_dir;
    if (latest_checkpoint(dir)) throw ConfigError("run directory " + dir.string() + " already holds checkpoints");
    fs::create_directories(dir);
    write_file(dir / "config.json", config.to_json().dump(2) + "\n");

    auto labels = backends.labels;
    if (backends.initial_library) labels = backends.initial_library->labels();
    if (!labels) throw ConfigError("a fresh run needs an initial library or labels to generate one");
    const auto lib = initial_library(config, backends, *labels);
    lib.save(dir / "initial_library.json");
    backends.initial_library = lib;

    LoopState state{0, lib, HistoryBank(lib.num_classes(), config.T), std::nullopt, {}, false};
    return Loop(config, backends).drive(std::move(state));
}

RunResult resume(const RunConfig& config, Backends& backends) {
    config.validate();
    set_log_level(config.log_level);
    const fs::path dir = config.run_dir;
    const auto latest = latest_checkpoint(dir);
    if (!latest) {
        if (!backends.initial_library && fs::exists(dir / "initial_library.json"))
            backends.initial_library = ConceptLibrary::load(dir / "initial_library.json", config.max_concept_chars);
        if (!backends.initial_library) throw ConfigError("nothing to resume in " + dir.string());
        fs::remove(dir / "config.json");
        return run(config, backends);
    }
    const auto it = iteration_dir(dir, *latest);
    LoopState state{*latest + 1,
                    ConceptLibrary::load(it / "library.json", config.max_concept_chars),
                    HistoryBank::from_json(read_json(it / "history.json")),
                    load_weights(it / "weights.bin"),
                    load_records(dir),
                    false};
    if (state.records.size() != *latest + 1)
        throw ParseError("run directory has a gap in its iteration records");
    state.early_stopped = state.records.back().early_stopped;
    if (!backends.initial_library) backends.initial_library = state.library;
    logger()->info("resuming {} after iteration {}", dir.string(), *latest);
    return Loop(config, backends).drive(std::move(state));
}

fs::path iteration_dir(const fs::path& run_dir, std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "iter_%03zu", t);
    return run_dir / buf;
}

std::vector<IterationRecord> load_records(const fs::path& run_dir) {
    std::vector<IterationRecord> out;
    for (std::size_t t = 0;; ++t) {
        const auto path = iteration_dir(run_dir, t) / "record.json";
        if (!fs::exists(path)) break;
        out.push_back(IterationRecord::from_json(read_json(path)));
    }
    return out;
}

HistoryBank load_latest_history(const fs::path& run_dir) {
    const auto latest = latest_checkpoint(run_dir);
    if (!latest) return {};
    return HistoryBank::from_json(read_json(iteration_dir(run_dir, *latest) / "history.json"));
}

std::string records_csv(const std::vector<IterationRecord>& records) {
    std::ostringstream out;
    out << "t,library_version,library_size,concepts_added,pairs_sampled,pairs_skipped,accuracy,best_accuracy\n";
    std::optional<double> best;
    char buf[64];
    for (const auto& r : records) {
        if (r.accuracy && (!best || *r.accuracy > *best)) best = r.accuracy;
        out << r.t << ',' << r.library_version << ',' << r.library_size << ',' << r.concepts_added << ','
            << r.sampled_pairs.size() << ',' << r.skipped_pairs.size() << ',';
        if (r.accuracy) {
            std::snprintf(buf, sizeof buf, "%.6f", *r.accuracy);
            out << buf;
        }
        out << ',';
        if (best) {
            std::snprintf(buf, sizeof buf, "%.6f", *best);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

nlohmann::json confusion_export(const fs::path& run_dir) {
    auto reports = nlohmann::json::array();
    for (const auto& r : load_records(run_dir)) reports.push_back(read_json(run_dir / r.confusion_ref));
    return {{"reports", std::move(reports)}};
}

std::string describe_pair_history(const HistoryBank& bank, const LabelSet& labels, ClassPair pair) {
    std::ostringstream out;
    const auto rounds = bank.rounds(pair);
    out << "pair (" << pair.first << ", " << pair.second << "): \"" << labels[pair.first] << "\" vs \""
        << labels[pair.second] << "\"\n";
    if (rounds.empty()) {
        out << "no history: this pair has not been evolved yet\n";
        return out.str();
    }
    for (const auto& r : rounds) {
        nlohmann::json ai = nlohmann::json::array(), aj = nlohmann::json::array();
        for (const auto& c : r.proposed_i) ai.push_back(c.text);
        for (const auto& c : r.proposed_j) aj.push_back(c.text);
        out << "iteration " << r.iteration << ": added to \"" << labels[pair.first] << "\" " << ai.dump()
            << ", added to \"" << labels[pair.second] << "\" " << aj.dump() << ", confusion after: ";
        if (r.followup_r) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", *r.followup_r);
            out << buf;
        } else {
            out << "not yet measured";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace cevo

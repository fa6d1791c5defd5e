// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Planted-attribute world with simulated scorer and language model backends.
// Classes own overlapping windows of an attribute universe; every attribute
// has one phrase, so scorer and language model agree on what a phrase means.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cevo/chat.hpp"
#include "cevo/concept_model.hpp"
#include "cevo/scoring.hpp"

namespace cevo {

struct WorldParams {
    std::size_t n_classes = 10;
    std::size_t attrs_per_class = 6;
    double overlap = 0.5;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
    std::size_t images_per_class = 20;
    double flip_prob = 0.0;
    double base_hit = 0.8;
    double base_miss = 0.2;

    friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

struct WorldImage {
    std::string id;
    ClassIndex label = 0;
    std::vector<std::size_t> attrs;  // sorted

    friend bool operator==(const WorldImage&, const WorldImage&) = default;
};

class SyntheticWorld {
public:
    SyntheticWorld(WorldParams params, std::vector<std::string> labels, std::vector<std::vector<std::size_t>> class_attrs,
                   std::vector<std::string> phrases, std::vector<WorldImage> images);

    [[nodiscard]] const WorldParams& params() const noexcept { return params_; }
    [[nodiscard]] std::size_t num_classes() const noexcept { return labels_.size(); }
    [[nodiscard]] std::size_t num_attributes() const noexcept { return phrases_.size(); }
    [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
    [[nodiscard]] const std::vector<std::size_t>& class_attrs(ClassIndex c) const { return class_attrs_.at(c); }
    [[nodiscard]] const std::string& phrase(std::size_t attr) const { return phrases_.at(attr); }
    [[nodiscard]] const std::vector<WorldImage>& images() const noexcept { return images_; }

    /// Inverse phrase map under concept_key(); nullopt for unknown phrases.
    [[nodiscard]] std::optional<std::size_t> attribute_of(std::string_view text) const;
    [[nodiscard]] const WorldImage& image(std::string_view id) const;
    [[nodiscard]] bool has_attr(const WorldImage& img, std::size_t attr) const;

    /// Number of classes owning each attribute.
    [[nodiscard]] std::size_t owners(std::size_t attr) const;
    /// A class's phrases, attributes shared by more classes first, then by id.
    [[nodiscard]] std::vector<std::string> canonical_phrases(ClassIndex c) const;

    [[nodiscard]] LabelSet label_set() const { return LabelSet(labels_); }
    [[nodiscard]] DatasetManifest manifest() const;
    /// The first ceil(fraction * n) canonical phrases of every class.
    [[nodiscard]] ConceptLibrary initial_library(double fraction) const;
    [[nodiscard]] ConceptLibrary full_library() const;

    [[nodiscard]] nlohmann::json to_json() const;
    static SyntheticWorld from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static SyntheticWorld load(const std::filesystem::path& path);

    friend bool operator==(const SyntheticWorld& a, const SyntheticWorld& b) {
        return a.params_ == b.params_ && a.labels_ == b.labels_ && a.class_attrs_ == b.class_attrs_ &&
               a.phrases_ == b.phrases_ && a.images_ == b.images_;
    }

private:
    WorldParams params_;
    std::vector<std::string> labels_;
    std::vector<std::vector<std::size_t>> class_attrs_;
    std::vector<std::string> phrases_;
    std::vector<WorldImage> images_;
    std::unordered_map<std::string, std::size_t> phrase_index_;
    std::unordered_map<std::string, std::size_t> image_index_;
    std::vector<std::size_t> owners_;
};

/// Class c owns attributes [c*stride, c*stride + n) with
/// stride = n - round(overlap * n). Throws InfeasibleWorld when the stride
/// would be zero, and ConfigError on out-of-range parameters.
SyntheticWorld generate_world(const WorldParams& params);

double simulated_score(const SyntheticWorld& world, std::string_view image_id, std::string_view concept_text);

/// Scores the raw concept text; the scoring template plays no role here.
class SimulatedScorer final : public ScorerBackend {
public:
    explicit SimulatedScorer(std::shared_ptr<const SyntheticWorld> world) : world_(std::move(world)) {}
    [[nodiscard]] std::string backbone_id() const override { return "simulated"; }
    Matrix<float> score_columns(const DatasetManifest& manifest, std::span<const ColumnRequest> columns) override;

private:
    std::shared_ptr<const SyntheticWorld> world_;
};

enum class SimulatedLlmMode {
    contrastive,    // symmetric-difference phrases missing from the current lists
    forgetful,      // repeats the class's leading phrases unless history is shown
    random_critic,  // one random unused phrase per class
};

SimulatedLlmMode parse_llm_mode(std::string_view text);
const char* to_string(SimulatedLlmMode mode);

struct SimulatedLlmOptions {
    SimulatedLlmMode mode = SimulatedLlmMode::contrastive;
    std::size_t per_reply = 2;
    double init_fraction = 0.5;
    std::uint64_t seed = 0;
};

/// Reads the rendered prompt text the way a language model would and answers
/// from the world's ground truth.
class SimulatedLlm final : public ChatService {
public:
    SimulatedLlm(std::shared_ptr<const SyntheticWorld> world, SimulatedLlmOptions options = {});
    std::string complete(const ChatRequest& request) override;

private:
    std::string answer_init(const std::string& text) const;
    std::string answer_pair(const std::string& text, const std::string& key) const;

    std::shared_ptr<const SyntheticWorld> world_;
    SimulatedLlmOptions options_;
};

}  // namespace cevo

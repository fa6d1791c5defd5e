// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Label set, concept library and dataset manifest: the shared vocabulary of
// the engine. All types here are immutable values once constructed.

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cevo/chat.hpp"

namespace cevo {

using ClassIndex = std::size_t;

inline constexpr std::size_t kDefaultMaxConceptChars = 250;

class LabelSet {
public:
    /// Throws ConfigError when empty or when a label repeats.
    explicit LabelSet(std::vector<std::string> labels);

    [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
    [[nodiscard]] const std::string& operator[](ClassIndex i) const { return labels_.at(i); }
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return labels_; }
    [[nodiscard]] std::optional<ClassIndex> index_of(std::string_view name) const;

    friend bool operator==(const LabelSet&, const LabelSet&) = default;

private:
    std::vector<std::string> labels_;
};

/// Unordered class pair stored with first < second.
struct ClassPair {
    ClassIndex first = 0;
    ClassIndex second = 0;

    ClassPair() = default;
    ClassPair(ClassIndex a, ClassIndex b) : first(a < b ? a : b), second(a < b ? b : a) {}

    friend auto operator<=>(const ClassPair&, const ClassPair&) = default;
};

struct ConceptOrigin {
    enum class Kind { initial, evolved };
    Kind kind = Kind::initial;
    std::size_t iteration = 0;  // evolved only
    ClassPair pair;             // evolved only

    static ConceptOrigin initial() { return {}; }
    static ConceptOrigin evolved(std::size_t t, ClassPair p) { return {Kind::evolved, t, p}; }

    friend bool operator==(const ConceptOrigin&, const ConceptOrigin&) = default;
};

struct Concept {
    std::string text;
    ConceptOrigin origin;
    std::size_t created_at_iteration = 0;

    friend bool operator==(const Concept&, const Concept&) = default;
};

nlohmann::json concept_to_json(const Concept& c);
Concept concept_from_json(const nlohmann::json& j);

/// Trims `raw`; returns nullopt when the result is empty or longer than
/// `max_chars` bytes. Over-long text is rejected, never truncated.
std::optional<std::string> sanitize_concept_text(std::string_view raw,
                                                 std::size_t max_chars = kDefaultMaxConceptChars);

/// Dedup key: ASCII-lowercased, trimmed, internal whitespace collapsed.
std::string concept_key(std::string_view text);

/// Stable identifier of a concept column (class label + dedup key).
struct ConceptId {
    std::uint64_t value = 0;

    [[nodiscard]] std::string hex() const;
    static ConceptId from_hex(std::string_view hex);

    friend auto operator<=>(const ConceptId&, const ConceptId&) = default;
};

ConceptId make_concept_id(std::string_view label, std::string_view text);

class ConceptLibrary {
public:
    /// Validates every invariant: one list per label, each non-empty, texts
    /// sanitized and unique per class under concept_key().
    ConceptLibrary(LabelSet labels, std::vector<std::vector<Concept>> per_class,
                   std::size_t version = 0,
                   std::size_t max_concept_chars = kDefaultMaxConceptChars);

    [[nodiscard]] const LabelSet& labels() const noexcept { return labels_; }
    [[nodiscard]] std::size_t num_classes() const noexcept { return labels_.size(); }
    [[nodiscard]] std::size_t version() const noexcept { return version_; }
    [[nodiscard]] std::size_t max_concept_chars() const noexcept { return max_chars_; }
    [[nodiscard]] const std::vector<Concept>& concepts(ClassIndex i) const { return per_class_.at(i); }
    [[nodiscard]] std::size_t total_concepts() const noexcept;
    [[nodiscard]] bool contains(ClassIndex i, std::string_view text) const;

    /// Column layout: class-major, then insertion order.
    [[nodiscard]] std::vector<ConceptId> column_ids() const;
    [[nodiscard]] std::vector<ClassIndex> column_classes() const;

    [[nodiscard]] ConceptLibrary with_version(std::size_t version) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static ConceptLibrary from_json(const nlohmann::json& j,
                                   std::size_t max_concept_chars = kDefaultMaxConceptChars);
    /// Byte-stable serialization (sorted keys, fixed indentation).
    [[nodiscard]] std::string serialize() const;
    void save(const std::filesystem::path& path) const;
    static ConceptLibrary load(const std::filesystem::path& path,
                               std::size_t max_concept_chars = kDefaultMaxConceptChars);

    friend bool operator==(const ConceptLibrary&, const ConceptLibrary&) = default;

private:
    friend ConceptLibrary merge_concepts(const ConceptLibrary&, ClassIndex, std::span<const Concept>);

    LabelSet labels_;
    std::vector<std::vector<Concept>> per_class_;
    std::size_t version_ = 0;
    std::size_t max_chars_ = kDefaultMaxConceptChars;
};

/// Appends `added` to class `class_idx`, silently dropping invalid or
/// duplicate texts. The version is left unchanged.
ConceptLibrary merge_concepts(const ConceptLibrary& lib, ClassIndex class_idx,
                              std::span<const Concept> added);

struct ManifestItem {
    std::string image_id;
    std::string image_ref;
    std::optional<ClassIndex> label;

    friend bool operator==(const ManifestItem&, const ManifestItem&) = default;
};

class DatasetManifest {
public:
    DatasetManifest() = default;
    /// Throws ConfigError on duplicate image ids or labels outside `num_classes`.
    DatasetManifest(std::vector<ManifestItem> items, std::size_t num_classes);

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] const std::vector<ManifestItem>& items() const noexcept { return items_; }
    [[nodiscard]] const ManifestItem& operator[](std::size_t i) const { return items_.at(i); }
    [[nodiscard]] bool fully_labeled() const;
    /// Throws NoLabels when any item lacks a label.
    [[nodiscard]] std::vector<ClassIndex> labels() const;
    [[nodiscard]] std::vector<std::string> image_ids() const;

    /// One `{image_id, image_ref, label?}` object per line. `label` may be a
    /// class index or a label name.
    static DatasetManifest read_jsonl(const std::filesystem::path& path, const LabelSet& labels);
    void write_jsonl(const std::filesystem::path& path) const;

private:
    std::vector<ManifestItem> items_;
};

struct InitConceptsOptions {
    std::string prompt_template =
        "What are useful visual features for distinguishing a \"{class}\" in a photo? "
        "Answer with a JSON object of the form {\"concepts\": [\"...\", \"...\"]}. "
        "Each concept must be a short visual descriptor.";
    std::size_t min_initial_concepts = 3;
    std::size_t max_concept_chars = kDefaultMaxConceptChars;
    int retry_budget = 3;
    std::size_t max_inflight = 8;
};

/// Queries the language model once per class and assembles the version-0
/// library. Throws ServiceError, ParseError, or EmptyClass.
ConceptLibrary init_concepts(const LabelSet& labels, ChatService& llm,
                             const InitConceptsOptions& options = {});

/// Parses an init reply: either `{"concepts": [...]}` or a bare JSON array,
/// optionally wrapped in a Markdown code fence. Throws ParseError.
std::vector<std::string> parse_init_reply(std::string_view content);

/// Substitutes every `{key}` occurrence.
std::string fill_template(std::string_view tmpl, std::string_view key, std::string_view value);

}  // namespace cevo

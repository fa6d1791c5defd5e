// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Turning confusion into new concepts: repeat-decayed sampling weights, pair
// subsampling, the per-pair history bank, the history-conditioned prompt and
// reply parsing.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cevo/chat.hpp"
#include "cevo/concept_model.hpp"
#include "cevo/heuristics.hpp"

namespace cevo {

struct HistoryRound {
    std::size_t iteration = 0;
    std::vector<Concept> proposed_i;
    std::vector<Concept> proposed_j;
    std::optional<double> followup_r;  // confusion observed at iteration + 1

    friend bool operator==(const HistoryRound&, const HistoryRound&) = default;
};

class HistoryBank {
public:
    HistoryBank() = default;
    HistoryBank(std::size_t num_classes, std::size_t t_max) : num_classes_(num_classes), t_max_(t_max) {}

    [[nodiscard]] std::span<const HistoryRound> rounds(ClassPair pair) const;
    [[nodiscard]] std::size_t repeat_count(ClassPair pair) const { return rounds(pair).size(); }
    [[nodiscard]] const std::map<ClassPair, std::vector<HistoryRound>>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t t_max() const noexcept { return t_max_; }

    /// Opens the round for `pair` at iteration `t`. A second call for the same
    /// (pair, t) is a no-op; an iteration older than the latest round is a
    /// logic error.
    void update_history(ClassPair pair, std::size_t t, std::vector<Concept> proposed_i,
                        std::vector<Concept> proposed_j);

    /// Stores the confusion `r` observed at iteration `t` into the round
    /// opened at `t - 1`. Throws UnknownRound when that round does not exist;
    /// a round that already has a follow-up is left untouched.
    void record_followup(ClassPair pair, std::size_t t, double r);

    /// Pairs whose latest round was opened at `t - 1` and still awaits its
    /// follow-up score.
    [[nodiscard]] std::vector<ClassPair> awaiting_followup(std::size_t t) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static HistoryBank from_json(const nlohmann::json& j);

    friend bool operator==(const HistoryBank&, const HistoryBank&) = default;

private:
    std::size_t num_classes_ = 0;
    std::size_t t_max_ = 0;
    std::map<ClassPair, std::vector<HistoryRound>> entries_;
};

/// max(r, 0) * 2^(-gamma * repeat_count).
double compute_sample_prob(double r, std::size_t repeat_count, double gamma);

struct SampledPair {
    ClassPair pair;
    double r = 0.0;
    double s = 0.0;

    friend bool operator==(const SampledPair&, const SampledPair&) = default;
};

struct PairSample {
    std::vector<SampledPair> pairs;
    std::uint64_t seed = 0;
};

/// Draws up to K distinct pairs without replacement, each draw proportional
/// to its decayed weight among the remaining pairs. Throws NoEligiblePairs
/// when every weight is zero.
PairSample subsample_pairs(const ConfusionReport& report, const HistoryBank& bank, std::size_t K, double gamma,
                           std::uint64_t seed);

struct PromptOptions {
    bool history_conditioning = true;
    std::size_t max_concept_chars = kDefaultMaxConceptChars;
};

struct PromptDocument {
    std::string label_i;
    std::string label_j;
    std::string system;
    std::string user;
    std::size_t history_blocks = 0;

    [[nodiscard]] ChatRequest to_request() const;
};

/// JSON key that carries the concepts for `label` in a reply.
std::string concepts_key(std::string_view label);

PromptDocument build_disambiguation_prompt(std::string_view label_i, std::string_view label_j,
                                           std::span<const Concept> concepts_i, std::span<const Concept> concepts_j,
                                           std::span<const HistoryRound> rounds, const PromptOptions& options = {});

struct DisambiguationReply {
    std::string reasoning;
    std::vector<std::string> concepts_i;
    std::vector<std::string> concepts_j;
};

/// Requires a string `reasoning` field and string arrays under
/// concepts_key(label_i) and concepts_key(label_j). Throws ParseError.
DisambiguationReply parse_disambiguation_reply(std::string_view content, std::string_view label_i,
                                               std::string_view label_j);

struct EvolContext {
    std::size_t iteration = 0;
    ClassPair pair;
    std::span<const Concept> existing_i;
    std::span<const Concept> existing_j;
    std::size_t max_concept_chars = kDefaultMaxConceptChars;
    std::size_t max_concepts_per_reply = 5;
};

struct EvolResult {
    std::vector<Concept> new_i;
    std::vector<Concept> new_j;
    int attempts = 0;
};

/// Queries the model until a reply parses (at most `retry_budget` attempts),
/// then keeps valid concepts that are new to their class. Throws ParseError
/// after `retry_budget` malformed replies; ServiceError propagates.
EvolResult concept_evol(ChatService& llm, const PromptDocument& prompt, const EvolContext& ctx, int retry_budget);

}  // namespace cevo

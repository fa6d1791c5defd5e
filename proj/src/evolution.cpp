// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/evolution.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "cevo/errors.hpp"
#include "cevo/random.hpp"

namespace cevo {

namespace {

std::string quoted(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

nlohmann::json texts_json(std::span<const Concept> concepts) {
    auto arr = nlohmann::json::array();
    for (const auto& c : concepts) arr.push_back(c.text);
    return arr;
}

nlohmann::json concepts_json(std::span<const Concept> concepts) {
    auto arr = nlohmann::json::array();
    for (const auto& c : concepts) arr.push_back(concept_to_json(c));
    return arr;
}

std::vector<Concept> concepts_from(const nlohmann::json& arr) {
    std::vector<Concept> out;
    for (const auto& c : arr) out.push_back(concept_from_json(c));
    return out;
}

std::vector<std::string> string_array(const nlohmann::json& obj, const std::string& key) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ParseError("reply is missing the '" + key + "' field");
    if (!it->is_array()) throw ParseError("reply field '" + key + "' is not an array");
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) throw ParseError("reply field '" + key + "' contains a non-string entry");
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::vector<Concept> keep_new(const std::vector<std::string>& raw, std::span<const Concept> existing,
                              const EvolContext& ctx) {
    std::unordered_set<std::string> keys;
    for (const auto& c : existing) keys.insert(concept_key(c.text));
    std::vector<Concept> out;
    for (const auto& text : raw) {
        if (out.size() >= ctx.max_concepts_per_reply) break;
        auto clean = sanitize_concept_text(text, ctx.max_concept_chars);
        if (!clean || !keys.insert(concept_key(*clean)).second) continue;
        out.push_back({std::move(*clean), ConceptOrigin::evolved(ctx.iteration, ctx.pair), ctx.iteration + 1});
    }
    return out;
}

}  // namespace

std::span<const HistoryRound> HistoryBank::rounds(ClassPair pair) const {
    const auto it = entries_.find(pair);
    if (it == entries_.end()) return {};
    return it->second;
}

void HistoryBank::update_history(ClassPair pair, std::size_t t, std::vector<Concept> proposed_i,
                                 std::vector<Concept> proposed_j) {
    auto& list = entries_[pair];
    if (!list.empty()) {
        if (list.back().iteration == t) return;
        if (list.back().iteration > t)
            throw std::logic_error("history round at iteration " + std::to_string(t) +
                                   " is older than the latest round");
    }
    list.push_back({t, std::move(proposed_i), std::move(proposed_j), std::nullopt});
}

void HistoryBank::record_followup(ClassPair pair, std::size_t t, double r) {
    const auto it = entries_.find(pair);
    if (t == 0 || it == entries_.end())
        throw UnknownRound("no history round for pair (" + std::to_string(pair.first) + ", " +
                           std::to_string(pair.second) + ") before iteration " + std::to_string(t));
    for (auto& round : it->second) {
        if (round.iteration != t - 1) continue;
        if (!round.followup_r) round.followup_r = r;
        return;
    }
    throw UnknownRound("pair (" + std::to_string(pair.first) + ", " + std::to_string(pair.second) +
                       ") has no round opened at iteration " + std::to_string(t - 1));
}

std::vector<ClassPair> HistoryBank::awaiting_followup(std::size_t t) const {
    std::vector<ClassPair> out;
    if (t == 0) return out;
    for (const auto& [pair, list] : entries_)
        if (!list.empty() && list.back().iteration == t - 1 && !list.back().followup_r) out.push_back(pair);
    return out;
}

nlohmann::json HistoryBank::to_json() const {
    auto entries = nlohmann::json::array();
    for (const auto& [pair, list] : entries_) {
        auto rounds = nlohmann::json::array();
        for (const auto& r : list) {
            nlohmann::json jr{{"iteration", r.iteration},
                              {"proposed_i", concepts_json(r.proposed_i)},
                              {"proposed_j", concepts_json(r.proposed_j)},
                              {"followup_r", nullptr}};
            if (r.followup_r) jr["followup_r"] = *r.followup_r;
            rounds.push_back(std::move(jr));
        }
        entries.push_back({{"pair", {pair.first, pair.second}}, {"rounds", std::move(rounds)}});
    }
    return {{"num_classes", num_classes_}, {"t_max", t_max_}, {"entries", std::move(entries)}};
}

HistoryBank HistoryBank::from_json(const nlohmann::json& j) {
    try {
        HistoryBank bank(j.at("num_classes").get<std::size_t>(), j.at("t_max").get<std::size_t>());
        for (const auto& e : j.at("entries")) {
            const ClassPair pair(e.at("pair").at(0).get<ClassIndex>(), e.at("pair").at(1).get<ClassIndex>());
            auto& list = bank.entries_[pair];
            for (const auto& r : e.at("rounds")) {
                HistoryRound round{r.at("iteration").get<std::size_t>(), concepts_from(r.at("proposed_i")),
                                   concepts_from(r.at("proposed_j")), std::nullopt};
                if (!r.at("followup_r").is_null()) round.followup_r = r.at("followup_r").get<double>();
                if (!list.empty() && list.back().iteration >= round.iteration)
                    throw ParseError("history rounds are not strictly increasing");
                list.push_back(std::move(round));
            }
        }
        return bank;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed history bank: ") + e.what());
    }
}

double compute_sample_prob(double r, std::size_t repeat_count, double gamma) {
    if (!(r > 0.0)) return 0.0;
    return r * std::exp2(-gamma * static_cast<double>(repeat_count));
}

PairSample subsample_pairs(const ConfusionReport& report, const HistoryBank& bank, std::size_t K, double gamma,
                           std::uint64_t seed) {
    if (K < 1) throw ConfigError("K must be at least 1");
    std::vector<SampledPair> pool;
    const auto m = report.num_classes();
    for (ClassIndex i = 0; i < m; ++i)
        for (ClassIndex j = i + 1; j < m; ++j) {
            const ClassPair pair(i, j);
            const double r = report.r(i, j);
            const double s = compute_sample_prob(r, bank.repeat_count(pair), gamma);
            if (s > 0.0) pool.push_back({pair, r, s});
        }
    if (pool.empty()) throw NoEligiblePairs("every pair has zero sampling weight");

    PairSample out;
    out.seed = seed;
    Rng rng(seed);
    while (out.pairs.size() < K && !pool.empty()) {
        double total = 0.0;
        for (const auto& p : pool) total += p.s;
        const double target = rng.uniform() * total;
        std::size_t pick = pool.size() - 1;
        double acc = 0.0;
        for (std::size_t k = 0; k < pool.size(); ++k) {
            acc += pool[k].s;
            if (target < acc) {
                pick = k;
                break;
            }
        }
        out.pairs.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return out;
}

std::string concepts_key(std::string_view label) { return "concepts_for_" + std::string(label); }

ChatRequest PromptDocument::to_request() const {
    ChatRequest req;
    req.messages = {{"system", system}, {"user", user}};
    return req;
}

PromptDocument build_disambiguation_prompt(std::string_view label_i, std::string_view label_j,
                                           std::span<const Concept> concepts_i, std::span<const Concept> concepts_j,
                                           std::span<const HistoryRound> rounds, const PromptOptions& options) {
    PromptDocument doc;
    doc.label_i = label_i;
    doc.label_j = label_j;
    doc.system =
        "You are an expert in fine-grained visual recognition. You help an image classifier that scores "
        "photos against short natural-language concepts tell apart classes it currently confuses.";

    const auto qi = quoted(label_i), qj = quoted(label_j);
    std::ostringstream u;
    u << "The classifier confuses two classes: " << qi << " and " << qj << ".\n\n";
    u << "Current concepts for " << qi << ":\n";
    for (const auto& c : concepts_i) u << "- " << c.text << "\n";
    u << "\nCurrent concepts for " << qj << ":\n";
    for (const auto& c : concepts_j) u << "- " << c.text << "\n";

    const bool with_history = options.history_conditioning && !rounds.empty();
    if (with_history) {
        u << "\nPrevious attempts to separate these classes:\n";
        std::size_t n = 0;
        for (const auto& round : rounds) {
            u << "\nAttempt " << ++n << " (iteration " << round.iteration << "):\n";
            u << "Added to " << qi << ": " << texts_json(round.proposed_i).dump() << "\n";
            u << "Added to " << qj << ": " << texts_json(round.proposed_j).dump() << "\n";
            if (round.followup_r) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.2f", *round.followup_r);
                u << "confusion after update: " << buf << "\n";
            } else {
                u << "confusion after update: not yet measured\n";
            }
        }
        doc.history_blocks = n;
        u << "\nEach attempt lists the concepts that were added and the confusion measured afterwards; a lower "
             "value means the classes became easier to separate. Do not propose concepts that were already "
             "tried, and move away from directions that did not reduce the confusion.\n";
    }

    u << "\nPropose new visual concepts that distinguish " << qi << " from " << qj
      << ". Every concept must describe something visible in a photo, be at most " << options.max_concept_chars
      << " characters long, and must not repeat an existing concept.\n";
    u << "First work through the visual differences in the \"reasoning\" field. Then list the concepts in "
         "their own fields, without explanations. Respond with a single JSON object:\n";
    const nlohmann::json shape{{"reasoning", "..."},
                               {concepts_key(label_i), {"..."}},
                               {concepts_key(label_j), {"..."}}};
    u << shape.dump() << "\n";
    doc.user = u.str();
    return doc;
}

DisambiguationReply parse_disambiguation_reply(std::string_view content, std::string_view label_i,
                                               std::string_view label_j) {
    const auto j = extract_json(content);
    if (!j.is_object()) throw ParseError("reply is not a JSON object");
    const auto it = j.find("reasoning");
    if (it == j.end() || !it->is_string()) throw ParseError("reply lacks a separate 'reasoning' string field");
    return {it->get<std::string>(), string_array(j, concepts_key(label_i)), string_array(j, concepts_key(label_j))};
}

EvolResult concept_evol(ChatService& llm, const PromptDocument& prompt, const EvolContext& ctx, int retry_budget) {
    const auto request = prompt.to_request();
    const int budget = std::max(retry_budget, 1);
    std::string last_error;
    for (int attempt = 1; attempt <= budget; ++attempt) {
        DisambiguationReply reply;
        try {
            reply = parse_disambiguation_reply(llm.complete(request), prompt.label_i, prompt.label_j);
        } catch (const ParseError& e) {
            last_error = e.what();
            continue;
        }
        return {keep_new(reply.concepts_i, ctx.existing_i, ctx), keep_new(reply.concepts_j, ctx.existing_j, ctx),
                attempt};
    }
    throw ParseError("no parseable reply after " + std::to_string(budget) + " attempts: " + last_error);
}

}  // namespace cevo

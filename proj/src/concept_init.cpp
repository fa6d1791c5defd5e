// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include <optional>
#include <unordered_set>

#include "cevo/concept_model.hpp"
#include "cevo/errors.hpp"
#include "cevo/parallel.hpp"

namespace cevo {

std::vector<std::string> parse_init_reply(std::string_view content) {
    const auto j = extract_json(content);
    const nlohmann::json* list = &j;
    if (j.is_object()) {
        const auto it = j.find("concepts");
        if (it == j.end()) throw ParseError("init reply has no 'concepts' field");
        list = &*it;
    }
    if (!list->is_array()) throw ParseError("init reply concepts are not an array");
    std::vector<std::string> out;
    for (const auto& v : *list) {
        if (!v.is_string()) throw ParseError("init reply contains a non-string concept");
        out.push_back(v.get<std::string>());
    }
    return out;
}

ConceptLibrary init_concepts(const LabelSet& labels, ChatService& llm, const InitConceptsOptions& options) {
    if (options.prompt_template.find("{class}") == std::string::npos)
        throw ConfigError("init prompt template lacks a {class} placeholder");

    std::vector<std::vector<Concept>> per_class(labels.size());
    std::vector<std::optional<Error>> failures(labels.size());

    bounded_for(labels.size(), options.max_inflight, [&](std::size_t i) {
        ChatRequest req;
        req.messages = {{"user", fill_template(options.prompt_template, "class", labels[i])}};
        std::optional<ParseError> last_parse;
        for (int attempt = 0; attempt < std::max(options.retry_budget, 1); ++attempt) {
            std::vector<std::string> raw;
            try {
                raw = parse_init_reply(llm.complete(req));
            } catch (const ParseError& e) {
                last_parse = e;
                continue;
            }
            std::unordered_set<std::string> keys;
            std::vector<Concept> kept;
            for (const auto& text : raw) {
                auto clean = sanitize_concept_text(text, options.max_concept_chars);
                if (!clean || !keys.insert(concept_key(*clean)).second) continue;
                kept.push_back({std::move(*clean), ConceptOrigin::initial(), 0});
            }
            if (kept.size() >= options.min_initial_concepts) {
                per_class[i] = std::move(kept);
                return;
            }
            failures[i] = EmptyClass("class '" + labels[i] + "' received " + std::to_string(kept.size()) +
                                     " valid concepts, need " + std::to_string(options.min_initial_concepts));
            last_parse.reset();
        }
        if (last_parse) throw ParseError("class '" + labels[i] + "': " + last_parse->what());
    });

    for (std::size_t i = 0; i < labels.size(); ++i)
        if (per_class[i].empty()) throw EmptyClass(failures[i] ? failures[i]->what() : "class '" + labels[i] + "' is empty");

    return ConceptLibrary(labels, std::move(per_class), 0, options.max_concept_chars);
}

}  // namespace cevo

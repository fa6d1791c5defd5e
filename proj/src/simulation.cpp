// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/simulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cevo/errors.hpp"
#include "cevo/evolution.hpp"
#include "cevo/random.hpp"

namespace cevo {

namespace {

constexpr std::array kAdjectives = {"striped", "spotted", "glossy",  "matte",  "iridescent", "mottled",
                                    "crimson", "golden",  "slate",   "ivory",  "olive",      "barred",
                                    "speckled", "pale",   "dark",    "banded"};
constexpr std::array kParts = {"crown", "nape",  "throat", "breast", "wing bars", "tail feathers",
                               "bill",  "legs",  "eye ring", "flanks", "rump",    "primaries"};

std::vector<std::string> make_phrases(std::size_t count, std::uint64_t seed) {
    std::vector<std::string> combos;
    for (const auto* adj : kAdjectives)
        for (const auto* part : kParts) combos.push_back(std::string(adj) + " " + part);
    Rng rng(derive_seed(seed, 0x70687261ULL));
    rng.shuffle(combos);
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t a = 0; a < count; ++a) {
        if (a < combos.size()) {
            out.push_back(combos[a]);
        } else {
            out.push_back(combos[a % combos.size()] + " pattern " + std::to_string(a / combos.size()));
        }
    }
    return out;
}

std::string class_label(std::size_t c, std::size_t n) {
    const int width = n > 100 ? 3 : 2;
    char buf[32];
    std::snprintf(buf, sizeof buf, "class_%0*zu", width, c);
    return buf;
}

// Reads a JSON string literal starting at the quote at `pos`.
std::optional<std::string> read_quoted(const std::string& text, std::size_t pos, std::size_t* end = nullptr) {
    if (pos >= text.size() || text[pos] != '"') return std::nullopt;
    std::size_t k = pos + 1;
    while (k < text.size() && text[k] != '"') k += text[k] == '\\' ? 2 : 1;
    if (k >= text.size()) return std::nullopt;
    try {
        auto s = nlohmann::json::parse(text.substr(pos, k - pos + 1)).get<std::string>();
        if (end) *end = k + 1;
        return s;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

struct PairPromptView {
    std::string label_a, label_b;
    std::set<std::string> current_a, current_b;  // concept keys
    std::set<std::string> history_a, history_b;
    std::size_t history_blocks = 0;
};

PairPromptView read_pair_prompt(const std::string& text) {
    PairPromptView v;
    const std::string marker = "confuses two classes: ";
    const auto at = text.find(marker);
    std::size_t end = 0;
    auto a = read_quoted(text, at + marker.size(), &end);
    const auto sep = text.find('"', end);
    auto b = sep == std::string::npos ? std::nullopt : read_quoted(text, sep);
    if (!a || !b) throw ServiceError("simulated model could not read the class pair");
    v.label_a = *a;
    v.label_b = *b;

    const std::string qa = nlohmann::json(v.label_a).dump(), qb = nlohmann::json(v.label_b).dump();
    std::set<std::string>* bullets = nullptr;
    for (const auto& line : lines_of(text)) {
        if (line == "Current concepts for " + qa + ":") {
            bullets = &v.current_a;
            continue;
        }
        if (line == "Current concepts for " + qb + ":") {
            bullets = &v.current_b;
            continue;
        }
        if (bullets && line.rfind("- ", 0) == 0) {
            bullets->insert(concept_key(line.substr(2)));
            continue;
        }
        bullets = nullptr;
        if (line.rfind("Attempt ", 0) == 0) ++v.history_blocks;
        for (const auto& [q, into] : {std::pair{qa, &v.history_a}, std::pair{qb, &v.history_b}}) {
            const auto prefix = "Added to " + q + ": ";
            if (line.rfind(prefix, 0) != 0) continue;
            try {
                for (const auto& s : nlohmann::json::parse(line.substr(prefix.size())))
                    into->insert(concept_key(s.get<std::string>()));
            } catch (const nlohmann::json::exception&) {
                throw ServiceError("simulated model could not read a history block");
            }
        }
    }
    return v;
}

}  // namespace

SyntheticWorld::SyntheticWorld(WorldParams params, std::vector<std::string> labels,
                               std::vector<std::vector<std::size_t>> class_attrs, std::vector<std::string> phrases,
                               std::vector<WorldImage> images)
    : params_(params),
      labels_(std::move(labels)),
      class_attrs_(std::move(class_attrs)),
      phrases_(std::move(phrases)),
      images_(std::move(images)),
      owners_(phrases_.size(), 0) {
    if (class_attrs_.size() != labels_.size()) throw ConfigError("world: one attribute set per class required");
    for (std::size_t a = 0; a < phrases_.size(); ++a)
        if (!phrase_index_.emplace(concept_key(phrases_[a]), a).second)
            throw ConfigError("world: phrase map is not invertible at '" + phrases_[a] + "'");
    for (auto& attrs : class_attrs_) {
        std::sort(attrs.begin(), attrs.end());
        for (const auto a : attrs) {
            if (a >= phrases_.size()) throw ConfigError("world: attribute id out of range");
            ++owners_[a];
        }
    }
    for (std::size_t i = 0; i < class_attrs_.size(); ++i)
        for (std::size_t j = i + 1; j < class_attrs_.size(); ++j)
            if (class_attrs_[i] == class_attrs_[j])
                throw InfeasibleWorld("classes '" + labels_[i] + "' and '" + labels_[j] + "' share every attribute");
    for (std::size_t n = 0; n < images_.size(); ++n) {
        if (images_[n].label >= labels_.size()) throw ConfigError("world: image label out of range");
        std::sort(images_[n].attrs.begin(), images_[n].attrs.end());
        if (!image_index_.emplace(images_[n].id, n).second)
            throw ConfigError("world: duplicate image id '" + images_[n].id + "'");
    }
}

std::optional<std::size_t> SyntheticWorld::attribute_of(std::string_view text) const {
    const auto it = phrase_index_.find(concept_key(text));
    if (it == phrase_index_.end()) return std::nullopt;
    return it->second;
}

const WorldImage& SyntheticWorld::image(std::string_view id) const {
    const auto it = image_index_.find(std::string(id));
    if (it == image_index_.end()) throw ConfigError("world: unknown image id '" + std::string(id) + "'");
    return images_[it->second];
}

bool SyntheticWorld::has_attr(const WorldImage& img, std::size_t attr) const {
    return std::binary_search(img.attrs.begin(), img.attrs.end(), attr);
}

std::size_t SyntheticWorld::owners(std::size_t attr) const { return owners_.at(attr); }

std::vector<std::string> SyntheticWorld::canonical_phrases(ClassIndex c) const {
    auto attrs = class_attrs(c);
    std::stable_sort(attrs.begin(), attrs.end(),
                     [&](std::size_t a, std::size_t b) { return owners_[a] > owners_[b]; });
    std::vector<std::string> out;
    for (const auto a : attrs) out.push_back(phrases_[a]);
    return out;
}

DatasetManifest SyntheticWorld::manifest() const {
    std::vector<ManifestItem> items;
    items.reserve(images_.size());
    for (const auto& img : images_) items.push_back({img.id, "sim://" + img.id, img.label});
    return DatasetManifest(std::move(items), labels_.size());
}

ConceptLibrary SyntheticWorld::initial_library(double fraction) const {
    if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("initial fraction must be in (0, 1]");
    std::vector<std::vector<Concept>> per_class(num_classes());
    for (ClassIndex c = 0; c < num_classes(); ++c) {
        const auto phrases = canonical_phrases(c);
        const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(phrases.size())));
        for (std::size_t k = 0; k < keep && k < phrases.size(); ++k)
            per_class[c].push_back({phrases[k], ConceptOrigin::initial(), 0});
    }
    return ConceptLibrary(label_set(), std::move(per_class));
}

ConceptLibrary SyntheticWorld::full_library() const { return initial_library(1.0); }

nlohmann::json SyntheticWorld::to_json() const {
    auto images = nlohmann::json::array();
    for (const auto& img : images_) images.push_back({{"id", img.id}, {"label", img.label}, {"attrs", img.attrs}});
    return {{"params",
             {{"n_classes", params_.n_classes},
              {"attrs_per_class", params_.attrs_per_class},
              {"overlap", params_.overlap},
              {"noise_sigma", params_.noise_sigma},
              {"seed", params_.seed},
              {"images_per_class", params_.images_per_class},
              {"flip_prob", params_.flip_prob},
              {"base_hit", params_.base_hit},
              {"base_miss", params_.base_miss}}},
            {"labels", labels_},
            {"class_attrs", class_attrs_},
            {"phrases", phrases_},
            {"images", std::move(images)}};
}

SyntheticWorld SyntheticWorld::from_json(const nlohmann::json& j) {
    try {
        const auto& p = j.at("params");
        WorldParams params{p.at("n_classes").get<std::size_t>(),   p.at("attrs_per_class").get<std::size_t>(),
                           p.at("overlap").get<double>(),          p.at("noise_sigma").get<double>(),
                           p.at("seed").get<std::uint64_t>(),      p.at("images_per_class").get<std::size_t>(),
                           p.at("flip_prob").get<double>(),        p.at("base_hit").get<double>(),
                           p.at("base_miss").get<double>()};
        std::vector<WorldImage> images;
        for (const auto& img : j.at("images"))
            images.push_back({img.at("id").get<std::string>(), img.at("label").get<ClassIndex>(),
                              img.at("attrs").get<std::vector<std::size_t>>()});
        return SyntheticWorld(params, j.at("labels").get<std::vector<std::string>>(),
                              j.at("class_attrs").get<std::vector<std::vector<std::size_t>>>(),
                              j.at("phrases").get<std::vector<std::string>>(), std::move(images));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed world: ") + e.what());
    }
}

void SyntheticWorld::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write world to " + path.string());
    out << to_json().dump(2) << "\n";
}

SyntheticWorld SyntheticWorld::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read world from " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed world file: ") + e.what());
    }
}

SyntheticWorld generate_world(const WorldParams& params) {
    if (params.n_classes < 1 || params.attrs_per_class < 1 || params.images_per_class < 1)
        throw ConfigError("world sizes must be positive");
    if (!(params.overlap >= 0.0 && params.overlap < 1.0)) throw ConfigError("overlap must be in [0, 1)");
    if (!(params.noise_sigma >= 0.0) || !(params.flip_prob >= 0.0 && params.flip_prob <= 1.0))
        throw ConfigError("noise parameters out of range");

    const std::size_t n = params.attrs_per_class;
    const auto shared = static_cast<std::size_t>(std::lround(params.overlap * static_cast<double>(n)));
    const std::size_t stride = n - std::min(shared, n);
    if (stride == 0 && params.n_classes > 1)
        throw InfeasibleWorld("overlap " + std::to_string(params.overlap) + " leaves adjacent classes with " +
                              "identical attribute sets at " + std::to_string(n) + " attributes per class");

    const std::size_t universe = (params.n_classes - 1) * stride + n;
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> class_attrs(params.n_classes);
    for (std::size_t c = 0; c < params.n_classes; ++c) {
        labels.push_back(class_label(c, params.n_classes));
        for (std::size_t a = 0; a < n; ++a) class_attrs[c].push_back(c * stride + a);
    }

    std::vector<WorldImage> images;
    for (std::size_t c = 0; c < params.n_classes; ++c)
        for (std::size_t k = 0; k < params.images_per_class; ++k) {
            WorldImage img;
            const std::size_t idx = c * params.images_per_class + k;
            char buf[32];
            std::snprintf(buf, sizeof buf, "img_%05zu", idx);
            img.id = buf;
            img.label = c;
            Rng rng(derive_seed(params.seed, 0x666c6970ULL, idx));
            for (std::size_t a = 0; a < universe; ++a) {
                const bool owned = a >= c * stride && a < c * stride + n;
                const bool flip = params.flip_prob > 0.0 && rng.uniform() < params.flip_prob;
                if (owned != flip) img.attrs.push_back(a);
            }
            images.push_back(std::move(img));
        }
    return SyntheticWorld(params, std::move(labels), std::move(class_attrs), make_phrases(universe, params.seed),
                          std::move(images));
}

double simulated_score(const SyntheticWorld& world, std::string_view image_id, std::string_view concept_text) {
    const auto& p = world.params();
    const auto attr = world.attribute_of(concept_text);
    const double base = attr && world.has_attr(world.image(image_id), *attr) ? p.base_hit : p.base_miss;
    if (p.noise_sigma == 0.0) return base;
    const auto h = derive_seed(p.seed, fnv1a64(image_id), fnv1a64(concept_key(concept_text)));
    return base + p.noise_sigma * standard_normal(splitmix64(h), splitmix64(h ^ 0x5bd1e995ULL));
}

Matrix<float> SimulatedScorer::score_columns(const DatasetManifest& manifest, std::span<const ColumnRequest> columns) {
    Matrix<float> out(manifest.size(), columns.size());
    for (std::size_t r = 0; r < manifest.size(); ++r)
        for (std::size_t c = 0; c < columns.size(); ++c)
            out(r, c) = static_cast<float>(simulated_score(*world_, manifest[r].image_id, columns[c].concept_text));
    return out;
}

SimulatedLlmMode parse_llm_mode(std::string_view text) {
    if (text == "contrastive") return SimulatedLlmMode::contrastive;
    if (text == "forgetful") return SimulatedLlmMode::forgetful;
    if (text == "random_critic") return SimulatedLlmMode::random_critic;
    throw ConfigError("unknown simulated model mode '" + std::string(text) + "'");
}

const char* to_string(SimulatedLlmMode mode) {
    switch (mode) {
        case SimulatedLlmMode::contrastive: return "contrastive";
        case SimulatedLlmMode::forgetful: return "forgetful";
        case SimulatedLlmMode::random_critic: return "random_critic";
    }
    return "unknown";
}

SimulatedLlm::SimulatedLlm(std::shared_ptr<const SyntheticWorld> world, SimulatedLlmOptions options)
    : world_(std::move(world)), options_(options) {
    if (options_.per_reply < 1) throw ConfigError("simulated model must propose at least one concept");
}

std::string SimulatedLlm::complete(const ChatRequest& request) {
    std::string text;
    for (const auto& m : request.messages)
        if (m.role == "user") text += m.content + "\n";
    if (text.find("confuses two classes: ") != std::string::npos) return answer_pair(text, request_key(request));
    return answer_init(text);
}

std::string SimulatedLlm::answer_init(const std::string& text) const {
    std::optional<ClassIndex> best;
    for (ClassIndex c = 0; c < world_->num_classes(); ++c) {
        const auto q = nlohmann::json(world_->labels()[c]).dump();
        if (text.find(q) == std::string::npos) continue;
        if (!best || world_->labels()[c].size() > world_->labels()[*best].size()) best = c;
    }
    if (!best) throw ServiceError("simulated model found no known class in the prompt");
    const auto phrases = world_->canonical_phrases(*best);
    const auto keep = static_cast<std::size_t>(std::ceil(options_.init_fraction * static_cast<double>(phrases.size())));
    const std::vector<std::string> reply(phrases.begin(),
                                         phrases.begin() + static_cast<std::ptrdiff_t>(std::min(keep, phrases.size())));
    return nlohmann::json{{"concepts", reply}}.dump();
}

std::string SimulatedLlm::answer_pair(const std::string& text, const std::string& key) const {
    const auto view = read_pair_prompt(text);
    const auto& labels = world_->labels();
    const auto find = [&](const std::string& name) {
        const auto it = std::find(labels.begin(), labels.end(), name);
        if (it == labels.end()) throw ServiceError("simulated model does not know class '" + name + "'");
        return static_cast<ClassIndex>(it - labels.begin());
    };
    const ClassIndex a = find(view.label_a), b = find(view.label_b);

    const auto contrastive = [&](ClassIndex self, ClassIndex other, const std::set<std::string>& current,
                                 const std::set<std::string>* tried) {
        const auto& mine = world_->class_attrs(self);
        const auto& theirs = world_->class_attrs(other);
        std::vector<std::string> out;
        for (const auto attr : mine) {
            if (out.size() >= options_.per_reply) break;
            if (std::binary_search(theirs.begin(), theirs.end(), attr)) continue;
            const auto k = concept_key(world_->phrase(attr));
            if (current.count(k) || (tried && tried->count(k))) continue;
            out.push_back(world_->phrase(attr));
        }
        return out;
    };

    std::vector<std::string> for_a, for_b;
    std::string reasoning;
    switch (options_.mode) {
        case SimulatedLlmMode::contrastive:
            for_a = contrastive(a, b, view.current_a, nullptr);
            for_b = contrastive(b, a, view.current_b, nullptr);
            reasoning = "Listing attributes that only one of the two classes shows.";
            break;
        case SimulatedLlmMode::forgetful:
            if (view.history_blocks == 0) {
                for (const auto& [self, into] : {std::pair{a, &for_a}, std::pair{b, &for_b}}) {
                    const auto phrases = world_->canonical_phrases(self);
                    for (std::size_t k = 0; k < options_.per_reply && k < phrases.size(); ++k)
                        into->push_back(phrases[k]);
                }
                reasoning = "Listing the most typical attributes of each class.";
            } else {
                for_a = contrastive(a, b, view.current_a, &view.history_a);
                for_b = contrastive(b, a, view.current_b, &view.history_b);
                reasoning = "Earlier attempts are listed; proposing attributes that were not tried.";
            }
            break;
        case SimulatedLlmMode::random_critic: {
            Rng rng(derive_seed(options_.seed, fnv1a64(key)));
            for (const auto& [current, into] : {std::pair{&view.current_a, &for_a}, std::pair{&view.current_b, &for_b}}) {
                std::vector<std::size_t> unused;
                for (std::size_t attr = 0; attr < world_->num_attributes(); ++attr)
                    if (!current->count(concept_key(world_->phrase(attr)))) unused.push_back(attr);
                if (!unused.empty()) into->push_back(world_->phrase(unused[rng.below(unused.size())]));
            }
            reasoning = "Picking an attribute.";
            break;
        }
    }
    return nlohmann::json{{"reasoning", reasoning},
                          {concepts_key(view.label_a), for_a},
                          {concepts_key(view.label_b), for_b}}
        .dump();
}

}  // namespace cevo

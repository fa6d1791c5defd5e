// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/concept_model.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cevo/errors.hpp"
#include "cevo/random.hpp"

namespace cevo {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

nlohmann::json origin_to_json(const ConceptOrigin& o) {
    if (o.kind == ConceptOrigin::Kind::initial) return {{"kind", "initial"}};
    return {{"kind", "evolved"},
            {"iteration", o.iteration},
            {"pair", {o.pair.first, o.pair.second}}};
}

ConceptOrigin origin_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "initial") return ConceptOrigin::initial();
    if (kind == "evolved") {
        const auto& p = j.at("pair");
        return ConceptOrigin::evolved(j.at("iteration").get<std::size_t>(),
                                      ClassPair(p.at(0).get<ClassIndex>(), p.at(1).get<ClassIndex>()));
    }
    throw ParseError("unknown concept origin '" + kind + "'");
}

}  // namespace

nlohmann::json concept_to_json(const Concept& c) {
    return {{"text", c.text}, {"origin", origin_to_json(c.origin)}, {"created_at_iteration", c.created_at_iteration}};
}

Concept concept_from_json(const nlohmann::json& j) {
    return {j.at("text").get<std::string>(), origin_from_json(j.at("origin")),
            j.at("created_at_iteration").get<std::size_t>()};
}

LabelSet::LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw ConfigError("label set is empty");
    std::set<std::string_view> seen;
    for (const auto& l : labels_) {
        if (l.empty()) throw ConfigError("empty label name");
        if (!seen.insert(l).second) throw ConfigError("duplicate label '" + l + "'");
    }
}

std::optional<ClassIndex> LabelSet::index_of(std::string_view name) const {
    const auto it = std::find(labels_.begin(), labels_.end(), name);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<ClassIndex>(it - labels_.begin());
}

std::optional<std::string> sanitize_concept_text(std::string_view raw, std::size_t max_chars) {
    const auto t = trim(raw);
    if (t.empty() || t.size() > max_chars) return std::nullopt;
    return std::string(t);
}

std::string concept_key(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : trim(text)) {
        if (is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::string ConceptId::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

ConceptId ConceptId::from_hex(std::string_view hex) {
    if (hex.size() != 16) throw ParseError("bad concept id '" + std::string(hex) + "'");
    std::uint64_t v = 0;
    for (char c : hex) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw ParseError("bad concept id '" + std::string(hex) + "'");
    }
    return {v};
}

ConceptId make_concept_id(std::string_view label, std::string_view text) {
    auto h = fnv1a64(label);
    h = fnv1a64("\x1f", h);
    return {fnv1a64(concept_key(text), h)};
}

ConceptLibrary::ConceptLibrary(LabelSet labels, std::vector<std::vector<Concept>> per_class,
                               std::size_t version, std::size_t max_concept_chars)
    : labels_(std::move(labels)),
      per_class_(std::move(per_class)),
      version_(version),
      max_chars_(max_concept_chars) {
    if (per_class_.size() != labels_.size())
        throw ConfigError("library has " + std::to_string(per_class_.size()) + " classes, labels " +
                          std::to_string(labels_.size()));
    for (ClassIndex i = 0; i < per_class_.size(); ++i) {
        if (per_class_[i].empty()) throw EmptyClass("class '" + labels_[i] + "' has no concepts");
        std::unordered_set<std::string> keys;
        for (const auto& c : per_class_[i]) {
            const auto clean = sanitize_concept_text(c.text, max_chars_);
            if (!clean || *clean != c.text)
                throw InvalidConcept("class '" + labels_[i] + "': invalid concept text '" + c.text + "'");
            if (!keys.insert(concept_key(c.text)).second)
                throw InvalidConcept("class '" + labels_[i] + "': duplicate concept '" + c.text + "'");
        }
    }
}

std::size_t ConceptLibrary::total_concepts() const noexcept {
    std::size_t n = 0;
    for (const auto& v : per_class_) n += v.size();
    return n;
}

bool ConceptLibrary::contains(ClassIndex i, std::string_view text) const {
    const auto key = concept_key(text);
    const auto& list = per_class_.at(i);
    return std::any_of(list.begin(), list.end(),
                       [&](const Concept& c) { return concept_key(c.text) == key; });
}

std::vector<ConceptId> ConceptLibrary::column_ids() const {
    std::vector<ConceptId> ids;
    ids.reserve(total_concepts());
    for (ClassIndex i = 0; i < per_class_.size(); ++i)
        for (const auto& c : per_class_[i]) ids.push_back(make_concept_id(labels_[i], c.text));
    return ids;
}

std::vector<ClassIndex> ConceptLibrary::column_classes() const {
    std::vector<ClassIndex> cls;
    cls.reserve(total_concepts());
    for (ClassIndex i = 0; i < per_class_.size(); ++i) cls.insert(cls.end(), per_class_[i].size(), i);
    return cls;
}

ConceptLibrary ConceptLibrary::with_version(std::size_t version) const {
    ConceptLibrary out = *this;
    out.version_ = version;
    return out;
}

nlohmann::json ConceptLibrary::to_json() const {
    nlohmann::json classes = nlohmann::json::object();
    for (ClassIndex i = 0; i < per_class_.size(); ++i) {
        auto arr = nlohmann::json::array();
        for (const auto& c : per_class_[i]) arr.push_back(concept_to_json(c));
        classes[labels_[i]] = std::move(arr);
    }
    return {{"version", version_}, {"labels", labels_.names()}, {"classes", std::move(classes)}};
}

ConceptLibrary ConceptLibrary::from_json(const nlohmann::json& j, std::size_t max_concept_chars) {
    try {
        LabelSet labels(j.at("labels").get<std::vector<std::string>>());
        std::vector<std::vector<Concept>> per_class(labels.size());
        const auto& classes = j.at("classes");
        if (classes.size() != labels.size()) throw ParseError("library classes do not match labels");
        for (ClassIndex i = 0; i < labels.size(); ++i) {
            for (const auto& c : classes.at(labels[i])) per_class[i].push_back(concept_from_json(c));
        }
        return ConceptLibrary(std::move(labels), std::move(per_class), j.at("version").get<std::size_t>(),
                              max_concept_chars);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed library document: ") + e.what());
    }
}

std::string ConceptLibrary::serialize() const { return to_json().dump(2) + "\n"; }

void ConceptLibrary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << serialize();
}

ConceptLibrary ConceptLibrary::load(const std::filesystem::path& path, std::size_t max_concept_chars) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return from_json(j, max_concept_chars);
}

ConceptLibrary merge_concepts(const ConceptLibrary& lib, ClassIndex class_idx,
                              std::span<const Concept> added) {
    ConceptLibrary out = lib;
    auto& list = out.per_class_.at(class_idx);
    std::unordered_set<std::string> keys;
    for (const auto& c : list) keys.insert(concept_key(c.text));
    for (const auto& c : added) {
        auto clean = sanitize_concept_text(c.text, lib.max_chars_);
        if (!clean) continue;
        if (!keys.insert(concept_key(*clean)).second) continue;
        Concept copy = c;
        copy.text = std::move(*clean);
        list.push_back(std::move(copy));
    }
    return out;
}

DatasetManifest::DatasetManifest(std::vector<ManifestItem> items, std::size_t num_classes)
    : items_(std::move(items)) {
    std::unordered_set<std::string> ids;
    for (const auto& it : items_) {
        if (!ids.insert(it.image_id).second) throw ConfigError("duplicate image id '" + it.image_id + "'");
        if (it.label && *it.label >= num_classes)
            throw ConfigError("image '" + it.image_id + "' has out-of-range label");
    }
}

bool DatasetManifest::fully_labeled() const {
    return std::all_of(items_.begin(), items_.end(), [](const ManifestItem& it) { return it.label.has_value(); });
}

std::vector<ClassIndex> DatasetManifest::labels() const {
    std::vector<ClassIndex> out;
    out.reserve(items_.size());
    for (const auto& it : items_) {
        if (!it.label) throw NoLabels("image '" + it.image_id + "' has no label");
        out.push_back(*it.label);
    }
    return out;
}

std::vector<std::string> DatasetManifest::image_ids() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back(it.image_id);
    return out;
}

DatasetManifest DatasetManifest::read_jsonl(const std::filesystem::path& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::vector<ManifestItem> items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestItem item{j.at("image_id").get<std::string>(), j.value("image_ref", std::string{}), {}};
            if (const auto it = j.find("label"); it != j.end() && !it->is_null()) {
                if (it->is_number_integer()) {
                    item.label = it->get<ClassIndex>();
                } else {
                    const auto idx = labels.index_of(it->get<std::string>());
                    if (!idx) throw ConfigError("unknown label '" + it->get<std::string>() + "'");
                    item.label = *idx;
                }
            }
            items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return DatasetManifest(std::move(items), labels.size());
}

void DatasetManifest::write_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (const auto& it : items_) {
        nlohmann::json j{{"image_id", it.image_id}, {"image_ref", it.image_ref}};
        if (it.label) j["label"] = *it.label;
        out << j.dump() << "\n";
    }
}

std::string fill_template(std::string_view tmpl, std::string_view key, std::string_view value) {
    const std::string needle = "{" + std::string(key) + "}";
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto hit = tmpl.find(needle, pos);
        if (hit == std::string_view::npos) break;
        out.append(tmpl.substr(pos, hit - pos));
        out.append(value);
        pos = hit + needle.size();
    }
    out.append(tmpl.substr(pos));
    return out;
}

}  // namespace cevo

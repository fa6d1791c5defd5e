// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/scoring.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

#include "cevo/errors.hpp"
#include "cevo/parallel.hpp"
#include "cevo/random.hpp"

namespace cevo {

namespace {

constexpr char kMagic[8] = {'C', 'E', 'V', 'O', 'S', 'C', 'R', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8;

std::string file_safe(std::string_view s) {
    std::string out;
    for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
    return out;
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CacheCorrupt("score cache truncated");
    return v;
}

}  // namespace

std::uint64_t column_checksum(std::span<const float> values) {
    return fnv1a64({reinterpret_cast<const char*>(values.data()), values.size_bytes()});
}

ScoreCache::ScoreCache(std::vector<std::string> row_ids) : row_ids_(std::move(row_ids)) {}

std::shared_ptr<ScoreCache> ScoreCache::open(const std::filesystem::path& dir, const std::string& backbone_id,
                                             const std::string& dataset_id, std::vector<std::string> row_ids) {
    std::filesystem::create_directories(dir);
    auto cache = std::make_shared<ScoreCache>(std::move(row_ids));
    const auto stem = file_safe(backbone_id) + "__" + file_safe(dataset_id);
    cache->block_path_ = dir / (stem + ".bin");
    cache->index_path_ = dir / (stem + ".index.json");
    cache->backbone_id_ = backbone_id;
    cache->dataset_id_ = dataset_id;
    const auto n = cache->row_ids_.size();

    if (!std::filesystem::exists(cache->block_path_)) {
        std::ofstream out(cache->block_path_, std::ios::binary);
        out.write(kMagic, sizeof kMagic);
        write_pod(out, kFormatVersion);
        write_pod(out, kDtypeF32);
        write_pod(out, static_cast<std::uint64_t>(n));
        if (!out) throw ConfigError("cannot create score cache " + cache->block_path_.string());
        out.close();
        std::lock_guard lock(cache->mutex_);
        cache->write_index_locked();
        return cache;
    }

    std::ifstream in(cache->block_path_, std::ios::binary);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CacheCorrupt("bad score cache magic");
    if (read_pod<std::uint32_t>(in) != kFormatVersion) throw CacheCorrupt("unsupported score cache version");
    if (read_pod<std::uint32_t>(in) != kDtypeF32) throw CacheCorrupt("unsupported score cache dtype");
    if (read_pod<std::uint64_t>(in) != n) throw CacheCorrupt("score cache row count differs from manifest");

    nlohmann::json index;
    try {
        std::ifstream idx(cache->index_path_);
        if (!idx) throw CacheCorrupt("score cache index missing: " + cache->index_path_.string());
        index = nlohmann::json::parse(idx);
    } catch (const nlohmann::json::exception& e) {
        throw CacheCorrupt(std::string("score cache index unreadable: ") + e.what());
    }
    if (index.value("row_ids", std::vector<std::string>{}) != cache->row_ids_)
        throw CacheCorrupt("score cache row ids differ from manifest");

    for (const auto& [hex, entry] : index.at("columns").items()) {
        const auto id = ConceptId::from_hex(hex);
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto expected = ConceptId::from_hex(entry.at("checksum").get<std::string>()).value;
        in.seekg(static_cast<std::streamoff>(offset));
        if (read_pod<std::uint64_t>(in) != id.value) throw CacheCorrupt("score cache block id mismatch for " + hex);
        const auto stored = read_pod<std::uint64_t>(in);
        std::vector<float> values(n);
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw CacheCorrupt("score cache truncated in column " + hex);
        if (stored != expected || column_checksum(values) != expected)
            throw CacheCorrupt("checksum mismatch in column " + hex);
        cache->columns_.emplace(id, std::move(values));
        cache->offsets_.emplace(id, std::pair{offset, expected});
    }
    return cache;
}

bool ScoreCache::contains(ConceptId id) const {
    std::lock_guard lock(mutex_);
    return columns_.contains(id);
}

std::optional<std::vector<float>> ScoreCache::column(ConceptId id) const {
    std::lock_guard lock(mutex_);
    const auto it = columns_.find(id);
    if (it == columns_.end()) return std::nullopt;
    return it->second;
}

std::size_t ScoreCache::num_columns() const {
    std::lock_guard lock(mutex_);
    return columns_.size();
}

void ScoreCache::put(ConceptId id, std::span<const float> values) {
    if (values.size() != row_ids_.size())
        throw ShapeError("column has " + std::to_string(values.size()) + " rows, cache expects " +
                         std::to_string(row_ids_.size()));
    std::lock_guard lock(mutex_);
    if (columns_.contains(id)) return;
    const auto checksum = column_checksum(values);
    if (!block_path_.empty()) {
        const auto offset = std::filesystem::file_size(block_path_);
        std::ofstream out(block_path_, std::ios::binary | std::ios::app);
        write_pod(out, id.value);
        write_pod(out, checksum);
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
        out.flush();
        if (!out) throw ConfigError("failed writing score cache " + block_path_.string());
        offsets_.emplace(id, std::pair{offset, checksum});
    }
    columns_.emplace(id, std::vector<float>(values.begin(), values.end()));
    if (!block_path_.empty()) write_index_locked();
}

void ScoreCache::write_index_locked() const {
    nlohmann::json columns = nlohmann::json::object();
    for (const auto& [id, entry] : offsets_)
        columns[id.hex()] = {{"offset", entry.first}, {"checksum", ConceptId{entry.second}.hex()}};
    const nlohmann::json index{{"backbone", backbone_id_},
                               {"dataset", dataset_id_},
                               {"n", row_ids_.size()},
                               {"dtype", "f32"},
                               {"header_bytes", kHeaderBytes},
                               {"row_ids", row_ids_},
                               {"columns", std::move(columns)}};
    auto tmp = index_path_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << index.dump(1) << "\n";
        if (!out) throw ConfigError("failed writing score cache index " + tmp.string());
    }
    std::filesystem::rename(tmp, index_path_);
}

std::vector<ColumnRequest> column_requests(const ConceptLibrary& lib, const std::string& template_text) {
    std::vector<ColumnRequest> out;
    out.reserve(lib.total_concepts());
    for (ClassIndex i = 0; i < lib.num_classes(); ++i) {
        const auto& label = lib.labels()[i];
        for (const auto& c : lib.concepts(i)) {
            auto text = fill_template(fill_template(template_text, "class", label), "concept", c.text);
            out.push_back({make_concept_id(label, c.text), i, label, c.text, std::move(text)});
        }
    }
    return out;
}

Scorer::Scorer(std::shared_ptr<ScorerBackend> backend, std::shared_ptr<ScoreCache> cache, ScoringOptions options)
    : backend_(std::move(backend)), cache_(std::move(cache)), options_(std::move(options)) {
    if (options_.template_text.find("{concept}") == std::string::npos)
        throw ConfigError("score template lacks a {concept} placeholder");
}

ScoreMatrix Scorer::score(const DatasetManifest& manifest, const ConceptLibrary& lib) {
    const auto requests = column_requests(lib, options_.template_text);
    const auto row_ids = manifest.image_ids();
    if (cache_->row_ids() != row_ids) throw ShapeError("score cache rows do not match the manifest");
    stats_ = {};

    std::vector<ColumnRequest> missing;
    for (const auto& r : requests)
        if (!cache_->contains(r.id)) missing.push_back(r);

    const std::size_t per_call = std::max<std::size_t>(options_.columns_per_call, 1);
    const std::size_t batches = (missing.size() + per_call - 1) / per_call;
    bounded_for(batches, options_.max_inflight, [&](std::size_t b) {
        const auto first = b * per_call;
        const auto count = std::min(per_call, missing.size() - first);
        const std::span<const ColumnRequest> slice(missing.data() + first, count);
        const auto block = backend_->score_columns(manifest, slice);
        if (block.rows() != row_ids.size() || block.cols() != count)
            throw ShapeError("backend returned " + std::to_string(block.rows()) + "x" + std::to_string(block.cols()) +
                             ", expected " + std::to_string(row_ids.size()) + "x" + std::to_string(count));
        for (std::size_t c = 0; c < count; ++c) {
            const auto col = block.column(c);
            for (float v : col)
                if (!std::isfinite(v)) throw ShapeError("backend returned a non-finite score");
            cache_->put(slice[c].id, col);
        }
    });
    stats_.backend_calls = batches;
    stats_.scored_columns = missing.size();
    stats_.cache_hits = (requests.size() - missing.size()) * row_ids.size();

    ScoreMatrix out{Matrix<float>(row_ids.size(), requests.size()), row_ids, {}};
    out.col_ids.reserve(requests.size());
    for (std::size_t c = 0; c < requests.size(); ++c) {
        const auto col = cache_->column(requests[c].id);
        if (!col) throw CacheCorrupt("column " + requests[c].id.hex() + " vanished from cache");
        for (std::size_t r = 0; r < row_ids.size(); ++r) out.values(r, c) = (*col)[r];
        out.col_ids.push_back(requests[c].id);
    }
    return out;
}

std::vector<ConceptId> incremental_columns(const ScoreMatrix& old, const ConceptLibrary& lib_new) {
    const auto ids = lib_new.column_ids();
    const std::set<ConceptId> fresh(ids.begin(), ids.end());
    for (const auto& id : old.col_ids)
        if (!fresh.contains(id))
            throw IncompatibleVersions("column " + id.hex() + " is missing from the newer library");
    const std::set<ConceptId> known(old.col_ids.begin(), old.col_ids.end());
    std::vector<ConceptId> out;
    for (const auto& id : ids)
        if (!known.contains(id)) out.push_back(id);
    return out;
}

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw ShapeError("cosine of vectors with different lengths");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

EmbeddingServiceScorer::EmbeddingServiceScorer(EmbeddingOptions options) : options_(std::move(options)) {}

std::vector<std::vector<float>> EmbeddingServiceScorer::embed(const nlohmann::json& inputs) {
    std::vector<std::vector<float>> out;
    out.reserve(inputs.size());
    const std::size_t limit = std::max<std::size_t>(options_.batch_limit, 1);
    for (std::size_t first = 0; first < inputs.size(); first += limit) {
        auto batch = nlohmann::json::array();
        for (std::size_t i = first; i < std::min(inputs.size(), first + limit); ++i) batch.push_back(inputs[i]);
        const auto body = nlohmann::json{{"model", options_.model}, {"input", batch}}.dump();

        std::string last_error;
        bool done = false;
        for (int attempt = 0; attempt <= options_.max_retries && !done; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
            httplib::Client client(options_.base_url);
            auto res = client.Post("/v1/embeddings", body, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 503 || res->status == 429) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw ServiceError("embeddings endpoint returned HTTP " + std::to_string(res->status));
            try {
                const auto j = nlohmann::json::parse(res->body);
                const auto& data = j.at("data");
                if (data.size() != batch.size())
                    throw ShapeError("embeddings endpoint returned " + std::to_string(data.size()) +
                                     " vectors for " + std::to_string(batch.size()) + " inputs");
                for (const auto& d : data) out.push_back(d.at("embedding").get<std::vector<float>>());
            } catch (const nlohmann::json::exception& e) {
                throw ServiceError(std::string("malformed embeddings response: ") + e.what());
            }
            done = true;
        }
        if (!done) throw ServiceError("embeddings endpoint failed: " + last_error);
    }
    return out;
}

const std::vector<std::vector<float>>& EmbeddingServiceScorer::image_embeddings(const DatasetManifest& manifest) {
    std::lock_guard lock(image_mutex_);
    auto ids = manifest.image_ids();
    if (ids != image_ids_) {
        auto inputs = nlohmann::json::array();
        for (const auto& id : ids) inputs.push_back({{"image_id", id}});
        image_vectors_ = embed(inputs);
        image_ids_ = std::move(ids);
    }
    return image_vectors_;
}

Matrix<float> EmbeddingServiceScorer::score_columns(const DatasetManifest& manifest,
                                                    std::span<const ColumnRequest> columns) {
    const auto& images = image_embeddings(manifest);
    auto inputs = nlohmann::json::array();
    for (const auto& c : columns) inputs.push_back(c.scored_text);
    const auto texts = embed(inputs);
    Matrix<float> out(images.size(), columns.size());
    for (std::size_t r = 0; r < images.size(); ++r)
        for (std::size_t c = 0; c < columns.size(); ++c)
            out(r, c) = static_cast<float>(cosine(images[r], texts[c]));
    return out;
}

CacheFileScorer::CacheFileScorer(std::shared_ptr<ScoreCache> cache, std::string backbone_id)
    : cache_(std::move(cache)), backbone_id_(std::move(backbone_id)) {}

Matrix<float> CacheFileScorer::score_columns(const DatasetManifest& manifest, std::span<const ColumnRequest> columns) {
    if (manifest.image_ids() != cache_->row_ids()) throw ShapeError("precomputed cache rows differ from manifest");
    Matrix<float> out(cache_->row_ids().size(), columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const auto col = cache_->column(columns[c].id);
        if (!col)
            throw ServiceError("concept '" + columns[c].concept_text + "' (" + columns[c].id.hex() +
                               ") is not in the precomputed score cache");
        for (std::size_t r = 0; r < col->size(); ++r) out(r, c) = (*col)[r];
    }
    return out;
}

}  // namespace cevo

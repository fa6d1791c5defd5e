// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Concept-image score matrices. A Scorer pairs a backend with a column cache
// so that each iteration only sends newly added concepts to the backend.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cevo/concept_model.hpp"
#include "cevo/matrix.hpp"

namespace cevo {

inline constexpr const char* kDefaultScoreTemplate = "a photo of a {class}. {concept}";

struct ScoreMatrix {
    Matrix<float> values;               // N x |C|
    std::vector<std::string> row_ids;   // image ids
    std::vector<ConceptId> col_ids;     // library flattening order

    [[nodiscard]] std::size_t rows() const noexcept { return values.rows(); }
    [[nodiscard]] std::size_t cols() const noexcept { return values.cols(); }
};

/// One concept column to be scored.
struct ColumnRequest {
    ConceptId id;
    ClassIndex class_index = 0;
    std::string label;
    std::string concept_text;
    std::string scored_text;  // template applied
};

class ScorerBackend {
public:
    virtual ~ScorerBackend() = default;
    /// Identifies the backbone; part of the on-disk cache name.
    [[nodiscard]] virtual std::string backbone_id() const = 0;
    /// Returns an N x columns.size() matrix. Must be deterministic and safe
    /// to call concurrently.
    virtual Matrix<float> score_columns(const DatasetManifest& manifest,
                                        std::span<const ColumnRequest> columns) = 0;
};

/// Append-only column store, optionally persisted as a binary block file plus
/// a JSON index sidecar. Writes are serialized; a column becomes visible only
/// once fully written.
class ScoreCache {
public:
    /// In-memory cache.
    explicit ScoreCache(std::vector<std::string> row_ids);

    /// Opens (or creates) `<dir>/<backbone>__<dataset>.bin` and its
    /// `.index.json`. Throws CacheCorrupt on header, row-id or checksum
    /// mismatch.
    static std::shared_ptr<ScoreCache> open(const std::filesystem::path& dir, const std::string& backbone_id,
                                            const std::string& dataset_id, std::vector<std::string> row_ids);

    [[nodiscard]] bool contains(ConceptId id) const;
    [[nodiscard]] std::optional<std::vector<float>> column(ConceptId id) const;
    void put(ConceptId id, std::span<const float> values);
    [[nodiscard]] std::size_t num_columns() const;
    [[nodiscard]] const std::vector<std::string>& row_ids() const noexcept { return row_ids_; }
    [[nodiscard]] const std::filesystem::path& block_path() const noexcept { return block_path_; }

private:
    void write_index_locked() const;

    std::vector<std::string> row_ids_;
    std::filesystem::path block_path_;  // empty for in-memory caches
    std::filesystem::path index_path_;
    std::string backbone_id_;
    std::string dataset_id_;
    mutable std::mutex mutex_;
    std::map<ConceptId, std::vector<float>> columns_;
    std::map<ConceptId, std::pair<std::uint64_t, std::uint64_t>> offsets_;  // id -> (offset, checksum)
};

std::uint64_t column_checksum(std::span<const float> values);

struct ScoringOptions {
    std::string template_text = kDefaultScoreTemplate;
    std::size_t max_inflight = 8;
    std::size_t columns_per_call = 32;
};

struct ScoreStats {
    std::size_t cache_hits = 0;       // matrix entries served from cache
    std::size_t backend_calls = 0;
    std::size_t scored_columns = 0;
};

class Scorer {
public:
    Scorer(std::shared_ptr<ScorerBackend> backend, std::shared_ptr<ScoreCache> cache, ScoringOptions options = {});

    /// Scores every library concept against every manifest image, consulting
    /// the cache first. Throws ServiceError, CacheCorrupt or ShapeError.
    ScoreMatrix score(const DatasetManifest& manifest, const ConceptLibrary& lib);

    [[nodiscard]] const ScoreStats& last_stats() const noexcept { return stats_; }
    [[nodiscard]] ScorerBackend& backend() noexcept { return *backend_; }

private:
    std::shared_ptr<ScorerBackend> backend_;
    std::shared_ptr<ScoreCache> cache_;
    ScoringOptions options_;
    ScoreStats stats_;
};

/// Concept ids in `lib_new` that `old` lacks, in library order. Throws
/// IncompatibleVersions when `old` has a column `lib_new` does not.
std::vector<ConceptId> incremental_columns(const ScoreMatrix& old, const ConceptLibrary& lib_new);

/// Column requests for the whole library (template applied).
std::vector<ColumnRequest> column_requests(const ConceptLibrary& lib, const std::string& template_text);

/// Cosine similarity accumulated in f64.
double cosine(std::span<const float> u, std::span<const float> v);

struct EmbeddingOptions {
    std::string base_url = "http://127.0.0.1:8080";
    std::string model = "ViT-L/14";
    std::size_t batch_limit = 256;
    int max_retries = 3;
};

/// Scores through an OpenAI-style POST /v1/embeddings endpoint: text inputs
/// are strings, image inputs are `{"image_id": ...}` objects. Scores are raw
/// cosine similarities.
class EmbeddingServiceScorer final : public ScorerBackend {
public:
    explicit EmbeddingServiceScorer(EmbeddingOptions options);
    [[nodiscard]] std::string backbone_id() const override { return options_.model; }
    Matrix<float> score_columns(const DatasetManifest& manifest, std::span<const ColumnRequest> columns) override;

    /// Raw embeddings call; `inputs` is a JSON array.
    std::vector<std::vector<float>> embed(const nlohmann::json& inputs);

private:
    const std::vector<std::vector<float>>& image_embeddings(const DatasetManifest& manifest);

    EmbeddingOptions options_;
    std::mutex image_mutex_;
    std::vector<std::string> image_ids_;
    std::vector<std::vector<float>> image_vectors_;
};

/// Serves columns from a precomputed cache; a missing column is a
/// ServiceError.
class CacheFileScorer final : public ScorerBackend {
public:
    CacheFileScorer(std::shared_ptr<ScoreCache> cache, std::string backbone_id);
    [[nodiscard]] std::string backbone_id() const override { return backbone_id_; }
    Matrix<float> score_columns(const DatasetManifest& manifest, std::span<const ColumnRequest> columns) override;

private:
    std::shared_ptr<ScoreCache> cache_;
    std::string backbone_id_;
};

}  // namespace cevo

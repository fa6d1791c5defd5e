// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pairwise class-confusion heuristics over prediction logits. Every report is
// a symmetric |Y| x |Y| matrix with an exactly-zero diagonal.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "cevo/adapter.hpp"
#include "cevo/kernels.hpp"

namespace cevo {

enum class HeuristicKind { topk, pearson, agglomerative, labeled_confusion, emd, pca_corr, random };

struct HeuristicSpec {
    HeuristicKind kind = HeuristicKind::topk;
    std::size_t param = 3;  // k, n_clusters or n_components; unused otherwise

    friend bool operator==(const HeuristicSpec&, const HeuristicSpec&) = default;
};

/// "topk:3", "pearson", "agglomerative:4", "labeled", "emd", "pca:2", "random".
std::string to_string(const HeuristicSpec& spec);
HeuristicSpec parse_heuristic(std::string_view text);
bool requires_labels(const HeuristicSpec& spec);

struct ConfusionReport {
    Matrix<double> r;
    HeuristicSpec heuristic;
    std::size_t iteration = 0;

    [[nodiscard]] std::size_t num_classes() const noexcept { return r.rows(); }
    [[nodiscard]] nlohmann::json to_json(const LabelSet& labels) const;
    static ConfusionReport from_json(const nlohmann::json& j);
};

ConfusionReport topk_confusion(const PredictionMatrix& pred, std::size_t k,
                               kernels::Exec exec = kernels::Exec::parallel);
ConfusionReport pearson_confusion(const PredictionMatrix& pred, kernels::Exec exec = kernels::Exec::parallel);
/// Average-linkage clustering of logit columns under 1 - Pearson distance.
/// A pair first joined by merge m (1-based, of M = |Y| - 1) scores
/// (M - m + 1) / M when m <= |Y| - n_clusters, else 0.
ConfusionReport agglomerative_confusion(const PredictionMatrix& pred, std::size_t n_clusters);
ConfusionReport labeled_confusion(const PredictionMatrix& pred, std::span<const ClassIndex> labels);
/// 1 / (1 + W1) between the empirical distributions of two logit columns.
ConfusionReport emd_confusion(const PredictionMatrix& pred);
/// Pearson correlation after projecting the centered logit columns onto the
/// top principal directions.
ConfusionReport pca_corr_confusion(const PredictionMatrix& pred, std::size_t n_components);
/// Uninformative critic: symmetric i.i.d. uniform(0, 1) entries.
ConfusionReport random_confusion(std::size_t num_classes, std::uint64_t seed);

/// Dispatches on `spec`. `labels` is required only by labeled_confusion.
ConfusionReport calculate_similarity(const HeuristicSpec& spec, const PredictionMatrix& pred,
                                     std::optional<std::span<const ClassIndex>> labels, std::uint64_t seed);

}  // namespace cevo

// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Concept-bottleneck adapter: a |C| x |Y| weight matrix applied to concept
// scores. Zero-shot weights are block-diagonal with uniform blocks; trained
// weights minimize softmax cross-entropy plus an optional L1 penalty.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cevo/concept_model.hpp"
#include "cevo/kernels.hpp"
#include "cevo/matrix.hpp"
#include "cevo/scoring.hpp"

namespace cevo {

enum class AdapterMode { zero_shot, trained };

struct AdapterWeights {
    Matrix<float> matrix;              // |C| x |Y|
    AdapterMode mode = AdapterMode::zero_shot;
    double l1_lambda = 0.0;
    std::uint64_t seed = 0;
    std::vector<ConceptId> row_ids;    // concept of each row

    friend bool operator==(const AdapterWeights&, const AdapterWeights&) = default;
};

struct PredictionMatrix {
    Matrix<double> logits;             // N x |Y|
    std::vector<ClassIndex> argmax;    // ties to the lowest class index
};

/// Zero-shot block weights in f64: entry (c, y) is 1 / |concepts(y)| when
/// concept c belongs to class y.
Matrix<double> zero_shot_matrix(const ConceptLibrary& lib);
/// zero_shot_matrix() rounded to the f32 storage type.
AdapterWeights zero_shot_weights(const ConceptLibrary& lib);

/// Re-lays `prev` out for `lib`: rows are matched by concept id and new
/// concepts get zero rows.
AdapterWeights warm_start(const AdapterWeights& prev, const ConceptLibrary& lib);

struct FitConfig {
    double lr = 1e-2;
    std::size_t epochs = 50;
    std::size_t batch = 32;
    double l1_lambda = 0.0;
    std::uint64_t seed = 0;
    kernels::Exec exec = kernels::Exec::parallel;
};

/// Mini-batch SGD on mean softmax cross-entropy + l1_lambda * |W|_1.
/// `labels[r]` is the class of score row r. Throws NoLabels when `labels` is
/// empty and DivergedLoss on a non-finite loss.
AdapterWeights fit(const AdapterWeights& init, const ScoreMatrix& scores, std::span<const ClassIndex> labels,
                   const FitConfig& cfg);

/// f64 core of fit(); exposed for gradient-level tests.
Matrix<double> fit_f64(Matrix<double> weights, const Matrix<double>& scores, std::span<const ClassIndex> labels,
                       const FitConfig& cfg);

/// Full objective: mean cross-entropy over `rows` plus the L1 term.
double objective(const Matrix<double>& weights, const Matrix<double>& scores, std::span<const ClassIndex> labels,
                 std::span<const std::size_t> rows, double l1_lambda, Matrix<double>* grad = nullptr);

/// 1/L where L bounds the Lipschitz constant of the full-batch cross-entropy
/// gradient (0.5 * largest eigenvalue of S^T S / N). Full-batch gradient
/// descent at this step size never increases the loss.
double stable_learning_rate(const Matrix<double>& scores);

/// Throws ShapeError on a column mismatch.
PredictionMatrix evaluate(const AdapterWeights& weights, const ScoreMatrix& scores,
                          kernels::Exec exec = kernels::Exec::parallel);

/// Argmax per row, ties to the lowest index.
std::vector<ClassIndex> row_argmax(const Matrix<double>& logits);

double accuracy(const PredictionMatrix& pred, std::span<const ClassIndex> labels);

/// Up to `per_class` row indices per class, seeded, returned sorted.
std::vector<std::size_t> balanced_subsample(std::span<const ClassIndex> labels, std::size_t num_classes,
                                            std::size_t per_class, std::uint64_t seed);

ScoreMatrix select_rows(const ScoreMatrix& scores, std::span<const std::size_t> rows);

/// `<stem>.bin` holds the raw f32 row-major matrix; `<stem>.json` the header
/// `{iteration, mode, shape, seed, l1_lambda, row_ids}`.
void save_weights(const std::filesystem::path& bin_path, const AdapterWeights& w, std::size_t iteration);
AdapterWeights load_weights(const std::filesystem::path& bin_path);

const char* to_string(AdapterMode mode);

}  // namespace cevo

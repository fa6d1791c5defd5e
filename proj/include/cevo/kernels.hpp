// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Data-parallel numeric kernels. Each kernel has a serial reference and an
// OpenMP variant; the OpenMP variants partition work so that every output
// element is accumulated in the same order as the serial loop, which makes
// the two bit-identical regardless of thread count.

#pragma once

#include <cstddef>
#include <span>

#include "cevo/matrix.hpp"

namespace cevo::kernels {

enum class Exec { serial, parallel };

/// logits(n, y) = sum_c scores(n, c) * weights(c, y), accumulated in f64.
Matrix<double> logits_serial(const Matrix<float>& scores, const Matrix<float>& weights);
Matrix<double> logits_parallel(const Matrix<float>& scores, const Matrix<float>& weights);

/// counts(i, j) = number of rows whose top-k entries include both i and j.
/// Ranking is by value descending, ties to the lower column index. The
/// diagonal is zero.
Matrix<double> topk_cooccurrence_serial(const Matrix<double>& logits, std::size_t k);
Matrix<double> topk_cooccurrence_parallel(const Matrix<double>& logits, std::size_t k);

/// Pearson correlation between columns, diagonal left at 1. Throws
/// DegenerateColumn for a zero-variance column.
Matrix<double> column_correlation_serial(const Matrix<double>& x);
Matrix<double> column_correlation_parallel(const Matrix<double>& x);

/// Mean softmax cross-entropy of `scores.row(r) * weights` against
/// `labels[r]` over the rows in `rows`; writes d(loss)/d(weights) into `grad`
/// (resized to the weights' shape) when non-null.
double softmax_xent_serial(const Matrix<double>& scores, std::span<const std::size_t> labels,
                           std::span<const std::size_t> rows, const Matrix<double>& weights,
                           Matrix<double>* grad);
double softmax_xent_parallel(const Matrix<double>& scores, std::span<const std::size_t> labels,
                             std::span<const std::size_t> rows, const Matrix<double>& weights,
                             Matrix<double>* grad);

inline Matrix<double> logits(const Matrix<float>& s, const Matrix<float>& w, Exec e = Exec::parallel) {
    return e == Exec::serial ? logits_serial(s, w) : logits_parallel(s, w);
}
inline Matrix<double> topk_cooccurrence(const Matrix<double>& x, std::size_t k, Exec e = Exec::parallel) {
    return e == Exec::serial ? topk_cooccurrence_serial(x, k) : topk_cooccurrence_parallel(x, k);
}
inline Matrix<double> column_correlation(const Matrix<double>& x, Exec e = Exec::parallel) {
    return e == Exec::serial ? column_correlation_serial(x) : column_correlation_parallel(x);
}
inline double softmax_xent(const Matrix<double>& s, std::span<const std::size_t> labels,
                           std::span<const std::size_t> rows, const Matrix<double>& w,
                           Matrix<double>* grad, Exec e = Exec::parallel) {
    return e == Exec::serial ? softmax_xent_serial(s, labels, rows, w, grad)
                             : softmax_xent_parallel(s, labels, rows, w, grad);
}

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace cevo::kernels

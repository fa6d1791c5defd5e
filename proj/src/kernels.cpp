// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cevo/errors.hpp"

namespace cevo::kernels {

namespace {

void check_inner(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": inner dimensions " + std::to_string(a) + " and " +
                         std::to_string(b) + " differ");
}

// Indices of the k largest entries of `row`, value descending, ties to the
// lower index.
void top_indices(std::span<const double> row, std::size_t k, std::vector<std::size_t>& idx) {
    idx.resize(row.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    idx.resize(k);
}

void check_k(std::size_t k, std::size_t cols) {
    if (k < 1 || k > cols)
        throw ShapeError("top-k parameter " + std::to_string(k) + " outside [1, " + std::to_string(cols) + "]");
}

struct ColumnMoments {
    std::vector<double> mean;
    std::vector<double> ss;  // sum of squared deviations
};

ColumnMoments column_moments(const Matrix<double>& x) {
    const std::size_t n = x.rows(), m = x.cols();
    ColumnMoments out{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
    for (std::size_t j = 0; j < m; ++j) {
        double sum = 0.0, peak = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            sum += x(r, j);
            peak = std::max(peak, std::abs(x(r, j)));
        }
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) ss += (x(r, j) - mean) * (x(r, j) - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        if (!(sd > 1e-12 * std::max(1.0, peak)))
            throw DegenerateColumn(j, "column " + std::to_string(j) + " has zero variance");
        out.mean[j] = mean;
        out.ss[j] = ss;
    }
    return out;
}

double pair_correlation(const Matrix<double>& x, const ColumnMoments& mom, std::size_t i, std::size_t j) {
    double cov = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) cov += (x(r, i) - mom.mean[i]) * (x(r, j) - mom.mean[j]);
    const double c = cov / std::sqrt(mom.ss[i] * mom.ss[j]);
    return std::clamp(c, -1.0, 1.0);
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Matrix<double> logits_serial(const Matrix<float>& scores, const Matrix<float>& weights) {
    check_inner(scores.cols(), weights.rows(), "logits");
    Matrix<double> out(scores.rows(), weights.cols());
    for (std::size_t n = 0; n < scores.rows(); ++n)
        for (std::size_t y = 0; y < weights.cols(); ++y) {
            double acc = 0.0;
            for (std::size_t c = 0; c < scores.cols(); ++c)
                acc += static_cast<double>(scores(n, c)) * static_cast<double>(weights(c, y));
            out(n, y) = acc;
        }
    return out;
}

Matrix<double> logits_parallel(const Matrix<float>& scores, const Matrix<float>& weights) {
    check_inner(scores.cols(), weights.rows(), "logits");
    const auto rows = static_cast<std::ptrdiff_t>(scores.rows());
    const std::size_t inner = scores.cols(), out_cols = weights.cols();
    Matrix<double> out(scores.rows(), out_cols);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < rows; ++n) {
        const auto s = scores.row(static_cast<std::size_t>(n));
        auto o = out.row(static_cast<std::size_t>(n));
        for (std::size_t y = 0; y < out_cols; ++y) {
            double acc = 0.0;
            for (std::size_t c = 0; c < inner; ++c)
                acc += static_cast<double>(s[c]) * static_cast<double>(weights(c, y));
            o[y] = acc;
        }
    }
    return out;
}

Matrix<double> topk_cooccurrence_serial(const Matrix<double>& logits, std::size_t k) {
    check_k(k, logits.cols());
    const std::size_t m = logits.cols();
    Matrix<double> counts(m, m, 0.0);
    std::vector<std::size_t> idx;
    for (std::size_t n = 0; n < logits.rows(); ++n) {
        top_indices(logits.row(n), k, idx);
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b)
                if (a != b) counts(idx[a], idx[b]) += 1.0;
    }
    return counts;
}

Matrix<double> topk_cooccurrence_parallel(const Matrix<double>& logits, std::size_t k) {
    check_k(k, logits.cols());
    const std::size_t m = logits.cols();
    const auto rows = static_cast<std::ptrdiff_t>(logits.rows());
    // Integer counts held in doubles: addition is exact and order-free.
    std::vector<long long> total(m * m, 0);
#pragma omp parallel
    {
        std::vector<long long> local(m * m, 0);
        std::vector<std::size_t> idx;
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t n = 0; n < rows; ++n) {
            top_indices(logits.row(static_cast<std::size_t>(n)), k, idx);
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b)
                    if (a != b) ++local[idx[a] * m + idx[b]];
        }
#pragma omp critical
        for (std::size_t e = 0; e < m * m; ++e) total[e] += local[e];
    }
    Matrix<double> counts(m, m);
    for (std::size_t e = 0; e < m * m; ++e) counts.data()[e] = static_cast<double>(total[e]);
    return counts;
}

Matrix<double> column_correlation_serial(const Matrix<double>& x) {
    if (x.rows() < 2) throw ShapeError("correlation needs at least 2 rows");
    const auto mom = column_moments(x);
    const std::size_t m = x.cols();
    Matrix<double> r(m, m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        r(i, i) = 1.0;
        for (std::size_t j = i + 1; j < m; ++j) r(i, j) = r(j, i) = pair_correlation(x, mom, i, j);
    }
    return r;
}

Matrix<double> column_correlation_parallel(const Matrix<double>& x) {
    if (x.rows() < 2) throw ShapeError("correlation needs at least 2 rows");
    const auto mom = column_moments(x);
    const std::size_t m = x.cols();
    Matrix<double> r(m, m, 0.0);
    const auto total = static_cast<std::ptrdiff_t>(m * m);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t e = 0; e < total; ++e) {
        const auto i = static_cast<std::size_t>(e) / m, j = static_cast<std::size_t>(e) % m;
        if (i == j) r(i, i) = 1.0;
        else if (i < j) r(i, j) = r(j, i) = pair_correlation(x, mom, i, j);
    }
    return r;
}

double softmax_xent_serial(const Matrix<double>& scores, std::span<const std::size_t> labels,
                           std::span<const std::size_t> rows, const Matrix<double>& weights,
                           Matrix<double>* grad) {
    check_inner(scores.cols(), weights.rows(), "softmax_xent");
    const std::size_t C = weights.rows(), Y = weights.cols();
    if (grad) *grad = Matrix<double>(C, Y, 0.0);
    double loss = 0.0;
    std::vector<double> z(Y);
    for (const auto r : rows) {
        for (std::size_t y = 0; y < Y; ++y) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += scores(r, c) * weights(c, y);
            z[y] = acc;
        }
        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (std::size_t y = 0; y < Y; ++y) denom += std::exp(z[y] - zmax);
        loss += zmax + std::log(denom) - z[labels[r]];
        if (!grad) continue;
        for (std::size_t y = 0; y < Y; ++y) z[y] = std::exp(z[y] - zmax) / denom - (y == labels[r] ? 1.0 : 0.0);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < Y; ++y) (*grad)(c, y) += scores(r, c) * z[y];
    }
    const auto m = static_cast<double>(rows.size());
    if (grad)
        for (auto& g : grad->data()) g /= m;
    return loss / m;
}

double softmax_xent_parallel(const Matrix<double>& scores, std::span<const std::size_t> labels,
                             std::span<const std::size_t> rows, const Matrix<double>& weights,
                             Matrix<double>* grad) {
    check_inner(scores.cols(), weights.rows(), "softmax_xent");
    const std::size_t C = weights.rows(), Y = weights.cols(), M = rows.size();
    Matrix<double> delta(M, Y);  // softmax - onehot per sampled row
    std::vector<double> row_loss(M);
    const auto Mi = static_cast<std::ptrdiff_t>(M);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < Mi; ++k) {
        const auto r = rows[static_cast<std::size_t>(k)];
        auto d = delta.row(static_cast<std::size_t>(k));
        for (std::size_t y = 0; y < Y; ++y) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += scores(r, c) * weights(c, y);
            d[y] = acc;
        }
        const double zmax = *std::max_element(d.begin(), d.end());
        double denom = 0.0;
        for (std::size_t y = 0; y < Y; ++y) denom += std::exp(d[y] - zmax);
        row_loss[static_cast<std::size_t>(k)] = zmax + std::log(denom) - d[labels[r]];
        for (std::size_t y = 0; y < Y; ++y)
            d[y] = std::exp(d[y] - zmax) / denom - (y == labels[r] ? 1.0 : 0.0);
    }
    double loss = 0.0;
    for (const double l : row_loss) loss += l;

    if (grad) {
        *grad = Matrix<double>(C, Y, 0.0);
        const auto Ci = static_cast<std::ptrdiff_t>(C);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t c = 0; c < Ci; ++c) {
            auto g = grad->row(static_cast<std::size_t>(c));
            for (std::size_t k = 0; k < M; ++k) {
                const double s = scores(rows[k], static_cast<std::size_t>(c));
                for (std::size_t y = 0; y < Y; ++y) g[y] += s * delta(k, y);
            }
            for (auto& v : g) v /= static_cast<double>(M);
        }
    }
    return loss / static_cast<double>(M);
}

}  // namespace cevo::kernels

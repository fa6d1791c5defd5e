// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cevo/errors.hpp"
#include "cevo/heuristics.hpp"
#include "support.hpp"

using namespace cevo;
using cevo::test::random_matrix;

namespace {

PredictionMatrix from_logits(Matrix<double> logits) {
    PredictionMatrix p;
    p.argmax = row_argmax(logits);
    p.logits = std::move(logits);
    return p;
}

PredictionMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix<double> m(rows.size(), rows.at(0).size());
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    return from_logits(std::move(m));
}

void require_well_formed(const Matrix<double>& r) {
    REQUIRE(r.rows() == r.cols());
    for (std::size_t i = 0; i < r.rows(); ++i) {
        REQUIRE(r(i, i) == 0.0);
        for (std::size_t j = 0; j < r.cols(); ++j) {
            REQUIRE(std::isfinite(r(i, j)));
            REQUIRE(r(i, j) == r(j, i));
        }
    }
}

/// Brute-force top-k count: sort each row explicitly and compare sets.
Matrix<double> brute_topk(const Matrix<double>& x, std::size_t k) {
    const auto m = x.cols();
    Matrix<double> out(m, m, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::vector<std::size_t> idx(m);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x(r, a) > x(r, b); });
        const std::set<std::size_t> top(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                if (i != j && top.contains(i) && top.contains(j)) out(i, j) += 1.0;
    }
    return out;
}

}  // namespace

TEST_CASE("heuristic names parse and print", "[heuristics]") {
    REQUIRE(parse_heuristic("topk") == HeuristicSpec{HeuristicKind::topk, 3});
    REQUIRE(parse_heuristic("topk:5") == HeuristicSpec{HeuristicKind::topk, 5});
    REQUIRE(parse_heuristic("pca:2").kind == HeuristicKind::pca_corr);
    REQUIRE(parse_heuristic("labeled").kind == HeuristicKind::labeled_confusion);
    for (const auto* name : {"topk:4", "pearson", "agglomerative:3", "labeled", "emd", "pca:2", "random"})
        REQUIRE(to_string(parse_heuristic(name)) == name);
    REQUIRE_THROWS_AS(parse_heuristic("nope"), ConfigError);
    REQUIRE_THROWS_AS(parse_heuristic("topk:x"), ConfigError);
    REQUIRE(requires_labels(parse_heuristic("labeled")));
    REQUIRE_FALSE(requires_labels(parse_heuristic("topk")));
}

TEST_CASE("top-k confusion matches brute force", "[heuristics][property]") {
    Rng rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        const auto n = 1 + rng.below(40), m = 2 + rng.below(10);
        auto x = random_matrix<double>(n, m, rng);
        // Quantize some rows so ties occur.
        for (std::size_t r = 0; r < n; r += 3)
            for (auto& v : x.row(r)) v = std::round(v * 2.0) / 2.0;
        const auto k = 2 + rng.below(m - 1);
        const auto report = topk_confusion(from_logits(x), k);
        REQUIRE(report.r == brute_topk(x, k));
        require_well_formed(report.r);
    }
}

TEST_CASE("top-k with k equal to the class count counts every row", "[heuristics]") {
    Rng rng(2);
    const auto x = random_matrix<double>(17, 5, rng);
    const auto r = topk_confusion(from_logits(x), 5).r;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) REQUIRE(r(i, j) == (i == j ? 0.0 : 17.0));
    REQUIRE_THROWS_AS(topk_confusion(from_logits(x), 1), ConfigError);
    REQUIRE_THROWS_AS(topk_confusion(from_logits(x), 6), ConfigError);
}

TEST_CASE("Pearson confusion equals the textbook formula and is affine invariant", "[heuristics]") {
    Rng rng(3);
    const auto x = random_matrix<double>(30, 4, rng);
    const auto r = pearson_confusion(from_logits(x)).r;
    require_well_formed(r);
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = a + 1; b < 4; ++b) {
            const auto ca = x.column(a), cb = x.column(b);
            const double ma = std::accumulate(ca.begin(), ca.end(), 0.0) / 30;
            const double mb = std::accumulate(cb.begin(), cb.end(), 0.0) / 30;
            double sab = 0, saa = 0, sbb = 0;
            for (std::size_t k = 0; k < 30; ++k) {
                sab += (ca[k] - ma) * (cb[k] - mb);
                saa += (ca[k] - ma) * (ca[k] - ma);
                sbb += (cb[k] - mb) * (cb[k] - mb);
            }
            REQUIRE(std::abs(r(a, b) - sab / std::sqrt(saa) / std::sqrt(sbb)) <= 1e-10);
        }
    auto shifted = x;
    for (std::size_t n = 0; n < 30; ++n)
        for (std::size_t c = 0; c < 4; ++c) shifted(n, c) = 3.0 * x(n, c) + 7.0 * static_cast<double>(c);
    const auto rs = pearson_confusion(from_logits(shifted)).r;
    for (std::size_t e = 0; e < 16; ++e) REQUIRE(std::abs(rs.data()[e] - r.data()[e]) <= 1e-10);

    Matrix<double> flat(5, 3, 0.0);
    flat(1, 0) = 1.0;
    flat(2, 2) = 1.0;
    try {
        pearson_confusion(from_logits(flat));
        FAIL("expected DegenerateColumn");
    } catch (const DegenerateColumn& e) {
        REQUIRE(e.column() == 1);
    }
}

TEST_CASE("agglomerative confusion on hand-built columns", "[heuristics]") {
    // Columns 0 and 1 move together, 2 and 3 move together, and the two
    // groups are anti-correlated.
    const auto pred = from_rows({{1, 1.1, 0, 0.1}, {2, 2.0, -1, -1.2}, {3, 3.2, -2, -2.1}, {4, 3.9, -3, -2.9}});
    const auto full = agglomerative_confusion(pred, 1).r;
    require_well_formed(full);
    // M = 3 merges. Whichever tight pair merges first scores 3/3, the other
    // 2/3, and the final cross-group merge 1/3.
    REQUIRE(std::max(full(0, 1), full(2, 3)) == 1.0);
    REQUIRE(std::min(full(0, 1), full(2, 3)) == Catch::Approx(2.0 / 3.0));
    REQUIRE(full(0, 2) == Catch::Approx(1.0 / 3.0));
    REQUIRE(full(1, 3) == Catch::Approx(1.0 / 3.0));

    const auto cut = agglomerative_confusion(pred, 2).r;
    REQUIRE(cut(0, 2) == 0.0);
    REQUIRE(cut(1, 3) == 0.0);
    REQUIRE(std::max(cut(0, 1), cut(2, 3)) == 1.0);

    const auto none = agglomerative_confusion(pred, 4).r;
    REQUIRE(none == Matrix<double>(4, 4, 0.0));
    REQUIRE_THROWS_AS(agglomerative_confusion(pred, 0), ConfigError);
}

TEST_CASE("labeled confusion counts symmetric mistakes", "[heuristics]") {
    PredictionMatrix pred;
    pred.logits = Matrix<double>(5, 3, 0.0);
    pred.argmax = {0, 1, 1, 2, 0};
    const std::vector<ClassIndex> labels{0, 0, 1, 1, 2};
    const auto r = labeled_confusion(pred, labels).r;
    require_well_formed(r);
    REQUIRE(r(0, 1) == 1.0);
    REQUIRE(r(1, 2) == 1.0);
    REQUIRE(r(0, 2) == 1.0);
    REQUIRE_THROWS_AS(calculate_similarity({HeuristicKind::labeled_confusion, 0}, pred, std::nullopt, 0), NoLabels);
}

TEST_CASE("EMD confusion closed forms", "[heuristics]") {
    // Column 1 is column 0 shifted by 2: W1 = 2. Column 2 is a permutation
    // of column 0: W1 = 0.
    const auto pred = from_rows({{0, 2, 3}, {1, 3, 0}, {3, 5, 1}});
    const auto r = emd_confusion(pred).r;
    require_well_formed(r);
    REQUIRE(r(0, 1) == Catch::Approx(1.0 / 3.0));
    REQUIRE(r(0, 2) == 1.0);
    REQUIRE(r(1, 2) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("PCA correlation reduces to Pearson with all components", "[heuristics]") {
    Rng rng(4);
    const auto x = random_matrix<double>(20, 4, rng);
    const auto pred = from_logits(x);
    const auto full = pca_corr_confusion(pred, 4).r;
    const auto pearson = pearson_confusion(pred).r;
    for (std::size_t e = 0; e < 16; ++e) REQUIRE(std::abs(full.data()[e] - pearson.data()[e]) <= 1e-9);

    // One component: every projected column is a multiple of one score vector.
    const auto one = pca_corr_confusion(pred, 1).r;
    require_well_formed(one);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) REQUIRE(std::abs(std::abs(one(i, j)) - 1.0) <= 1e-9);
    REQUIRE_THROWS_AS(pca_corr_confusion(pred, 0), ConfigError);
}

TEST_CASE("random critic is seeded and symmetric", "[heuristics]") {
    const auto a = random_confusion(6, 3);
    require_well_formed(a.r);
    REQUIRE(a.r == random_confusion(6, 3).r);
    REQUIRE_FALSE(a.r == random_confusion(6, 4).r);
}

TEST_CASE("every heuristic is total on random logits", "[heuristics][property]") {
    Rng rng(5);
    const std::vector<std::string> names{"topk:2", "pearson", "agglomerative:2", "labeled", "emd", "pca:2", "random"};
    for (int trial = 0; trial < 60; ++trial) {
        const auto n = 2 + rng.below(20), m = 2 + rng.below(8);
        auto x = random_matrix<double>(n, m, rng);
        if (trial % 7 == 0)
            for (std::size_t r = 0; r < n; ++r) x(r, 0) = 1.0;  // constant column
        const auto pred = from_logits(x);
        std::vector<ClassIndex> labels(n);
        for (auto& l : labels) l = rng.below(m);
        for (const auto& name : names) {
            const auto spec = parse_heuristic(name);
            try {
                const auto report = calculate_similarity(spec, pred, std::span<const ClassIndex>(labels), 9);
                require_well_formed(report.r);
                REQUIRE(report.num_classes() == m);
            } catch (const DegenerateColumn&) {
                REQUIRE(trial % 7 == 0);
            }
        }
    }
}

TEST_CASE("confusion reports round-trip through JSON", "[heuristics]") {
    auto report = random_confusion(3, 1);
    report.iteration = 4;
    const auto j = report.to_json(LabelSet({"a", "b", "c"}));
    REQUIRE(j.at("labels")[2] == "c");
    const auto back = ConfusionReport::from_json(j);
    REQUIRE(back.r == report.r);
    REQUIRE(back.heuristic == report.heuristic);
    REQUIRE(back.iteration == 4);
    REQUIRE_THROWS_AS(ConfusionReport::from_json(nlohmann::json{{"r", {{1, 2}}}}), ParseError);
}

// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/heuristics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cevo/errors.hpp"
#include "cevo/random.hpp"

namespace cevo {

namespace {

ConfusionReport make_report(Matrix<double> r, HeuristicSpec spec) {
    for (std::size_t i = 0; i < r.rows(); ++i) r(i, i) = 0.0;
    return {std::move(r), spec, 0};
}

}  // namespace

std::string to_string(const HeuristicSpec& spec) {
    switch (spec.kind) {
        case HeuristicKind::topk: return "topk:" + std::to_string(spec.param);
        case HeuristicKind::pearson: return "pearson";
        case HeuristicKind::agglomerative: return "agglomerative:" + std::to_string(spec.param);
        case HeuristicKind::labeled_confusion: return "labeled";
        case HeuristicKind::emd: return "emd";
        case HeuristicKind::pca_corr: return "pca:" + std::to_string(spec.param);
        case HeuristicKind::random: return "random";
    }
    return "unknown";
}

HeuristicSpec parse_heuristic(std::string_view text) {
    const auto colon = text.find(':');
    const auto name = text.substr(0, colon);
    std::optional<std::size_t> param;
    if (colon != std::string_view::npos) {
        try {
            param = std::stoul(std::string(text.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("bad heuristic parameter in '" + std::string(text) + "'");
        }
    }
    if (name == "topk") return {HeuristicKind::topk, param.value_or(3)};
    if (name == "pearson" || name == "pcc") return {HeuristicKind::pearson, 0};
    if (name == "agglomerative") return {HeuristicKind::agglomerative, param.value_or(2)};
    if (name == "labeled" || name == "labeled_confusion") return {HeuristicKind::labeled_confusion, 0};
    if (name == "emd") return {HeuristicKind::emd, 0};
    if (name == "pca" || name == "pca_corr") return {HeuristicKind::pca_corr, param.value_or(2)};
    if (name == "random") return {HeuristicKind::random, 0};
    throw ConfigError("unknown heuristic '" + std::string(text) + "'");
}

bool requires_labels(const HeuristicSpec& spec) { return spec.kind == HeuristicKind::labeled_confusion; }

nlohmann::json ConfusionReport::to_json(const LabelSet& labels) const {
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < r.rows(); ++i) rows.push_back(std::vector<double>(r.row(i).begin(), r.row(i).end()));
    return {{"iteration", iteration},
            {"heuristic", cevo::to_string(heuristic)},
            {"labels", labels.names()},
            {"r", std::move(rows)}};
}

ConfusionReport ConfusionReport::from_json(const nlohmann::json& j) {
    try {
        const auto rows = j.at("r").get<std::vector<std::vector<double>>>();
        Matrix<double> r(rows.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) throw ParseError("confusion report is not square");
            std::copy(rows[i].begin(), rows[i].end(), r.row(i).begin());
        }
        return {std::move(r), parse_heuristic(j.at("heuristic").get<std::string>()),
                j.at("iteration").get<std::size_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed confusion report: ") + e.what());
    }
}

ConfusionReport topk_confusion(const PredictionMatrix& pred, std::size_t k, kernels::Exec exec) {
    const auto m = pred.logits.cols();
    if (k < 2 || k > m)
        throw ConfigError("top-k confusion needs 2 <= k <= " + std::to_string(m) + ", got " + std::to_string(k));
    return make_report(kernels::topk_cooccurrence(pred.logits, k, exec), {HeuristicKind::topk, k});
}

ConfusionReport pearson_confusion(const PredictionMatrix& pred, kernels::Exec exec) {
    return make_report(kernels::column_correlation(pred.logits, exec), {HeuristicKind::pearson, 0});
}

ConfusionReport agglomerative_confusion(const PredictionMatrix& pred, std::size_t n_clusters) {
    const std::size_t m = pred.logits.cols();
    if (n_clusters < 1 || n_clusters > m)
        throw ConfigError("agglomerative n_clusters must be in [1, " + std::to_string(m) + "]");
    const auto corr = kernels::column_correlation(pred.logits);

    std::vector<std::vector<std::size_t>> clusters(m);
    for (std::size_t i = 0; i < m; ++i) clusters[i] = {i};

    Matrix<double> r(m, m, 0.0);
    const std::size_t total_merges = m - 1;
    const std::size_t merges_below_cut = m - n_clusters;
    for (std::size_t merge = 1; merge <= merges_below_cut; ++merge) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        // Clusters stay ordered by smallest member, so ties resolve to the
        // lexicographically first pair.
        for (std::size_t a = 0; a < clusters.size(); ++a)
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                double sum = 0.0;
                for (const auto i : clusters[a])
                    for (const auto j : clusters[b]) sum += 1.0 - corr(i, j);
                const double d = sum / static_cast<double>(clusters[a].size() * clusters[b].size());
                if (d < best) {
                    best = d;
                    ba = a;
                    bb = b;
                }
            }
        const double score = static_cast<double>(total_merges - merge + 1) / static_cast<double>(total_merges);
        for (const auto i : clusters[ba])
            for (const auto j : clusters[bb]) r(i, j) = r(j, i) = score;
        auto& into = clusters[ba];
        into.insert(into.end(), clusters[bb].begin(), clusters[bb].end());
        std::sort(into.begin(), into.end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    }
    return make_report(std::move(r), {HeuristicKind::agglomerative, n_clusters});
}

ConfusionReport labeled_confusion(const PredictionMatrix& pred, std::span<const ClassIndex> labels) {
    if (labels.size() != pred.argmax.size()) throw ShapeError("labeled confusion: label count differs");
    const std::size_t m = pred.logits.cols();
    Matrix<double> r(m, m, 0.0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const auto t = labels[n], p = pred.argmax[n];
        if (t == p) continue;
        r(t, p) += 1.0;
        r(p, t) += 1.0;
    }
    return make_report(std::move(r), {HeuristicKind::labeled_confusion, 0});
}

ConfusionReport emd_confusion(const PredictionMatrix& pred) {
    const std::size_t n = pred.logits.rows(), m = pred.logits.cols();
    if (n < 2) throw ShapeError("EMD confusion needs at least 2 rows");
    std::vector<std::vector<double>> sorted(m);
    for (std::size_t j = 0; j < m; ++j) {
        sorted[j] = pred.logits.column(j);
        std::sort(sorted[j].begin(), sorted[j].end());
    }
    Matrix<double> r(m, m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            double w1 = 0.0;
            for (std::size_t k = 0; k < n; ++k) w1 += std::abs(sorted[i][k] - sorted[j][k]);
            w1 /= static_cast<double>(n);
            r(i, j) = r(j, i) = 1.0 / (1.0 + w1);
        }
    return make_report(std::move(r), {HeuristicKind::emd, 0});
}

ConfusionReport pca_corr_confusion(const PredictionMatrix& pred, std::size_t n_components) {
    const std::size_t n = pred.logits.rows(), m = pred.logits.cols();
    if (n_components < 1 || n_components > std::min(n, m))
        throw ConfigError("pca n_components must be in [1, " + std::to_string(std::min(n, m)) + "]");
    Eigen::MatrixXd x(n, m);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) x(r, c) = pred.logits(r, c);
    x.rowwise() -= x.colwise().mean();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x);
    // Eigenvalues ascend; the principal directions are the trailing columns.
    const Eigen::MatrixXd v = eig.eigenvectors().rightCols(static_cast<Eigen::Index>(n_components));
    const Eigen::MatrixXd projected = x * v * v.transpose();
    Matrix<double> p(n, m);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) p(r, c) = projected(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    return make_report(kernels::column_correlation(p), {HeuristicKind::pca_corr, n_components});
}

ConfusionReport random_confusion(std::size_t num_classes, std::uint64_t seed) {
    Rng rng(seed);
    Matrix<double> r(num_classes, num_classes, 0.0);
    for (std::size_t i = 0; i < num_classes; ++i)
        for (std::size_t j = i + 1; j < num_classes; ++j) r(i, j) = r(j, i) = rng.uniform();
    return make_report(std::move(r), {HeuristicKind::random, 0});
}

ConfusionReport calculate_similarity(const HeuristicSpec& spec, const PredictionMatrix& pred,
                                     std::optional<std::span<const ClassIndex>> labels, std::uint64_t seed) {
    switch (spec.kind) {
        case HeuristicKind::topk: return topk_confusion(pred, spec.param);
        case HeuristicKind::pearson: return pearson_confusion(pred);
        case HeuristicKind::agglomerative: return agglomerative_confusion(pred, spec.param);
        case HeuristicKind::labeled_confusion:
            if (!labels) throw NoLabels("labeled confusion heuristic requires labels");
            return labeled_confusion(pred, *labels);
        case HeuristicKind::emd: return emd_confusion(pred);
        case HeuristicKind::pca_corr: return pca_corr_confusion(pred, spec.param);
        case HeuristicKind::random: return random_confusion(pred.logits.cols(), seed);
    }
    throw ConfigError("unhandled heuristic");
}

}  // namespace cevo

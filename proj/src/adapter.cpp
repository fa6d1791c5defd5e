// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "cevo/errors.hpp"
#include "cevo/random.hpp"

namespace cevo {

const char* to_string(AdapterMode mode) { return mode == AdapterMode::zero_shot ? "zero_shot" : "trained"; }

Matrix<double> zero_shot_matrix(const ConceptLibrary& lib) {
    Matrix<double> m(lib.total_concepts(), lib.num_classes(), 0.0);
    std::size_t row = 0;
    for (ClassIndex y = 0; y < lib.num_classes(); ++y) {
        const auto n = lib.concepts(y).size();
        for (std::size_t k = 0; k < n; ++k) m(row++, y) = 1.0 / static_cast<double>(n);
    }
    return m;
}

AdapterWeights zero_shot_weights(const ConceptLibrary& lib) {
    AdapterWeights w;
    w.matrix = zero_shot_matrix(lib).cast<float>();
    w.row_ids = lib.column_ids();
    return w;
}

AdapterWeights warm_start(const AdapterWeights& prev, const ConceptLibrary& lib) {
    std::map<ConceptId, std::size_t> old_rows;
    for (std::size_t r = 0; r < prev.row_ids.size(); ++r) old_rows.emplace(prev.row_ids[r], r);
    if (prev.matrix.cols() != lib.num_classes()) throw ShapeError("warm start across different label sets");

    AdapterWeights out;
    out.mode = prev.mode;
    out.l1_lambda = prev.l1_lambda;
    out.seed = prev.seed;
    out.row_ids = lib.column_ids();
    out.matrix = Matrix<float>(out.row_ids.size(), lib.num_classes(), 0.0f);
    for (std::size_t r = 0; r < out.row_ids.size(); ++r) {
        const auto it = old_rows.find(out.row_ids[r]);
        if (it == old_rows.end()) continue;
        const auto src = prev.matrix.row(it->second);
        std::copy(src.begin(), src.end(), out.matrix.row(r).begin());
    }
    return out;
}

double objective(const Matrix<double>& weights, const Matrix<double>& scores, std::span<const ClassIndex> labels,
                 std::span<const std::size_t> rows, double l1_lambda, Matrix<double>* grad) {
    double loss = kernels::softmax_xent(scores, labels, rows, weights, grad);
    if (l1_lambda > 0.0) {
        double l1 = 0.0;
        for (const double v : weights.data()) l1 += std::abs(v);
        loss += l1_lambda * l1;
        if (grad)
            for (std::size_t e = 0; e < weights.data().size(); ++e) {
                const double v = weights.data()[e];
                grad->data()[e] += l1_lambda * static_cast<double>((v > 0.0) - (v < 0.0));
            }
    }
    return loss;
}

Matrix<double> fit_f64(Matrix<double> weights, const Matrix<double>& scores, std::span<const ClassIndex> labels,
                       const FitConfig& cfg) {
    if (labels.empty()) throw NoLabels("adapter fit requires labels");
    if (labels.size() != scores.rows())
        throw ShapeError("fit: " + std::to_string(labels.size()) + " labels for " + std::to_string(scores.rows()) +
                         " score rows");
    if (scores.cols() != weights.rows()) throw ShapeError("fit: score columns do not match weight rows");
    for (const auto y : labels)
        if (y >= weights.cols()) throw ShapeError("fit: label out of range");

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(scores.rows());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::clamp<std::size_t>(cfg.batch, 1, order.size());
    Matrix<double> grad;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t first = 0; first < order.size(); first += batch) {
            const std::span<const std::size_t> rows(order.data() + first, std::min(batch, order.size() - first));
            const double loss = kernels::softmax_xent(scores, labels, rows, weights, &grad, cfg.exec);
            if (!std::isfinite(loss))
                throw DivergedLoss("non-finite loss at epoch " + std::to_string(epoch) + " (lr " +
                                   std::to_string(cfg.lr) + " too high?)");
            for (std::size_t e = 0; e < grad.data().size(); ++e) {
                double g = grad.data()[e];
                const double v = weights.data()[e];
                if (cfg.l1_lambda > 0.0) g += cfg.l1_lambda * static_cast<double>((v > 0.0) - (v < 0.0));
                weights.data()[e] = v - cfg.lr * g;
            }
        }
    }
    for (const double v : weights.data())
        if (!std::isfinite(v)) throw DivergedLoss("weights became non-finite");
    return weights;
}

AdapterWeights fit(const AdapterWeights& init, const ScoreMatrix& scores, std::span<const ClassIndex> labels,
                   const FitConfig& cfg) {
    if (labels.empty()) throw NoLabels("adapter fit requires labels (zero-shot regime has none)");
    if (cfg.epochs == 0) return init;
    auto trained = fit_f64(init.matrix.cast<double>(), scores.values.cast<double>(), labels, cfg);
    AdapterWeights out;
    out.matrix = trained.cast<float>();
    out.mode = AdapterMode::trained;
    out.l1_lambda = cfg.l1_lambda;
    out.seed = cfg.seed;
    out.row_ids = init.row_ids.empty() ? scores.col_ids : init.row_ids;
    return out;
}

double stable_learning_rate(const Matrix<double>& scores) {
    const std::size_t n = scores.rows(), c = scores.cols();
    if (n == 0 || c == 0) return 1.0;
    // Power iteration on S^T S from a fixed start.
    std::vector<double> v(c, 1.0 / std::sqrt(static_cast<double>(c))), sv(n), w(c);
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
        for (std::size_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < c; ++k) acc += scores(r, k) * v[k];
            sv[r] = acc;
        }
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < c; ++k) w[k] += scores(r, k) * sv[r];
        double norm = 0.0;
        for (const double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 1.0;
        const double next = norm;
        for (std::size_t k = 0; k < c; ++k) v[k] = w[k] / norm;
        if (std::abs(next - lambda) <= 1e-12 * next) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Small margin over the power-iteration estimate, which approaches from below.
    const double lipschitz = 0.5 * lambda * 1.01 / static_cast<double>(n);
    return 1.0 / lipschitz;
}

std::vector<ClassIndex> row_argmax(const Matrix<double>& logits) {
    std::vector<ClassIndex> out(logits.rows(), 0);
    for (std::size_t n = 0; n < logits.rows(); ++n) {
        const auto row = logits.row(n);
        ClassIndex best = 0;
        for (ClassIndex y = 1; y < row.size(); ++y)
            if (row[y] > row[best]) best = y;
        out[n] = best;
    }
    return out;
}

PredictionMatrix evaluate(const AdapterWeights& weights, const ScoreMatrix& scores, kernels::Exec exec) {
    if (scores.cols() != weights.matrix.rows())
        throw ShapeError("evaluate: " + std::to_string(scores.cols()) + " score columns vs " +
                         std::to_string(weights.matrix.rows()) + " weight rows");
    if (!weights.row_ids.empty() && !scores.col_ids.empty() && weights.row_ids != scores.col_ids)
        throw ShapeError("evaluate: weight rows and score columns refer to different concepts");
    PredictionMatrix pred;
    pred.logits = kernels::logits(scores.values, weights.matrix, exec);
    pred.argmax = row_argmax(pred.logits);
    return pred;
}

double accuracy(const PredictionMatrix& pred, std::span<const ClassIndex> labels) {
    if (labels.size() != pred.argmax.size()) throw ShapeError("accuracy: label count differs from predictions");
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred.argmax[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::size_t> balanced_subsample(std::span<const ClassIndex> labels, std::size_t num_classes,
                                            std::size_t per_class, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t r = 0; r < labels.size(); ++r) by_class.at(labels[r]).push_back(r);
    std::vector<std::size_t> out;
    for (std::size_t y = 0; y < num_classes; ++y) {
        Rng rng(derive_seed(seed, y));
        auto& rows = by_class[y];
        rng.shuffle(rows);
        rows.resize(std::min(rows.size(), per_class));
        out.insert(out.end(), rows.begin(), rows.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

ScoreMatrix select_rows(const ScoreMatrix& scores, std::span<const std::size_t> rows) {
    ScoreMatrix out{Matrix<float>(rows.size(), scores.cols()), {}, scores.col_ids};
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto src = scores.values.row(rows[k]);
        std::copy(src.begin(), src.end(), out.values.row(k).begin());
        out.row_ids.push_back(scores.row_ids.at(rows[k]));
    }
    return out;
}

void save_weights(const std::filesystem::path& bin_path, const AdapterWeights& w, std::size_t iteration) {
    {
        std::ofstream out(bin_path, std::ios::binary);
        const auto data = w.matrix.data();
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
        if (!out) throw ConfigError("cannot write " + bin_path.string());
    }
    auto rows = nlohmann::json::array();
    for (const auto& id : w.row_ids) rows.push_back(id.hex());
    const nlohmann::json header{{"iteration", iteration},
                                {"mode", to_string(w.mode)},
                                {"shape", {w.matrix.rows(), w.matrix.cols()}},
                                {"seed", w.seed},
                                {"l1_lambda", w.l1_lambda},
                                {"dtype", "f32"},
                                {"row_ids", std::move(rows)}};
    auto json_path = bin_path;
    json_path.replace_extension(".json");
    std::ofstream out(json_path);
    out << header.dump(2) << "\n";
    if (!out) throw ConfigError("cannot write " + json_path.string());
}

AdapterWeights load_weights(const std::filesystem::path& bin_path) {
    auto json_path = bin_path;
    json_path.replace_extension(".json");
    std::ifstream hin(json_path);
    if (!hin) throw ConfigError("cannot read " + json_path.string());
    AdapterWeights w;
    try {
        const auto header = nlohmann::json::parse(hin);
        const auto rows = header.at("shape").at(0).get<std::size_t>();
        const auto cols = header.at("shape").at(1).get<std::size_t>();
        w.mode = header.at("mode").get<std::string>() == "zero_shot" ? AdapterMode::zero_shot : AdapterMode::trained;
        w.seed = header.at("seed").get<std::uint64_t>();
        w.l1_lambda = header.at("l1_lambda").get<double>();
        for (const auto& h : header.at("row_ids")) w.row_ids.push_back(ConceptId::from_hex(h.get<std::string>()));
        w.matrix = Matrix<float>(rows, cols);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed weights header " + json_path.string() + ": " + e.what());
    }
    std::ifstream in(bin_path, std::ios::binary);
    auto data = w.matrix.data();
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    if (!in || in.peek() != std::char_traits<char>::eof())
        throw ShapeError("weights file " + bin_path.string() + " does not match its header shape");
    return w;
}

}  // namespace cevo

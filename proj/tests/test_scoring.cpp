// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "cevo/errors.hpp"
#include "cevo/scoring.hpp"
#include "cevo/simulation.hpp"
#include "support.hpp"

using namespace cevo;
using cevo::test::make_library;
using cevo::test::TempDir;

namespace {

/// Deterministic backend: score = hash of (image, concept) mapped to [0, 1).
class HashBackend final : public ScorerBackend {
public:
    std::atomic<int> calls{0};
    std::atomic<int> columns{0};

    [[nodiscard]] std::string backbone_id() const override { return "hash"; }
    Matrix<float> score_columns(const DatasetManifest& m, std::span<const ColumnRequest> cols) override {
        ++calls;
        columns += static_cast<int>(cols.size());
        Matrix<float> out(m.size(), cols.size());
        for (std::size_t r = 0; r < m.size(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c)
                out(r, c) = static_cast<float>(unit_double(fnv1a64(m[r].image_id + "|" + cols[c].scored_text)));
        return out;
    }
};

class BrokenBackend final : public ScorerBackend {
public:
    bool wrong_shape = true;
    [[nodiscard]] std::string backbone_id() const override { return "broken"; }
    Matrix<float> score_columns(const DatasetManifest& m, std::span<const ColumnRequest> cols) override {
        if (wrong_shape) return Matrix<float>(m.size(), cols.size() + 1);
        Matrix<float> out(m.size(), cols.size());
        out(0, 0) = std::nanf("");
        return out;
    }
};

DatasetManifest small_manifest(std::size_t n) {
    std::vector<ManifestItem> items;
    for (std::size_t i = 0; i < n; ++i) items.push_back({"img" + std::to_string(i), "", i % 2});
    return DatasetManifest(std::move(items), 2);
}

}  // namespace

TEST_CASE("cosine similarity basics", "[scoring]") {
    const std::vector<float> u{0.6f, 0.8f, 0.0f};
    REQUIRE(cosine(u, u) == Catch::Approx(1.0).margin(1e-12));
    const std::vector<float> v{0.0f, 0.0f, 2.0f};
    REQUIRE(cosine(u, v) == 0.0);
    const std::vector<float> w{-0.6f, -0.8f, 0.0f};
    REQUIRE(cosine(u, w) == Catch::Approx(-1.0).margin(1e-12));
    const std::vector<float> zero{0.0f, 0.0f, 0.0f};
    REQUIRE(cosine(u, zero) == 0.0);
    REQUIRE_THROWS_AS(cosine(u, std::vector<float>{1.0f}), ShapeError);
}

TEST_CASE("cosine is symmetric on random vectors", "[scoring][property]") {
    Rng rng(3);
    for (int t = 0; t < 500; ++t) {
        std::vector<float> a(16), b(16);
        for (auto& x : a) x = static_cast<float>(rng.normal());
        for (auto& x : b) x = static_cast<float>(rng.normal());
        REQUIRE(std::abs(cosine(a, b) - cosine(b, a)) <= 1e-12);
    }
}

TEST_CASE("score matrix follows library order and caches columns", "[scoring]") {
    auto backend = std::make_shared<HashBackend>();
    const auto manifest = small_manifest(5);
    auto cache = std::make_shared<ScoreCache>(manifest.image_ids());
    Scorer scorer(backend, cache, ScoringOptions{kDefaultScoreTemplate, 4, 2});
    const auto lib = make_library({"a", "b"}, {{"x", "y"}, {"z"}});

    const auto first = scorer.score(manifest, lib);
    REQUIRE(first.rows() == 5);
    REQUIRE(first.cols() == 3);
    REQUIRE(first.col_ids == lib.column_ids());
    REQUIRE(first.row_ids == manifest.image_ids());
    REQUIRE(scorer.last_stats().scored_columns == 3);
    REQUIRE(scorer.last_stats().backend_calls == 2);  // 2 columns per call
    // Column 1 is "a photo of a a. y" for every image.
    const auto expected = static_cast<float>(unit_double(fnv1a64("img3|a photo of a a. y")));
    REQUIRE(first.values(3, 1) == expected);

    SECTION("an unchanged library needs no backend calls") {
        const int before = backend->calls;
        const auto again = scorer.score(manifest, lib);
        REQUIRE(backend->calls == before);
        REQUIRE(scorer.last_stats().cache_hits == 5 * 3);
        REQUIRE(again.values == first.values);
    }
    SECTION("only appended concepts reach the backend") {
        const auto grown = merge_concepts(lib, 0, std::vector<Concept>{{"w", {}, 1}});
        const int before_cols = backend->columns;
        const auto next = scorer.score(manifest, grown);
        REQUIRE(backend->columns - before_cols == 1);
        REQUIRE(next.cols() == 4);
        // Existing entries are bit-identical, shifted into library order.
        for (std::size_t r = 0; r < 5; ++r) {
            REQUIRE(next.values(r, 0) == first.values(r, 0));
            REQUIRE(next.values(r, 1) == first.values(r, 1));
            REQUIRE(next.values(r, 3) == first.values(r, 2));
        }
    }
}

TEST_CASE("backend shape and finiteness are validated", "[scoring]") {
    auto backend = std::make_shared<BrokenBackend>();
    const auto manifest = small_manifest(2);
    Scorer scorer(backend, std::make_shared<ScoreCache>(manifest.image_ids()));
    const auto lib = make_library({"a", "b"}, {{"x"}, {"z"}});
    REQUIRE_THROWS_AS(scorer.score(manifest, lib), ShapeError);
    backend->wrong_shape = false;
    REQUIRE_THROWS_AS(scorer.score(manifest, lib), ShapeError);
    REQUIRE_THROWS_AS(Scorer(backend, std::make_shared<ScoreCache>(manifest.image_ids()),
                             ScoringOptions{"a photo of a {class}", 1, 1}),
                      ConfigError);
}

TEST_CASE("incremental_columns lists new ids in library order", "[scoring]") {
    auto backend = std::make_shared<HashBackend>();
    const auto manifest = small_manifest(2);
    Scorer scorer(backend, std::make_shared<ScoreCache>(manifest.image_ids()));
    const auto lib = make_library({"a", "b", "c", "d"}, {{"x"}, {"y"}, {"z"}, {"w"}});
    const auto old = scorer.score(manifest, lib);

    REQUIRE(incremental_columns(old, lib).empty());

    const auto one = merge_concepts(lib, 3, std::vector<Concept>{{"new", {}, 1}});
    REQUIRE(incremental_columns(old, one) == std::vector<ConceptId>{make_concept_id("d", "new")});

    auto two = merge_concepts(lib, 2, std::vector<Concept>{{"p", {}, 1}, {"q", {}, 1}});
    two = merge_concepts(two, 0, std::vector<Concept>{{"r", {}, 1}, {"s", {}, 1}});
    const std::vector<ConceptId> expected{make_concept_id("a", "r"), make_concept_id("a", "s"),
                                          make_concept_id("c", "p"), make_concept_id("c", "q")};
    REQUIRE(incremental_columns(old, two) == expected);

    const auto other = make_library({"a", "b", "c", "d"}, {{"x2"}, {"y"}, {"z"}, {"w"}});
    REQUIRE_THROWS_AS(incremental_columns(old, other), IncompatibleVersions);
}

TEST_CASE("simulated backend follows the planted attribute rule", "[scoring]") {
    WorldParams p;
    p.n_classes = 2;
    p.attrs_per_class = 4;
    p.overlap = 0.5;
    p.images_per_class = 1;
    p.noise_sigma = 0.05;
    p.seed = 11;
    const auto world = std::make_shared<SyntheticWorld>(generate_world(p));
    const auto& img = world->images()[0];  // class 0: attributes 0..3
    const auto hit = world->phrase(1), miss = world->phrase(5);

    // Regenerate the closed-form rule: base plus sigma times the seeded normal.
    const auto noise = [&](const std::string& text) {
        const auto h = derive_seed(p.seed, fnv1a64(img.id), fnv1a64(concept_key(text)));
        return standard_normal(splitmix64(h), splitmix64(h ^ 0x5bd1e995ULL));
    };
    REQUIRE(simulated_score(*world, img.id, hit) == 0.8 + 0.05 * noise(hit));
    REQUIRE(simulated_score(*world, img.id, miss) == 0.2 + 0.05 * noise(miss));
    REQUIRE(simulated_score(*world, img.id, "a completely unknown concept") ==
            0.2 + 0.05 * noise("a completely unknown concept"));

    SimulatedScorer backend(world);
    const auto lib = make_library(world->labels(), {{hit}, {miss}});
    const auto requests = column_requests(lib, kDefaultScoreTemplate);
    const auto m = backend.score_columns(world->manifest(), requests);
    REQUIRE(m(0, 0) == static_cast<float>(simulated_score(*world, img.id, hit)));
}

TEST_CASE("score cache persists columns and detects corruption", "[scoring]") {
    TempDir dir("cache");
    const auto manifest = small_manifest(4);
    const auto lib = make_library({"a", "b"}, {{"x", "y"}, {"z"}});
    ScoreMatrix first;
    {
        auto cache = ScoreCache::open(dir.path(), "ViT-B/32", "toy", manifest.image_ids());
        Scorer scorer(std::make_shared<HashBackend>(), cache);
        first = scorer.score(manifest, lib);
        REQUIRE(cache->num_columns() == 3);
    }
    const auto bin = dir / "ViT-B_32__toy.bin";
    REQUIRE(std::filesystem::exists(bin));
    REQUIRE(std::filesystem::exists(dir / "ViT-B_32__toy.index.json"));

    SECTION("reopening serves every column from disk bit-identically") {
        auto cache = ScoreCache::open(dir.path(), "ViT-B/32", "toy", manifest.image_ids());
        REQUIRE(cache->num_columns() == 3);
        auto backend = std::make_shared<HashBackend>();
        Scorer scorer(backend, cache);
        const auto again = scorer.score(manifest, lib);
        REQUIRE(backend->calls == 0);
        REQUIRE(again.values == first.values);

        CacheFileScorer file_backend(cache, "ViT-B/32");
        const auto requests = column_requests(lib, kDefaultScoreTemplate);
        REQUIRE(file_backend.score_columns(manifest, requests).column(2) == first.values.column(2));
        const auto missing = column_requests(make_library({"a"}, {{"never scored"}}), kDefaultScoreTemplate);
        REQUIRE_THROWS_AS(file_backend.score_columns(manifest, missing), ServiceError);
    }
    SECTION("a flipped byte fails the checksum") {
        {
            std::fstream f(bin, std::ios::in | std::ios::out | std::ios::binary);
            f.seekp(-2, std::ios::end);
            f.put('\x7f');
        }
        REQUIRE_THROWS_AS(ScoreCache::open(dir.path(), "ViT-B/32", "toy", manifest.image_ids()), CacheCorrupt);
    }
    SECTION("a different manifest is rejected") {
        REQUIRE_THROWS_AS(ScoreCache::open(dir.path(), "ViT-B/32", "toy", small_manifest(5).image_ids()),
                          CacheCorrupt);
    }
    SECTION("a damaged header is rejected") {
        {
            std::fstream f(bin, std::ios::in | std::ios::out | std::ios::binary);
            f.seekp(0);
            f.put('X');
        }
        REQUIRE_THROWS_AS(ScoreCache::open(dir.path(), "ViT-B/32", "toy", manifest.image_ids()), CacheCorrupt);
    }
}

namespace {

class EmbeddingServer {
public:
    std::atomic<int> requests{0};
    std::vector<nlohmann::json> bodies;
    std::mutex mutex;

    EmbeddingServer() {
        server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            const auto body = nlohmann::json::parse(req.body);
            {
                std::lock_guard lock(mutex);
                bodies.push_back(body);
            }
            auto data = nlohmann::json::array();
            for (const auto& in : body.at("input")) {
                // Images and texts land on unit vectors chosen by a simple rule.
                std::vector<float> v{0.0f, 0.0f};
                if (in.is_object()) {
                    v[in.at("image_id").get<std::string>() == "img0" ? 0 : 1] = 1.0f;
                } else {
                    v[in.get<std::string>().find("round") != std::string::npos ? 0 : 1] = 1.0f;
                }
                data.push_back({{"embedding", v}});
            }
            res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~EmbeddingServer() {
        server_.stop();
        thread_.join();
    }
    [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace

TEST_CASE("embedding backend speaks the embeddings wire protocol", "[scoring]") {
    EmbeddingServer server;
    EmbeddingOptions options;
    options.base_url = server.url();
    options.model = "ViT-B/32";
    options.batch_limit = 2;
    auto backend = std::make_shared<EmbeddingServiceScorer>(options);

    const auto manifest = small_manifest(2);
    const auto lib = make_library({"donut", "beignet"}, {{"round ring"}, {"square pillow", "powder"}});
    Scorer scorer(backend, std::make_shared<ScoreCache>(manifest.image_ids()), ScoringOptions{kDefaultScoreTemplate, 1, 8});
    const auto scores = scorer.score(manifest, lib);

    // img0 and the "round" text share a unit vector: cosine 1; orthogonal otherwise.
    REQUIRE(scores.values(0, 0) == 1.0f);
    REQUIRE(scores.values(1, 0) == 0.0f);
    REQUIRE(scores.values(0, 1) == 0.0f);
    REQUIRE(scores.values(1, 2) == 1.0f);

    std::lock_guard lock(server.mutex);
    bool saw_images = false, saw_text = false;
    for (const auto& body : server.bodies) {
        REQUIRE(body.at("model") == "ViT-B/32");
        REQUIRE(body.at("input").size() <= 2);  // batch limit honoured
        if (body.at("input")[0].is_object()) saw_images = true;
        if (body.at("input")[0].is_string()) {
            saw_text = true;
            REQUIRE(body.at("input")[0].get<std::string>().rfind("a photo of a ", 0) == 0);
        }
    }
    REQUIRE(saw_images);
    REQUIRE(saw_text);
}

TEST_CASE("embedding backend reports an unreachable endpoint", "[scoring]") {
    EmbeddingOptions options;
    options.base_url = "http://127.0.0.1:1";
    options.max_retries = 0;
    EmbeddingServiceScorer backend(options);
    REQUIRE_THROWS_AS(backend.embed(nlohmann::json::array({"x"})), ServiceError);
}

// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <fstream>

#include "cevo/concept_model.hpp"
#include "cevo/errors.hpp"
#include "support.hpp"

using namespace cevo;
using cevo::test::make_library;
using cevo::test::ScriptedChat;
using cevo::test::TempDir;

TEST_CASE("label set rejects empty and duplicate labels", "[concept_model]") {
    REQUIRE_THROWS_AS(LabelSet({}), ConfigError);
    REQUIRE_THROWS_AS(LabelSet({"a", "b", "a"}), ConfigError);
    const LabelSet labels({"donut", "beignet"});
    REQUIRE(labels.size() == 2);
    REQUIRE(labels.index_of("beignet") == 1u);
    REQUIRE_FALSE(labels.index_of("cruller").has_value());
}

TEST_CASE("class pairs are stored in ascending order", "[concept_model]") {
    const ClassPair p(5, 2);
    REQUIRE(p.first == 2);
    REQUIRE(p.second == 5);
    REQUIRE(ClassPair(2, 5) == p);
}

TEST_CASE("concept text sanitation trims and rejects over-long text", "[concept_model]") {
    REQUIRE(sanitize_concept_text("  red beak \n") == std::optional<std::string>("red beak"));
    REQUIRE_FALSE(sanitize_concept_text("   ").has_value());
    REQUIRE_FALSE(sanitize_concept_text(std::string(251, 'x')).has_value());
    REQUIRE(sanitize_concept_text(std::string(250, 'x')).has_value());
    REQUIRE_FALSE(sanitize_concept_text("abcdef", 5).has_value());
}

TEST_CASE("dedup key lowercases and collapses whitespace", "[concept_model]") {
    REQUIRE(concept_key("Red Beak") == concept_key("red   beak"));
    REQUIRE(concept_key("  Red\tBeak ") == "red beak");
    REQUIRE(make_concept_id("a", "Red Beak") == make_concept_id("a", "red beak"));
    REQUIRE_FALSE(make_concept_id("a", "red beak") == make_concept_id("b", "red beak"));
    const auto id = make_concept_id("x", "y");
    REQUIRE(ConceptId::from_hex(id.hex()) == id);
    REQUIRE_THROWS_AS(ConceptId::from_hex("zz"), ParseError);
}

TEST_CASE("library construction enforces its invariants", "[concept_model]") {
    REQUIRE_THROWS_AS(make_library({"a", "b"}, {{"x"}, {}}), EmptyClass);
    REQUIRE_THROWS_AS(make_library({"a"}, {{"Red Beak", "red  beak"}}), InvalidConcept);
    REQUIRE_THROWS_AS(make_library({"a"}, {{"  "}}), InvalidConcept);
    REQUIRE_THROWS_AS(make_library({"a"}, {{std::string(300, 'q')}}), InvalidConcept);
    // The same text in two classes is allowed: each class owns its copy.
    const auto lib = make_library({"a", "b"}, {{"feathers"}, {"feathers", "beak"}});
    REQUIRE(lib.total_concepts() == 3);
    REQUIRE(lib.contains(1, "BEAK"));
    REQUIRE_FALSE(lib.contains(0, "beak"));
}

TEST_CASE("column layout is class-major in insertion order", "[concept_model]") {
    const auto lib = make_library({"a", "b"}, {{"x", "y"}, {"z"}});
    const auto ids = lib.column_ids();
    REQUIRE(ids.size() == 3);
    REQUIRE(ids[0] == make_concept_id("a", "x"));
    REQUIRE(ids[1] == make_concept_id("a", "y"));
    REQUIRE(ids[2] == make_concept_id("b", "z"));
    REQUIRE(lib.column_classes() == std::vector<ClassIndex>{0, 0, 1});
}

TEST_CASE("merge_concepts appends, dedups silently and keeps the version", "[concept_model]") {
    const auto lib = make_library({"a", "b"}, {{"x"}, {"z"}}, 4);

    SECTION("empty merge is the identity") {
        REQUIRE(merge_concepts(lib, 0, {}) == lib);
    }
    SECTION("a novel concept grows the class by one") {
        const std::vector<Concept> add{{"w", ConceptOrigin::evolved(4, ClassPair(0, 1)), 5}};
        const auto merged = merge_concepts(lib, 0, add);
        REQUIRE(merged.concepts(0).size() == 2);
        REQUIRE(merged.concepts(0)[1] == add[0]);
        REQUIRE(merged.version() == 4);
        REQUIRE(lib.concepts(0).size() == 1);  // input untouched
    }
    SECTION("duplicates and invalid texts are dropped") {
        const std::vector<Concept> add{{" X ", {}, 0}, {"", {}, 0}, {std::string(400, 'k'), {}, 0}};
        REQUIRE(merge_concepts(lib, 0, add).concepts(0).size() == 1);
    }
    SECTION("duplicates within one batch collapse") {
        const std::vector<Concept> add{{"new", {}, 0}, {"NEW", {}, 0}};
        REQUIRE(merge_concepts(lib, 1, add).concepts(1).size() == 2);
    }
}

TEST_CASE("merge is idempotent and monotone under random batches", "[concept_model][property]") {
    Rng rng(7);
    const std::vector<std::string> vocab{"red beak", "Red beak", "long tail", "short tail", "black crown",
                                         "white  eye ring", "White eye ring", "gray wings", " "};
    for (int trial = 0; trial < 200; ++trial) {
        const auto lib = make_library({"a", "b", "c"}, {{"red beak"}, {"long tail"}, {"gray wings"}});
        const auto cls = static_cast<ClassIndex>(rng.below(3));
        std::vector<Concept> batch;
        const auto n = rng.below(6);
        for (std::uint64_t k = 0; k < n; ++k) batch.push_back({vocab[rng.below(vocab.size())], {}, 1});
        const auto once = merge_concepts(lib, cls, batch);
        REQUIRE(merge_concepts(once, cls, batch) == once);
        for (ClassIndex i = 0; i < 3; ++i) {
            REQUIRE(once.concepts(i).size() >= lib.concepts(i).size());
            for (std::size_t k = 0; k < lib.concepts(i).size(); ++k)
                REQUIRE(once.concepts(i)[k] == lib.concepts(i)[k]);
        }
    }
}

TEST_CASE("library JSON round-trips and is byte-stable", "[concept_model]") {
    auto lib = make_library({"donut", "beignet"}, {{"ring shape", "glaze"}, {"powdered sugar"}}, 0);
    lib = merge_concepts(lib, 1, std::vector<Concept>{{"square", ConceptOrigin::evolved(2, ClassPair(1, 0)), 3}})
              .with_version(3);
    const auto text = lib.serialize();
    const auto back = ConceptLibrary::from_json(nlohmann::json::parse(text));
    REQUIRE(back == lib);
    REQUIRE(back.serialize() == text);
    REQUIRE(back.concepts(1)[1].origin.kind == ConceptOrigin::Kind::evolved);
    REQUIRE(back.concepts(1)[1].origin.pair == ClassPair(0, 1));

    const auto j = nlohmann::json::parse(text);
    REQUIRE(j.at("version") == 3);
    REQUIRE(j.at("classes").contains("donut"));

    TempDir dir("lib");
    lib.save(dir / "lib.json");
    REQUIRE(ConceptLibrary::load(dir / "lib.json") == lib);
}

TEST_CASE("manifest reads labels by index or name and validates ids", "[concept_model]") {
    TempDir dir("manifest");
    const LabelSet labels({"donut", "beignet"});
    {
        std::ofstream out(dir / "m.jsonl");
        out << R"({"image_id":"a","image_ref":"a.jpg","label":0})" << "\n";
        out << R"({"image_id":"b","image_ref":"b.jpg","label":"beignet"})" << "\n\n";
        out << R"({"image_id":"c","image_ref":"c.jpg"})" << "\n";
    }
    const auto m = DatasetManifest::read_jsonl(dir / "m.jsonl", labels);
    REQUIRE(m.size() == 3);
    REQUIRE(m[1].label == 1u);
    REQUIRE_FALSE(m.fully_labeled());
    REQUIRE_THROWS_AS(m.labels(), NoLabels);
    REQUIRE(m.image_ids() == std::vector<std::string>{"a", "b", "c"});

    m.write_jsonl(dir / "out.jsonl");
    const auto again = DatasetManifest::read_jsonl(dir / "out.jsonl", labels);
    REQUIRE(again.items() == m.items());

    REQUIRE_THROWS_AS(DatasetManifest({{"a", "", 0}, {"a", "", 1}}, 2), ConfigError);
    REQUIRE_THROWS_AS(DatasetManifest({{"a", "", 2}}, 2), ConfigError);
    {
        std::ofstream out(dir / "bad.jsonl");
        out << "{not json\n";
    }
    REQUIRE_THROWS_AS(DatasetManifest::read_jsonl(dir / "bad.jsonl", labels), ParseError);
}

TEST_CASE("init reply parsing accepts object, bare array and code fences", "[concept_model]") {
    REQUIRE(parse_init_reply(R"({"concepts": ["a", "b"]})") == std::vector<std::string>{"a", "b"});
    REQUIRE(parse_init_reply(R"(["a"])") == std::vector<std::string>{"a"});
    REQUIRE(parse_init_reply("Sure!\n```json\n{\"concepts\": [\"x\"]}\n```") == std::vector<std::string>{"x"});
    REQUIRE_THROWS_AS(parse_init_reply("no json here"), ParseError);
    REQUIRE_THROWS_AS(parse_init_reply(R"({"ideas": []})"), ParseError);
    REQUIRE_THROWS_AS(parse_init_reply(R"({"concepts": [1, 2]})"), ParseError);
}

TEST_CASE("init_concepts builds a version-0 library from an echo backend", "[concept_model]") {
    ScriptedChat llm([](const ChatRequest& req, int) {
        const auto& text = req.messages.back().content;
        if (text.find("\"donut\"") != std::string::npos)
            return std::string(R"({"concepts": ["ring shape", "glazed top", "Red Beak", "red  beak"]})");
        return std::string(R"({"concepts": ["powdered sugar", "square shape", "puffy dough"]})");
    });
    const auto lib = init_concepts(LabelSet({"donut", "beignet"}), llm);
    REQUIRE(lib.version() == 0);
    REQUIRE(lib.concepts(0).size() == 3);  // the case-variant pair collapses to one
    REQUIRE(lib.concepts(0)[2].text == "Red Beak");
    REQUIRE(lib.concepts(1).size() == 3);
    for (ClassIndex i = 0; i < 2; ++i)
        for (const auto& c : lib.concepts(i)) {
            REQUIRE(c.origin == ConceptOrigin::initial());
            REQUIRE(c.created_at_iteration == 0);
        }
}

TEST_CASE("init_concepts retries malformed replies and reports failures", "[concept_model]") {
    SECTION("one malformed reply then success") {
        ScriptedChat llm([](const ChatRequest&, int call) {
            return call == 0 ? std::string("I think donuts are round.")
                             : std::string(R"(["ring", "glaze", "sprinkles"])");
        });
        InitConceptsOptions opts;
        opts.max_inflight = 1;
        const auto lib = init_concepts(LabelSet({"donut"}), llm, opts);
        REQUIRE(lib.concepts(0).size() == 3);
        REQUIRE(llm.calls() == 2);
    }
    SECTION("malformed replies beyond the budget raise ParseError") {
        ScriptedChat llm([](const ChatRequest&, int) { return std::string("nothing useful"); });
        REQUIRE_THROWS_AS(init_concepts(LabelSet({"donut"}), llm), ParseError);
        REQUIRE(llm.calls() == 3);
    }
    SECTION("too few valid concepts raise EmptyClass") {
        ScriptedChat llm([](const ChatRequest&, int) { return std::string(R"({"concepts": []})"); });
        REQUIRE_THROWS_AS(init_concepts(LabelSet({"donut"}), llm), EmptyClass);
    }
    SECTION("template without a class placeholder is rejected") {
        ScriptedChat llm([](const ChatRequest&, int) { return std::string("[]"); });
        InitConceptsOptions opts;
        opts.prompt_template = "describe things";
        REQUIRE_THROWS_AS(init_concepts(LabelSet({"donut"}), llm, opts), ConfigError);
        REQUIRE(llm.calls() == 0);
    }
}

TEST_CASE("init from the recorded 200-class fixture satisfies the library invariants", "[concept_model]") {
    auto replay = ReplayChatService::load(std::string(CEVO_FIXTURE_DIR) + "/init_replay_200.json");
    std::ifstream in(std::string(CEVO_FIXTURE_DIR) + "/labels_200.json");
    const auto labels = nlohmann::json::parse(in).get<std::vector<std::string>>();
    REQUIRE(labels.size() == 200);
    const auto lib = init_concepts(LabelSet(labels), replay);
    REQUIRE(lib.num_classes() == 200);
    REQUIRE(lib.version() == 0);
    for (ClassIndex i = 0; i < 200; ++i) {
        REQUIRE(lib.concepts(i).size() >= 3);
        for (const auto& c : lib.concepts(i)) REQUIRE(sanitize_concept_text(c.text) == c.text);
    }
    REQUIRE(ConceptLibrary::from_json(lib.to_json()) == lib);
}

TEST_CASE("fill_template substitutes every occurrence", "[concept_model]") {
    REQUIRE(fill_template("{class} and {class}", "class", "cat") == "cat and cat");
    REQUIRE(fill_template("no placeholder", "class", "cat") == "no placeholder");
}

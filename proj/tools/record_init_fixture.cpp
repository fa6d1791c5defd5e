// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Records the initial-concept conversation for a large simulated world so the
// test suite can replay it without a model endpoint.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cevo/simulation.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Record an initial-concept replay fixture"};
    cevo::WorldParams params;
    params.n_classes = 200;
    params.images_per_class = 1;
    std::string replay_out = "init_replay_200.json", labels_out = "labels_200.json";
    app.add_option("--classes", params.n_classes)->capture_default_str();
    app.add_option("--seed", params.seed)->capture_default_str();
    app.add_option("--replay", replay_out)->capture_default_str();
    app.add_option("--labels", labels_out)->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    auto world = std::make_shared<const cevo::SyntheticWorld>(cevo::generate_world(params));
    auto recorder = cevo::RecordingChatService(std::make_shared<cevo::SimulatedLlm>(world));
    const auto lib = cevo::init_concepts(world->label_set(), recorder);
    recorder.save(replay_out);
    std::ofstream(labels_out) << nlohmann::json(world->labels()).dump(1) << "\n";
    std::cout << nlohmann::json{{"classes", lib.num_classes()}, {"concepts", lib.total_concepts()}}.dump()
              << std::endl;
    return 0;
}

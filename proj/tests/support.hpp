// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries.

#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "cevo/chat.hpp"
#include "cevo/concept_model.hpp"
#include "cevo/matrix.hpp"
#include "cevo/random.hpp"

namespace cevo::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cevo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

template <class T>
Matrix<T> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix<T> m(rows, cols);
    for (auto& v : m.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return m;
}

/// Chat service answering from a caller-supplied function; counts calls.
class ScriptedChat final : public ChatService {
public:
    using Fn = std::function<std::string(const ChatRequest&, int call)>;
    explicit ScriptedChat(Fn fn) : fn_(std::move(fn)) {}
    std::string complete(const ChatRequest& request) override {
        int call;
        {
            std::lock_guard lock(mutex_);
            call = calls_++;
        }
        return fn_(request, call);
    }
    int calls() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }

private:
    Fn fn_;
    mutable std::mutex mutex_;
    int calls_ = 0;
};

inline ConceptLibrary make_library(const std::vector<std::string>& labels,
                                   const std::vector<std::vector<std::string>>& texts, std::size_t version = 0) {
    std::vector<std::vector<Concept>> per_class;
    for (const auto& list : texts) {
        per_class.emplace_back();
        for (const auto& t : list) per_class.back().push_back({t, ConceptOrigin::initial(), 0});
    }
    return ConceptLibrary(LabelSet(labels), std::move(per_class), version);
}

}  // namespace cevo::test

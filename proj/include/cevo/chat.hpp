// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Chat-completion service clients. The engine only ever sees the abstract
// ChatService; HTTP, replay and simulated backends all plug in behind it.

#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cevo {

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
};

class ChatService {
public:
    virtual ~ChatService() = default;
    /// Returns the assistant message content. Throws ServiceError on transport
    /// failure. Implementations must be safe to call concurrently.
    virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpChatOptions {
    std::string base_url = "http://127.0.0.1:8000";
    std::string model = "gpt-3.5-turbo-0125";
    std::string api_key;  // sent as a bearer token when non-empty
    int max_retries = 3;
    std::chrono::milliseconds retry_backoff{200};
    std::chrono::seconds timeout{120};
};

/// OpenAI-compatible POST /v1/chat/completions client.
class HttpChatService final : public ChatService {
public:
    explicit HttpChatService(HttpChatOptions options);
    std::string complete(const ChatRequest& request) override;

    /// Request body for the wire protocol (exposed for tests).
    [[nodiscard]] nlohmann::json request_body(const ChatRequest& request) const;

private:
    HttpChatOptions options_;
};

/// Extracts the JSON value embedded in a model reply, tolerating Markdown code
/// fences and prose around the outermost object or array. Throws ParseError.
nlohmann::json extract_json(std::string_view content);

/// Stable key for a request: hash of every role and content in order.
std::string request_key(const ChatRequest& request);

/// Serves responses from a fixture `{key: content}`; unknown keys are a
/// ServiceError.
class ReplayChatService final : public ChatService {
public:
    explicit ReplayChatService(std::map<std::string, std::string> responses);
    static ReplayChatService load(const std::string& path);
    std::string complete(const ChatRequest& request) override;

private:
    std::map<std::string, std::string> responses_;
};

/// Forwards to another service and records every exchange for later replay.
class RecordingChatService final : public ChatService {
public:
    explicit RecordingChatService(std::shared_ptr<ChatService> inner);
    std::string complete(const ChatRequest& request) override;
    [[nodiscard]] std::map<std::string, std::string> recorded() const;
    void save(const std::string& path) const;

private:
    std::shared_ptr<ChatService> inner_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> recorded_;
};

}  // namespace cevo

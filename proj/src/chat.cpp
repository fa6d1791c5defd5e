// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cevo/chat.hpp"

#include <fstream>
#include <thread>

#include <httplib.h>

#include "cevo/errors.hpp"
#include "cevo/random.hpp"

namespace cevo {

HttpChatService::HttpChatService(HttpChatOptions options) : options_(std::move(options)) {}

nlohmann::json HttpChatService::request_body(const ChatRequest& request) const {
    auto messages = nlohmann::json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", options_.model},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
}

std::string HttpChatService::complete(const ChatRequest& request) {
    const auto body = request_body(request).dump();
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(options_.retry_backoff * (1 << (attempt - 1)));
        httplib::Client client(options_.base_url);
        client.set_connection_timeout(options_.timeout);
        client.set_read_timeout(options_.timeout);
        auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw ServiceError("chat endpoint returned HTTP " + std::to_string(res->status));
        try {
            const auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ServiceError(std::string("malformed chat completion envelope: ") + e.what());
        }
    }
    throw ServiceError("chat endpoint failed after " + std::to_string(options_.max_retries + 1) +
                       " attempts: " + last_error);
}

nlohmann::json extract_json(std::string_view content) {
    const auto open_obj = content.find('{');
    const auto open_arr = content.find('[');
    const auto open = std::min(open_obj, open_arr);
    if (open == std::string_view::npos) throw ParseError("reply contains no JSON value");
    const char close_ch = content[open] == '{' ? '}' : ']';
    const auto close = content.rfind(close_ch);
    if (close == std::string_view::npos || close < open) throw ParseError("reply contains unterminated JSON");
    try {
        return nlohmann::json::parse(content.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("reply is not valid JSON: ") + e.what());
    }
}

std::string request_key(const ChatRequest& request) {
    std::uint64_t h = fnv1a64("chat");
    for (const auto& m : request.messages) {
        h = fnv1a64(m.role, h);
        h = fnv1a64("\x1e", h);
        h = fnv1a64(m.content, h);
        h = fnv1a64("\x1f", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ReplayChatService::ReplayChatService(std::map<std::string, std::string> responses)
    : responses_(std::move(responses)) {}

ReplayChatService ReplayChatService::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read replay fixture " + path);
    try {
        return ReplayChatService(nlohmann::json::parse(in).get<std::map<std::string, std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed replay fixture " + path + ": " + e.what());
    }
}

std::string ReplayChatService::complete(const ChatRequest& request) {
    const auto key = request_key(request);
    const auto it = responses_.find(key);
    if (it == responses_.end()) throw ServiceError("no recorded response for request " + key);
    return it->second;
}

RecordingChatService::RecordingChatService(std::shared_ptr<ChatService> inner) : inner_(std::move(inner)) {}

std::string RecordingChatService::complete(const ChatRequest& request) {
    auto reply = inner_->complete(request);
    std::lock_guard lock(mutex_);
    recorded_[request_key(request)] = reply;
    return reply;
}

std::map<std::string, std::string> RecordingChatService::recorded() const {
    std::lock_guard lock(mutex_);
    return recorded_;
}

void RecordingChatService::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << nlohmann::json(recorded()).dump(2) << "\n";
}

}  // namespace cevo

#pragma once

// Chat-completion transport over HTTP(S). Kept apart from negatives.hpp so that
// only code talking to a live endpoint pulls in cpp-httplib.

#include "zsoc/error.hpp"
#include "zsoc/negatives.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <string>

namespace zsoc {

struct LlmEndpoint {
    std::string base_url = "https://api.openai.com"; // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4";
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 60;
};

/// Request body for one user message at temperature 0.
inline nlohmann::json chat_request_body(const LlmEndpoint& endpoint, const std::string& prompt) {
    return {{"model", endpoint.model},
            {"temperature", 0},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
}

inline std::string chat_response_text(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        // Treated as an empty reply; the caller's retry policy decides.
        return {};
    }
}

class HttpChatTransport : public ChatTransport {
public:
    explicit HttpChatTransport(LlmEndpoint endpoint) : endpoint_(std::move(endpoint)) {
        const char* key = std::getenv(endpoint_.api_key_env.c_str());
        if (key == nullptr || *key == '\0')
            throw Error(Errc::auth_failure, "environment variable " + endpoint_.api_key_env + " is not set");
        api_key_ = key;
    }

    std::string complete(const std::string& prompt) override {
        httplib::Client client(endpoint_.base_url);
        client.set_connection_timeout(endpoint_.timeout_seconds);
        client.set_read_timeout(endpoint_.timeout_seconds);
        client.set_bearer_token_auth(api_key_);
        const auto body = chat_request_body(endpoint_, prompt).dump();
        auto res = client.Post(endpoint_.path, body, "application/json");
        if (!res)
            throw Error(Errc::endpoint_unreachable,
                        endpoint_.base_url + ": " + httplib::to_string(res.error()));
        if (res->status == 401 || res->status == 403)
            throw Error(Errc::auth_failure, "HTTP " + std::to_string(res->status));
        if (res->status / 100 != 2)
            throw Error(Errc::endpoint_unreachable, "HTTP " + std::to_string(res->status));
        return chat_response_text(res->body);
    }

private:
    LlmEndpoint endpoint_;
    std::string api_key_;
};

} // namespace zsoc

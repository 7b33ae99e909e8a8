#pragma once

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "eiarag/concurrency.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/error.hpp"
#include "eiarag/llm.hpp"

namespace eiarag {

struct HttpEndpoint {
    /// scheme://host:port, e.g. "http://127.0.0.1:8080"
    std::string base_url;
    std::chrono::milliseconds timeout{30000};
    int retries = 2;
    std::size_t max_in_flight = 4;
    std::chrono::milliseconds retry_backoff{100};
};

namespace detail {

/// POSTs a JSON body with retries. Throws TimeoutError when the last failure
/// was a timeout, TransportError otherwise.
inline nlohmann::json post_json(const HttpEndpoint& ep, ConcurrencyGate& gate, const std::string& path,
                                const nlohmann::json& body) {
    auto ticket = gate.enter();
    const int attempts = std::max(1, ep.retries + 1);
    std::string last_error;
    bool last_was_timeout = false;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        httplib::Client cli(ep.base_url);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(ep.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(ep.timeout - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());
        auto res = cli.Post(path, body.dump(), "application/json");
        if (res && res->status == 200) {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error& e) {
                throw TransportError(ep.base_url + path + " returned invalid JSON: " + e.what(), attempt);
            }
        }
        if (res) {
            last_error = "HTTP " + std::to_string(res->status) + " from " + ep.base_url + path;
            last_was_timeout = false;
        } else {
            const auto err = res.error();
            last_was_timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
            last_error = httplib::to_string(err) + " calling " + ep.base_url + path;
        }
        if (attempt < attempts) std::this_thread::sleep_for(ep.retry_backoff * attempt);
    }
    if (last_was_timeout) throw TimeoutError(last_error, attempts);
    throw TransportError(last_error, attempts);
}

}  // namespace detail

/// `POST /embed {"text", "layer", "include_bos"}` -> `{"dim", "layer", "vectors"}`.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(HttpEndpoint endpoint, std::size_t dim, int max_layer)
        : endpoint_(std::move(endpoint)), gate_(endpoint_.max_in_flight), dim_(dim), max_layer_(max_layer) {}

    std::size_t dim() const override { return dim_; }
    int max_layer() const override { return max_layer_; }

    TokenEmbeddingSequence embed(const EmbedRequest& request) const override {
        const nlohmann::json body{{"text", request.text}, {"layer", request.layer}, {"include_bos", request.include_bos}};
        const auto reply = detail::post_json(endpoint_, gate_, "/embed", body);
        try {
            TokenEmbeddingSequence seq;
            seq.layer = reply.at("layer").get<int>();
            const auto dim = reply.at("dim").get<std::size_t>();
            if (dim != dim_) throw ValidationError("embed endpoint reports dim " + std::to_string(dim));
            for (const auto& row : reply.at("vectors")) {
                auto v = row.get<std::vector<float>>();
                if (v.size() != dim_) throw ValidationError("embed endpoint returned a vector of wrong dimension");
                seq.vectors.push_back(std::move(v));
            }
            return seq;
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed /embed reply: ") + e.what(), 1);
        }
    }

private:
    HttpEndpoint endpoint_;
    mutable ConcurrencyGate gate_;
    std::size_t dim_;
    int max_layer_;
};

/// `POST /generate {"prompt", "max_new_tokens", "greedy": true}` -> `{"text"}`.
class HttpGenerationClient final : public GenerationClient {
public:
    explicit HttpGenerationClient(HttpEndpoint endpoint)
        : endpoint_(std::move(endpoint)), gate_(endpoint_.max_in_flight) {}

    std::string name() const override { return "http:" + endpoint_.base_url; }

protected:
    std::string complete(const std::string& prompt, int max_new_tokens) override {
        const nlohmann::json body{{"prompt", prompt}, {"max_new_tokens", max_new_tokens}, {"greedy", true}};
        const auto reply = detail::post_json(endpoint_, gate_, "/generate", body);
        if (!reply.contains("text") || !reply["text"].is_string()) {
            throw TransportError("malformed /generate reply: missing 'text'", 1);
        }
        return reply["text"].get<std::string>();
    }

private:
    HttpEndpoint endpoint_;
    ConcurrencyGate gate_;
};

}  // namespace eiarag

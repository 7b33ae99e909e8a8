#pragma once

#include <chrono>
#include <cstdio>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "eiarag/concurrency.hpp"
#include "eiarag/eval.hpp"
#include "eiarag/pipeline.hpp"
#include "eiarag/routers.hpp"

namespace eiarag {

inline constexpr const char* kVersion = "0.1.0";

/// HTTP front end over one router and the answering pipeline.
///   POST /route  {"question"} -> {"retrieve", "score", "policy", "decision_ms"}
///   POST /answer {"question"} -> {"answer", "retrieved", "passages", "policy"}
///   GET  /healthz
/// All state is read-only after construction; handlers may run concurrently.
class RoutingService {
public:
    RoutingService(const Router& router, const Backends& backends, GenerationConfig generation, Clock& clock)
        : router_(router), backends_(backends), generation_(generation), clock_(clock) {}

    nlohmann::json handle_route(const nlohmann::json& body) const {
        const auto q = query_from(body);
        const auto start = clock_.now();
        const auto d = router_.route(q);
        const auto elapsed = clock_.now() - start;
        return {{"retrieve", d.retrieve},
                {"score", d.score ? nlohmann::json(*d.score) : nlohmann::json(nullptr)},
                {"policy", d.policy},
                {"decision_ms", std::chrono::duration<double, std::milli>(elapsed).count()}};
    }

    nlohmann::json handle_answer(const nlohmann::json& body) const {
        const auto q = query_from(body);
        const auto d = router_.route(q);
        const auto out = answer_with(q, d.retrieve, backends_, generation_);
        auto passages = nlohmann::json::array();
        for (const auto& hit : out.passages) passages.push_back({{"doc_id", hit.passage->doc_id}, {"score", hit.score}});
        return {{"answer", out.completion}, {"retrieved", d.retrieve}, {"passages", passages}, {"policy", d.policy}};
    }

    nlohmann::json health() const {
        return {{"status", "ok"}, {"version", kVersion}, {"policy", router_.name()}, {"backend", backends_.client.name()}};
    }

    void mount(httplib::Server& server) const {
        server.Post("/route", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, [&](const nlohmann::json& body) { return handle_route(body); }, req.body);
        });
        server.Post("/answer", [this](const httplib::Request& req, httplib::Response& res) {
            respond(res, [&](const nlohmann::json& body) { return handle_answer(body); }, req.body);
        });
        server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(health().dump(), "application/json");
        });
    }

private:
    static QueryRecord query_from(const nlohmann::json& body) {
        if (!body.is_object() || !body.contains("question") || !body["question"].is_string()) {
            throw ValidationError("request body must be an object with a string 'question'");
        }
        QueryRecord q;
        q.question = body["question"].get<std::string>();
        if (text::trim(q.question).empty()) throw ValidationError("question is blank");
        char id[32];
        std::snprintf(id, sizeof id, "http-%016llx", static_cast<unsigned long long>(fnv1a(q.question)));
        q.id = id;
        return q;
    }

    template <typename Handler>
    static void respond(httplib::Response& res, Handler&& handler, const std::string& raw) {
        try {
            const auto body = nlohmann::json::parse(raw);
            res.set_content(handler(body).dump(), "application/json");
        } catch (const nlohmann::json::parse_error& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", std::string("invalid JSON: ") + e.what()}}.dump(), "application/json");
        } catch (const ValidationError& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 502;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    }

    const Router& router_;
    const Backends& backends_;
    GenerationConfig generation_;
    Clock& clock_;
};

}  // namespace eiarag

#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "eiarag/cli.hpp"
#include "eiarag/service.hpp"
#include "support.hpp"

using namespace eiarag;
using eiarag::testing::Harness;
using eiarag::testing::TempDir;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "eiarag");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json last_json_line(const std::string& s) {
    std::istringstream in(s);
    std::string line, last;
    while (std::getline(in, line)) {
        if (!line.empty()) last = line;
    }
    return nlohmann::json::parse(last);
}

}  // namespace

TEST(Cli, UsageAndUnknownCommand) {
    EXPECT_EQ(invoke({}).code, 2);
    const auto r = invoke({"frobnicate"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("usage:"), std::string::npos);
    EXPECT_EQ(invoke({"--help"}).code, 0);
    EXPECT_EQ(invoke({"eval", "--bogus-flag"}).code, 2);
}

TEST(Cli, ErrorsAreOneJsonLine) {
    TempDir dir;
    const auto r = invoke({"train", "--out", dir / "o"});
    EXPECT_EQ(r.code, 1);
    const auto j = last_json_line(r.err);
    EXPECT_TRUE(j["error"]["kind"].is_string());
    EXPECT_TRUE(j["error"]["message"].is_string());

    const auto bad = invoke({"ingest", "--out", dir / "o", "--set", "classifier.nope=1"});
    EXPECT_EQ(last_json_line(bad.err)["error"]["kind"], "config");

    const auto serve = invoke({"serve", "--out", dir / "o"});
    EXPECT_EQ(serve.code, 1);
    EXPECT_EQ(last_json_line(serve.err)["error"]["kind"], "config");
}

TEST(Cli, FullStubPipeline) {
    TempDir dir;
    const auto out = dir / "run";
    const std::vector<std::string> common{"--out", out, "--set", "eval.fake_clock=true", "--set", "classifier.max_epochs=5"};
    auto with = [&](std::vector<std::string> args) {
        args.insert(args.end(), common.begin(), common.end());
        return invoke(args);
    };
    auto r = with({"ingest", "--set", "stub.synthesize=120", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto split = nlohmann::json::parse(eiarag::testing::slurp(out + "/split.json"));
    EXPECT_EQ(split["n_train"], 90);
    EXPECT_EQ(split["seed"], 3);
    for (const auto* f : {"world.jsonl", "train.jsonl", "test.jsonl", "index.eibm"}) {
        EXPECT_TRUE(std::filesystem::exists(out + "/" + f)) << f;
    }

    r = with({"label"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(last_json_line(r.out)["labeled"], 90);
    r = with({"train"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(out + "/model.eimc"));
    EXPECT_TRUE(std::filesystem::exists(out + "/training_log.json"));

    r = with({"eval", "--policy", "none,all,oracle,darag,parag-vanilla,parag-taare,ei"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = eiarag::testing::slurp(out + "/reports.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "Methods,ACC(%),POR(%)");
    for (const auto* p : {"none", "all", "oracle", "darag", "parag-vanilla", "parag-taare", "ei"}) {
        const auto report = report_from_json(nlohmann::json::parse(eiarag::testing::slurp(out + "/report_" + p + ".json")));
        EXPECT_EQ(report.n, 30u) << p;
        EXPECT_NO_THROW(check_report_identities(report));
    }
    EXPECT_TRUE(std::filesystem::exists(out + "/thresholds.json"));

    r = with({"embed"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_embedding_cache(out + "/embeddings.eiar").records.size(), 90u);

    r = with({"viz"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(eiarag::testing::slurp(out + "/viz.csv").rfind("query_id,x,y,log_freq,relation\n", 0), 0u);

    r = with({"sweep-layers", "--layers", "0,1"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(eiarag::testing::slurp(out + "/layers.csv").rfind("layer,acc_percent,por_percent,val_accuracy\n", 0), 0u);
    r = with({"sweep-layers", "--layers", "0,99"});
    EXPECT_EQ(r.code, 1);

    const auto world = load_stub_world(out + "/world.jsonl");
    r = with({"route", "--question", world[0].question});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto route = nlohmann::json::parse(eiarag::testing::slurp(out + "/route.json"));
    EXPECT_EQ(eiarag::testing::check_route_schema(route), "");
    EXPECT_EQ(route["policy"], "ei");
}

TEST(Cli, ConfigFileFromEnvironment) {
    TempDir dir;
    eiarag::testing::spit(dir / "c.toml", "[paths]\nout_dir = \"" + (dir / "envout") + "\"\n[stub]\nsynthesize = 20\n");
    ::setenv("EIARAG_CONFIG", (dir / "c.toml").c_str(), 1);
    const auto r = invoke({"ingest"});
    ::unsetenv("EIARAG_CONFIG");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "envout/train.jsonl"));
}

// ---------------------------------------------------------------------------
// HTTP service

TEST(Service, EndpointsOverHttp) {
    auto spec = eiarag::testing::synthetic_world(40, 6);
    Harness h(spec);
    const auto labels = build_labeled_set(h.world.queries, h.backends, {});
    TrainConfig tc;
    tc.max_epochs = 5;
    const auto model = train(init_model(16, 16, 8, 0), labels, tc).first;
    EmbeddingRouter router(model, *h.world.embedder);
    FakeClock clock;
    RoutingService service(router, h.backends, {}, clock);
    httplib::Server server;
    service.mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/healthz");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(nlohmann::json::parse(health->body)["version"], kVersion);

    const std::string body = nlohmann::json{{"question", spec.queries[0].question}}.dump();
    auto route = client.Post("/route", body, "application/json");
    ASSERT_TRUE(route);
    EXPECT_EQ(route->status, 200);
    EXPECT_EQ(eiarag::testing::check_route_schema(nlohmann::json::parse(route->body)), "");
    auto answer = client.Post("/answer", body, "application/json");
    ASSERT_TRUE(answer);
    EXPECT_EQ(eiarag::testing::check_answer_schema(nlohmann::json::parse(answer->body)), "");

    auto bad = client.Post("/route", "{not json", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    auto missing = client.Post("/route", R"({"q": 1})", "application/json");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 400);

    server.stop();
    thread.join();
}

TEST(Service, SchemaCheckersRejectMalformedBodies) {
    using eiarag::testing::check_answer_schema;
    using eiarag::testing::check_route_schema;
    EXPECT_EQ(check_route_schema({{"retrieve", true}, {"score", nullptr}, {"policy", "all"}, {"decision_ms", 0}}), "");
    EXPECT_NE(check_route_schema({{"retrieve", 1}, {"score", 0.5}, {"policy", "ei"}, {"decision_ms", 0}}), "");
    EXPECT_NE(check_route_schema({{"retrieve", true}, {"score", 0.5}, {"policy", "ei"}}), "");
    EXPECT_NE(check_answer_schema({{"answer", "x"}, {"retrieved", false}, {"passages", {{{"doc_id", "d"}, {"score", 1}}}},
                                   {"policy", "ei"}}),
              "");
}

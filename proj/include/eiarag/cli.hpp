#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eiarag/classifier.hpp"
#include "eiarag/config.hpp"
#include "eiarag/dataset.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/eval.hpp"
#include "eiarag/http_backends.hpp"
#include "eiarag/labeler.hpp"
#include "eiarag/llm.hpp"
#include "eiarag/retrieval.hpp"
#include "eiarag/routers.hpp"
#include "eiarag/service.hpp"

namespace eiarag::cli {

namespace fs = std::filesystem;

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"ingest", "embed", "label", "train", "eval",
                                                "sweep-layers", "viz", "route", "serve"};
    return names;
}

inline std::string usage() {
    return "usage: eiarag <command> [--config FILE] [--set section.key=value]... [options]\n"
           "commands:\n"
           "  ingest        load or synthesize a dataset, split it, build the BM25 index\n"
           "  embed         compute sentence embeddings for a dataset\n"
           "  label         label training questions by answering with and without retrieval\n"
           "  train         train the retrieval-necessity classifier\n"
           "  eval          evaluate routing policies (none, all, oracle, darag, parag-vanilla, parag-taare, ei)\n"
           "  sweep-layers  train and evaluate one classifier per embedding layer\n"
           "  viz           emit a 2-D projection of embeddings as CSV\n"
           "  route         decide retrieval for a single question\n"
           "  serve         run the HTTP routing service\n"
           "the default config file is taken from $EIARAG_CONFIG when set\n";
}

inline void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("io", "cannot open '" + path.string() + "' for writing");
    out << content;
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open '" + path + "'");
    return nlohmann::json::parse(in);
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Resolved configuration plus lazily constructed backends.
class Runtime {
public:
    explicit Runtime(Config cfg) : cfg_(std::move(cfg)) {
        out_dir_ = cfg_.str("paths.out_dir");
        fs::create_directories(out_dir_);
    }

    const Config& cfg() const { return cfg_; }
    const fs::path& out_dir() const { return out_dir_; }
    fs::path out(const std::string& name) const { return out_dir_ / name; }

    /// The configured path, or `fallback` under the output directory.
    std::string path(const std::string& key, const std::string& fallback) const {
        auto p = cfg_.str("paths." + key);
        return p.empty() ? out(fallback).string() : p;
    }

    bool stub() const {
        const auto kind = cfg_.str("backend.kind");
        if (kind != "stub" && kind != "http") throw ConfigError("backend.kind must be 'stub' or 'http'");
        return kind == "stub";
    }

    StubWorldSpec stub_spec(std::vector<StubQuery> queries) const {
        StubWorldSpec spec;
        spec.queries = std::move(queries);
        spec.seed = cfg_.get<std::uint64_t>("stub.seed");
        spec.dim = cfg_.get<std::size_t>("stub.dim");
        spec.max_layer = cfg_.get<int>("stub.max_layer");
        spec.noise = cfg_.get<double>("stub.noise");
        spec.signal_strength = cfg_.get<double>("stub.signal_strength");
        spec.signal_min_layer = cfg_.get<int>("stub.signal_min_layer");
        spec.decision_flip = cfg_.get<double>("stub.decision_flip");
        return spec;
    }

    StubWorld& world() {
        if (!world_) {
            const auto path = this->path("world", "world.jsonl");
            if (!fs::exists(path)) throw ConfigError("stub backend needs a world file; '" + path + "' does not exist");
            world_ = make_stub_world(stub_spec(load_stub_world(path)));
        }
        return *world_;
    }

    GenerationClient& client() {
        if (stub()) return *world().client;
        if (!http_client_) http_client_ = std::make_unique<HttpGenerationClient>(endpoint("generate_url"));
        return *http_client_;
    }

    const EmbeddingProvider& embedder() {
        if (stub()) return *world().embedder;
        if (!http_embedder_) {
            http_embedder_ = std::make_unique<HttpEmbeddingProvider>(
                endpoint("embed_url"), cfg_.get<std::size_t>("backend.dim"), cfg_.get<int>("backend.max_layer"));
        }
        return *http_embedder_;
    }

    const Bm25Index& index() {
        if (!index_) {
            const auto k1 = cfg_.get<double>("retrieval.k1"), b = cfg_.get<double>("retrieval.b");
            const auto configured = cfg_.str("paths.index");
            const auto default_index = out("index.eibm");
            if (!configured.empty()) {
                index_ = Bm25Index::load(configured);
            } else if (!cfg_.str("paths.corpus").empty()) {
                index_ = build_index(load_corpus(cfg_.str("paths.corpus")), k1, b);
            } else if (fs::exists(default_index)) {
                index_ = Bm25Index::load(default_index.string());
            } else if (stub()) {
                index_ = build_index(world().corpus, k1, b);
            } else {
                throw ConfigError("no retrieval corpus: set paths.corpus or paths.index");
            }
        }
        return *index_;
    }

    QuerySet queries(const std::string& key, const std::string& fallback) const {
        const auto p = path(key, fallback);
        if (!fs::exists(p)) throw ConfigError("dataset '" + p + "' does not exist");
        return load_query_set(p);
    }

    /// Dataset named by paths.dataset, else paths.<key> (default out/<fallback>).
    QuerySet primary(const std::string& key, const std::string& fallback) const {
        const auto d = cfg_.str("paths.dataset");
        return d.empty() ? queries(key, fallback) : load_query_set(d);
    }

    const ExemplarSelector& exemplars(const QuerySet& fallback_pool) {
        if (!exemplars_) {
            const auto train_path = path("train", "train.jsonl");
            const auto pool = fs::exists(train_path) ? load_query_set(train_path) : fallback_pool;
            exemplars_ = ExemplarSelector(pool, cfg_.get<std::size_t>("prompt.shots"),
                                          cfg_.get<std::uint64_t>("prompt.exemplar_seed"));
        }
        return *exemplars_;
    }

    Backends backends(const QuerySet& fallback_pool) {
        return Backends{client(), embedder(), index(), exemplars(fallback_pool)};
    }

    GenerationConfig generation() const {
        GenerationConfig g;
        g.top_k = cfg_.get<std::size_t>("retrieval.top_k");
        g.max_new_tokens = cfg_.get<int>("prompt.max_new_tokens");
        g.placement = cfg_.get<bool>("prompt.passages_first") ? PassagePlacement::BeforeExemplars
                                                              : PassagePlacement::AfterExemplars;
        return g;
    }

    EmbeddingConfig embedding() const { return {cfg_.get<int>("embedding.layer"), cfg_.get<bool>("embedding.include_bos")}; }

    LabelConfig label_config() const {
        LabelConfig c;
        c.generation = generation();
        c.embedding = embedding();
        c.strip_punctuation = cfg_.get<bool>("labeling.strip_punctuation");
        c.strict = cfg_.get<bool>("labeling.strict");
        c.workers = cfg_.get<std::size_t>("labeling.workers");
        return c;
    }

    EvalConfig eval_config() const {
        EvalConfig c;
        c.generation = generation();
        c.strip_punctuation = cfg_.get<bool>("labeling.strip_punctuation");
        c.strict = cfg_.get<bool>("eval.strict");
        c.workers = cfg_.get<std::size_t>("eval.workers");
        return c;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.learning_rate = cfg_.get<double>("classifier.learning_rate");
        t.max_epochs = cfg_.get<int>("classifier.max_epochs");
        t.batch_size = cfg_.get<std::size_t>("classifier.batch_size");
        t.val_fraction = cfg_.get<double>("classifier.val_fraction");
        t.seed = cfg_.get<std::uint64_t>("classifier.seed");
        return t;
    }

    ClassifierShape shape() const { return {cfg_.get<std::size_t>("classifier.h1"), cfg_.get<std::size_t>("classifier.h2")}; }

    DecisionPrompts decision_prompts() const {
        DecisionPrompts p;
        if (auto v = cfg_.str("prompt.vanilla_template"); !v.empty()) p.vanilla = read_text(v);
        if (auto t = cfg_.str("prompt.taare_template"); !t.empty()) p.taare = read_text(t);
        return p;
    }

    Clock& clock() {
        if (!clock_) {
            if (cfg_.get<bool>("eval.fake_clock")) {
                clock_ = std::make_unique<FakeClock>();
            } else {
                clock_ = std::make_unique<SystemClock>();
            }
        }
        return *clock_;
    }

    ClassifierModel model() const {
        const auto p = path("model", "model.eimc");
        if (!fs::exists(p)) throw ConfigError("model file '" + p + "' does not exist; run `train` first");
        return load_model(p);
    }

    LabeledSet labels() const {
        return load_labeled_set(path("labels", "labels.jsonl"), path("label_embeddings", "label_embeddings.eiar"));
    }

private:
    HttpEndpoint endpoint(const std::string& key) const {
        HttpEndpoint ep;
        ep.base_url = cfg_.str("backend." + key);
        ep.timeout = std::chrono::milliseconds(cfg_.get<long long>("backend.timeout_ms"));
        ep.retries = cfg_.get<int>("backend.retries");
        ep.max_in_flight = cfg_.get<std::size_t>("backend.max_in_flight");
        return ep;
    }

    Config cfg_;
    fs::path out_dir_;
    std::optional<StubWorld> world_;
    std::unique_ptr<GenerationClient> http_client_;
    std::unique_ptr<EmbeddingProvider> http_embedder_;
    std::optional<Bm25Index> index_;
    std::optional<ExemplarSelector> exemplars_;
    std::unique_ptr<Clock> clock_;
};

// ---------------------------------------------------------------------------
// Commands

inline std::vector<Triple> load_triples(const std::string& path) {
    std::vector<Triple> triples;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
        try {
            Triple t;
            t.id = j.at("id").get<std::string>();
            t.subject = j.at("subject").get<std::string>();
            t.relation = j.at("relation").get<std::string>();
            t.answers = j.at("answers").get<std::vector<std::string>>();
            if (j.contains("entity_freq") && j["entity_freq"].is_number()) t.entity_freq = j["entity_freq"].get<double>();
            triples.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line);
        }
    });
    return triples;
}

inline int cmd_ingest(Runtime& rt, std::ostream& out) {
    const auto& cfg = rt.cfg();
    QuerySet all;
    if (const auto n = cfg.get<std::size_t>("stub.synthesize"); n > 0) {
        SynthesisOptions opts;
        opts.n = n;
        opts.seed = cfg.get<std::uint64_t>("stub.seed");
        opts.p_knows = cfg.get<double>("stub.p_knows");
        opts.p_in_corpus = cfg.get<double>("stub.p_in_corpus");
        opts.entity_centric = cfg.get<bool>("stub.entity_centric");
        const auto queries = synthesize_stub_queries(opts);
        save_stub_world(queries, rt.out("world.jsonl").string());
        std::vector<QueryRecord> records;
        for (const auto& q : queries) records.push_back(to_record(q));
        all = QuerySet("world", std::move(records));
    } else if (const auto triples = cfg.str("paths.triples"); !triples.empty()) {
        all = generate_query_set(stem_of(triples), load_triples(triples));
    } else if (const auto dataset = cfg.str("paths.dataset"); !dataset.empty()) {
        all = load_query_set(dataset);
    } else if (rt.stub()) {
        all = rt.world().queries;
    } else {
        throw ConfigError("ingest needs paths.dataset, paths.triples or stub.synthesize");
    }

    SplitOptions split;
    split.train_fraction = cfg.get<double>("split.train_fraction");
    split.seed = cfg.get<std::uint64_t>("split.seed");
    split.stratify_by_relation = cfg.get<bool>("split.stratify");
    const auto parts = split_query_set(all, split);
    save_query_set(parts.train, rt.out("train.jsonl").string());
    save_query_set(parts.test, rt.out("test.jsonl").string());
    const nlohmann::json report{{"algorithm", parts.algorithm},       {"seed", split.seed},
                                {"train_fraction", split.train_fraction}, {"stratified", split.stratify_by_relation},
                                {"n", all.size()},                    {"n_train", parts.train.size()},
                                {"n_test", parts.test.size()}};
    write_text(rt.out("split.json"), report.dump(2) + "\n");

    std::vector<Passage> corpus;
    if (const auto c = cfg.str("paths.corpus"); !c.empty()) {
        corpus = load_corpus(c);
    } else if (rt.stub()) {
        const auto world_path = rt.path("world", "world.jsonl");
        corpus = make_stub_world(rt.stub_spec(load_stub_world(world_path))).corpus;
    }
    if (!corpus.empty()) {
        build_index(std::move(corpus), cfg.get<double>("retrieval.k1"), cfg.get<double>("retrieval.b"))
            .save(rt.out("index.eibm").string());
    }
    out << report.dump() << '\n';
    return 0;
}

inline int cmd_embed(Runtime& rt, std::ostream& out) {
    const auto set = rt.primary("train", "train.jsonl");
    const auto emb = rt.embedding();
    std::vector<SentenceEmbedding> rows;
    for (const auto& q : set) rows.push_back(sentence_embedding(q.question, emb.layer, rt.embedder(), emb.include_bos, q.id));
    const auto target = rt.out("embeddings.eiar");
    write_embedding_cache(rows, target.string(), static_cast<std::uint32_t>(rt.embedder().dim()), emb.layer);
    out << nlohmann::json{{"embeddings", target.string()}, {"count", rows.size()}, {"layer", emb.layer}}.dump() << '\n';
    return 0;
}

inline int cmd_label(Runtime& rt, std::ostream& out) {
    const auto train = rt.primary("train", "train.jsonl");
    LabelSummary summary;
    const auto set = build_labeled_set(train, rt.backends(train), rt.label_config(), &summary);
    save_labeled_set(set, rt.out("labels.jsonl").string(), rt.out("label_embeddings.eiar").string());
    const nlohmann::json report{{"labeled", set.size()},
                                {"label_1", summary.positives},
                                {"label_0", summary.negatives},
                                {"skipped", summary.skipped},
                                {"generation_calls", 2 * set.size()}};
    write_text(rt.out("label_summary.json"), report.dump(2) + "\n");
    out << report.dump() << '\n';
    return 0;
}

inline int cmd_train(Runtime& rt, std::ostream& out) {
    const auto data = rt.labels();
    if (data.size() == 0) throw ValidationError("labeled set is empty");
    const auto shape = rt.shape();
    const auto tcfg = rt.train_config();
    auto model = init_model(data.examples.front().embedding.values.size(), shape.h1, shape.h2, tcfg.seed);
    auto [trained, log] = train(model, data, tcfg);
    save_model(trained, rt.out("model.eimc").string());
    write_text(rt.out("training_log.json"), to_json(log).dump(2) + "\n");
    for (const auto& w : log.warnings) std::clog << "[eiarag] warning: " << w << '\n';
    out << nlohmann::json{{"model", rt.out("model.eimc").string()},
                          {"best_epoch", log.best_epoch},
                          {"val_accuracy", log.best_val_accuracy}}
               .dump()
        << '\n';
    return 0;
}

inline std::map<std::string, Correctness> load_annotations(const std::string& path) {
    std::map<std::string, Correctness> out;
    for (const auto& [id, c] : load_label_rows(path)) out[id] = c;
    return out;
}

inline std::unique_ptr<Router> make_router(Runtime& rt, const std::string& policy, const QuerySet& test,
                                           std::optional<ClassifierModel>& model_slot) {
    if (policy == "none") return std::make_unique<NoRetrievalRouter>();
    if (policy == "all") return std::make_unique<FullRetrievalRouter>();
    if (policy == "parag-vanilla" || policy == "parag-taare") {
        return std::make_unique<PromptRouter>(rt.client(), policy == "parag-taare" ? PromptVariant::Taare : PromptVariant::Vanilla,
                                              rt.clock(), rt.decision_prompts(), rt.cfg().get<int>("prompt.decision_max_new_tokens"));
    }
    if (policy == "ei") {
        model_slot = rt.model();
        return std::make_unique<EmbeddingRouter>(*model_slot, rt.embedder(), rt.cfg().get<double>("classifier.threshold"),
                                                 rt.embedding());
    }
    if (policy == "oracle") {
        const auto configured = rt.cfg().str("paths.annotations");
        if (!configured.empty()) return std::make_unique<OracleRouter>(load_annotations(configured));
        LabelSummary summary;
        auto annotations = annotate_query_set(test, rt.backends(test), rt.label_config(), &summary);
        std::vector<nlohmann::json> rows;
        for (const auto& [id, c] : annotations) {
            rows.push_back({{"query_id", id}, {"label", c.retrieval_helps() ? 1 : 0}, {"nr_correct", c.nr_correct},
                            {"fr_correct", c.fr_correct}});
        }
        write_jsonl(rt.out("annotations.jsonl").string(), rows);
        return std::make_unique<OracleRouter>(std::move(annotations));
    }
    if (policy == "darag") {
        const auto configured = rt.cfg().str("paths.thresholds");
        FrequencyThresholds t;
        if (!configured.empty()) {
            t = thresholds_from_json(read_json(configured));
        } else {
            const auto train = rt.queries("train", "train.jsonl");
            t = fit_frequency_thresholds(train, load_annotations(rt.path("labels", "labels.jsonl")));
            write_text(rt.out("thresholds.json"), to_json(t).dump(2) + "\n");
        }
        return std::make_unique<FrequencyRouter>(std::move(t));
    }
    throw ConfigError("unknown policy '" + policy + "'");
}

inline int cmd_eval(Runtime& rt, std::ostream& out) {
    const auto test = rt.primary("test", "test.jsonl");
    std::vector<EvalReport> reports;
    for (const auto& policy : text::split(rt.cfg().str("eval.policy"), ',')) {
        std::optional<ClassifierModel> model;
        const auto router = make_router(rt, std::string(text::trim(policy)), test, model);
        const auto report = evaluate(*router, test, rt.backends(test), rt.eval_config(), rt.clock());
        write_text(rt.out("report_" + report.policy + ".json"), to_json(report).dump(2) + "\n");
        out << to_json(report).dump() << '\n';
        reports.push_back(report);
    }
    write_text(rt.out("reports.csv"), reports_csv(reports));
    return 0;
}

inline std::vector<int> parse_layers(const std::string& spec) {
    std::vector<int> layers;
    for (const auto& part : text::split(spec, ',')) {
        const auto t = text::trim(part);
        if (t.empty()) continue;
        try {
            layers.push_back(std::stoi(std::string(t)));
        } catch (const std::exception&) {
            throw ConfigError("bad layer '" + std::string(t) + "'");
        }
    }
    if (layers.empty()) throw ConfigError("no layers given");
    return layers;
}

inline int cmd_sweep(Runtime& rt, const std::string& layers_spec, std::ostream& out) {
    const auto train = rt.queries("train", "train.jsonl");
    const auto test = rt.primary("test", "test.jsonl");
    const auto labels = rt.labels();
    const auto backends = rt.backends(train);
    SweepInputs in{train, test, labels, backends, rt.shape(), rt.train_config(), rt.embedding(), rt.eval_config(),
                   rt.cfg().get<double>("classifier.threshold")};
    const auto rows = sweep_layers(parse_layers(layers_spec), in, rt.clock());
    const auto csv = layers_csv(rows);
    write_text(rt.out("layers.csv"), csv);
    out << csv;
    return 0;
}

inline int cmd_viz(Runtime& rt, std::ostream& out) {
    const auto set = rt.primary("train", "train.jsonl");
    std::vector<SentenceEmbedding> embeddings;
    if (const auto cache = rt.cfg().str("paths.embeddings"); !cache.empty()) {
        embeddings = read_embedding_cache(cache).records;
    } else {
        const auto emb = rt.embedding();
        for (const auto& q : set) {
            embeddings.push_back(sentence_embedding(q.question, emb.layer, rt.embedder(), emb.include_bos, q.id));
        }
    }
    const auto csv = viz_csv(emit_viz(embeddings, set));
    write_text(rt.out("viz.csv"), csv);
    out << "wrote " << rt.out("viz.csv").string() << " (" << embeddings.size() << " rows)\n";
    return 0;
}

inline int cmd_route(Runtime& rt, const std::string& question, std::ostream& out) {
    if (text::trim(question).empty()) throw ValidationError("route needs --question");
    QuerySet none;
    std::optional<ClassifierModel> model;
    const auto router = make_router(rt, rt.cfg().str("server.policy"), none, model);
    const auto backends = rt.backends(none);
    RoutingService service(*router, backends, rt.generation(), rt.clock());
    const auto reply = service.handle_route({{"question", question}});
    write_text(rt.out("route.json"), reply.dump(2) + "\n");
    out << reply.dump() << '\n';
    return 0;
}

inline int cmd_serve(Runtime& rt, std::ostream& out) {
    const auto model_path = rt.path("model", "model.eimc");
    if (!fs::exists(model_path)) throw ConfigError("cannot serve without a model file ('" + model_path + "' missing)");
    QuerySet none;
    std::optional<ClassifierModel> model;
    const auto router = make_router(rt, rt.cfg().str("server.policy"), none, model);
    const auto backends = rt.backends(none);
    RoutingService service(*router, backends, rt.generation(), rt.clock());
    httplib::Server server;
    service.mount(server);
    const auto host = rt.cfg().str("server.host");
    const auto port = rt.cfg().get<int>("server.port");
    out << "serving policy '" << router->name() << "' on http://" << host << ':' << port << std::endl;
    if (!server.listen(host, port)) throw Error("io", "cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

// ---------------------------------------------------------------------------

inline void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

/// Entry point. Returns 0 on success, 1 on a runtime error (with one JSON
/// error line on `err`), 2 on usage errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    if (argc < 2) {
        err << usage();
        return 2;
    }
    const std::string command = argv[1];
    if (command == "-h" || command == "--help") {
        out << usage();
        return 0;
    }
    if (std::find(subcommands().begin(), subcommands().end(), command) == subcommands().end()) {
        err << "unknown command '" << command << "'\n" << usage();
        return 2;
    }

    CLI::App app{"embedding-informed adaptive retrieval", "eiarag " + command};
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir, dataset, train_path, test_path, world, model, labels, policy, layers = "0,1", question;
    std::optional<std::uint64_t> seed;
    std::optional<int> port;
    std::optional<int> layer;
    app.add_option("--config", config_path, "TOML config file (default: $EIARAG_CONFIG)");
    app.add_option("--set", overrides, "override a config key, e.g. --set classifier.seed=3");
    app.add_option("--out", out_dir, "output directory (paths.out_dir)");
    app.add_option("--dataset", dataset, "dataset JSONL (paths.dataset)");
    app.add_option("--train", train_path, "training split (paths.train)");
    app.add_option("--test", test_path, "test split (paths.test)");
    app.add_option("--world", world, "stub world JSONL (paths.world)");
    app.add_option("--model", model, "model file (paths.model)");
    app.add_option("--labels", labels, "labeled set JSONL (paths.labels)");
    app.add_option("--policy", policy, "routing policy or comma-separated list (eval.policy / server.policy)");
    app.add_option("--seed", seed, "seed for split, classifier and stub world");
    app.add_option("--layer", layer, "embedding layer (embedding.layer)");
    app.add_option("--layers", layers, "comma-separated layers for sweep-layers");
    app.add_option("--question", question, "question text for route");
    app.add_option("--port", port, "service port (server.port)");

    std::vector<std::string> rest(argv + 2, argv + argc);
    std::reverse(rest.begin(), rest.end());
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", e.what());
        err << usage();
        return 2;
    }

    try {
        Config cfg;
        if (config_path.empty()) {
            if (const char* env = std::getenv("EIARAG_CONFIG"); env && *env) config_path = env;
        }
        if (!config_path.empty()) cfg.merge_file(config_path);
        for (const auto& o : overrides) cfg.set(o);
        auto set_str = [&](const char* key, const std::string& v) {
            if (!v.empty()) {
                const auto parts = text::split(key, '.');
                cfg.merge({{parts[0], {{parts[1], v}}}});
            }
        };
        set_str("paths.out_dir", out_dir);
        set_str("paths.dataset", dataset);
        set_str("paths.train", train_path);
        set_str("paths.test", test_path);
        set_str("paths.world", world);
        set_str("paths.model", model);
        set_str("paths.labels", labels);
        if (!policy.empty()) {
            cfg.merge({{"eval", {{"policy", policy}}}});
            cfg.merge({{"server", {{"policy", policy}}}});
        }
        if (seed) {
            const auto s = static_cast<std::int64_t>(*seed);
            cfg.merge({{"split", {{"seed", s}}}, {"classifier", {{"seed", s}}}, {"stub", {{"seed", s}}}});
        }
        if (layer) cfg.merge({{"embedding", {{"layer", *layer}}}});
        if (port) cfg.merge({{"server", {{"port", *port}}}});

        Runtime rt(std::move(cfg));
        if (command == "ingest") return cmd_ingest(rt, out);
        if (command == "embed") return cmd_embed(rt, out);
        if (command == "label") return cmd_label(rt, out);
        if (command == "train") return cmd_train(rt, out);
        if (command == "eval") return cmd_eval(rt, out);
        if (command == "sweep-layers") return cmd_sweep(rt, layers, out);
        if (command == "viz") return cmd_viz(rt, out);
        if (command == "route") return cmd_route(rt, question, out);
        if (command == "serve") return cmd_serve(rt, out);
    } catch (const Error& e) {
        print_error(err, e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error(err, "internal", e.what());
        return 1;
    }
    return 2;
}

}  // namespace eiarag::cli

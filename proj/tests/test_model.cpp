#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "eiarag/classifier.hpp"
#include "eiarag/labeler.hpp"
#include "eiarag/llm.hpp"
#include "eiarag/pipeline.hpp"
#include "support.hpp"

using namespace eiarag;
using eiarag::testing::Harness;
using eiarag::testing::TempDir;

// ---------------------------------------------------------------------------
// generation client and prompts

TEST(Llm, StubClientCountsCallsAndTruncates) {
    StubGenerationClient client("one two three four");
    client.set("exact prompt", "mapped answer");
    EXPECT_EQ(client.generate("exact prompt", 5), "mapped answer");
    EXPECT_EQ(client.generate("other", 2), "one two");
    EXPECT_EQ(client.calls(), 2u);
    EXPECT_THROW(client.generate("x", 0), ValidationError);
    EXPECT_EQ(client.calls(), 2u);
}

TEST(Llm, PromptLayout) {
    PromptSpec spec;
    spec.exemplars = {{"Who wrote Hamlet?", "Shakespeare"}};
    spec.passages = {{"d1", std::nullopt, "line one\nline two"}};
    spec.question = "What is the capital of France?";
    EXPECT_EQ(build_prompt(spec),
              "Context: line one line two\nQ: Who wrote Hamlet? A: Shakespeare\nQ: What is the capital of France? A:");
    spec.placement = PassagePlacement::AfterExemplars;
    EXPECT_EQ(build_prompt(spec),
              "Q: Who wrote Hamlet? A: Shakespeare\nContext: line one line two\nQ: What is the capital of France? A:");
}

TEST(Llm, ExemplarsOnePerOtherRelationNeverSelf) {
    std::vector<QueryRecord> pool;
    for (const auto& t : kRelationTemplates) {
        for (int k = 0; k < 3; ++k) {
            QueryRecord r{std::string(t.relation) + std::to_string(k), render_template(t.relation, "S" + std::to_string(k)),
                          {"a"}};
            r.relation = std::string(t.relation);
            pool.push_back(r);
        }
    }
    const QuerySet set("pool", pool);
    const ExemplarSelector sel(set, 15, 3);
    for (const auto& q : set) {
        const auto ex = sel.select(q);
        EXPECT_EQ(ex.size(), 15u);
        std::set<std::string> relations;
        for (const auto& e : ex) {
            EXPECT_NE(e.question, q.question);
            for (const auto& r : set) {
                if (r.question == e.question) relations.insert(*r.relation);
            }
        }
        EXPECT_EQ(relations.size(), 15u);
        EXPECT_FALSE(relations.count(*q.relation));
    }
    // the exemplar chosen for a relation does not depend on the asking question
    EXPECT_EQ(sel.select(set[0])[1], sel.select(set[1])[1]);

    QueryRecord loose{"free", "Anything?", {"a"}};
    EXPECT_EQ(sel.select(loose).size(), 15u);
}

TEST(Llm, StubWorldClientFollowsTheSpec) {
    StubWorldSpec spec;
    spec.queries = {{"a", "Alpha?", {"ans-a"}, true, false, 10.0, std::nullopt},
                    {"b", "Beta?", {"ans-b"}, false, true, 10.0, std::nullopt}};
    spec.decision_flip = 0.0;
    auto world = make_stub_world(spec);
    auto& c = *world.client;
    EXPECT_EQ(c.generate("Q: Alpha? A:", 32), "ans-a.");
    EXPECT_EQ(c.generate("Context: x\nQ: Alpha? A:", 32), "I am not sure.");
    EXPECT_EQ(c.generate("Q: Beta? A:", 32), "I am not sure.");
    EXPECT_EQ(c.generate("Context: x\nQ: Beta? A:", 32), "ans-b.");
    EXPECT_EQ(c.generate("Should we look up: Alpha?", 5).rfind("No", 0), 0u);
    EXPECT_EQ(c.generate("Should we look up: Beta?", 5).rfind("Yes", 0), 0u);
    ASSERT_EQ(world.corpus.size(), 2u);
    EXPECT_EQ(world.corpus[1].text.find("ans-b") != std::string::npos, true);
    EXPECT_EQ(world.corpus[0].text.find("ans-a"), std::string::npos);
}

TEST(Llm, StubWorldRoundTrip) {
    TempDir dir;
    SynthesisOptions opts;
    opts.n = 30;
    opts.seed = 4;
    const auto qs = synthesize_stub_queries(opts);
    save_stub_world(qs, dir / "w.jsonl");
    const auto back = load_stub_world(dir / "w.jsonl");
    ASSERT_EQ(back.size(), qs.size());
    for (std::size_t i = 0; i < qs.size(); ++i) {
        EXPECT_EQ(back[i].id, qs[i].id);
        EXPECT_EQ(back[i].knows_parametric, qs[i].knows_parametric);
        EXPECT_EQ(back[i].answer_in_corpus, qs[i].answer_in_corpus);
        EXPECT_EQ(back[i].entity_freq, qs[i].entity_freq);
        EXPECT_EQ(back[i].relation, qs[i].relation);
    }
}

// ---------------------------------------------------------------------------
// labeler

TEST(Labeler, ContainmentAfterNormalization) {
    EXPECT_TRUE(answer_correct("It is  PARIS, of course", {"paris"}));
    EXPECT_TRUE(answer_correct("new   york city", {"Boston", "New York"}));
    EXPECT_FALSE(answer_correct("I am not sure.", {"Paris"}));
    EXPECT_FALSE(answer_correct("Saint Denis", {"Saint-Denis"}));
    EXPECT_TRUE(answer_correct("Saint Denis", {"Saint-Denis"}, true));
    EXPECT_THROW(answer_correct("x", {}), ValidationError);
}

TEST(Labeler, TenQueryWorldGivesFourPositives) {
    // 4 of 10 queries: unknown parametrically, answer in corpus
    StubWorldSpec spec;
    const bool knows[10] = {false, false, false, false, true, true, true, false, false, true};
    const bool in_corpus[10] = {true, true, true, true, true, false, true, false, false, false};
    for (int i = 0; i < 10; ++i) {
        StubQuery q;
        q.id = "q" + std::to_string(i);
        q.question = render_template(kRelationTemplates[static_cast<std::size_t>(i)].relation, "Thing" + std::to_string(i));
        q.answers = {"gold" + std::to_string(i)};
        q.knows_parametric = knows[i];
        q.answer_in_corpus = in_corpus[i];
        q.relation = std::string(kRelationTemplates[static_cast<std::size_t>(i)].relation);
        spec.queries.push_back(q);
    }
    Harness h(spec);
    LabelConfig cfg;
    LabelSummary summary;
    const auto before = h.world.client->calls();
    const auto set = build_labeled_set(h.world.queries, h.backends, cfg, &summary);
    EXPECT_EQ(h.world.client->calls() - before, 20u);
    EXPECT_EQ(summary.positives, 4u);
    EXPECT_EQ(summary.negatives, 6u);
    for (std::size_t i = 0; i < set.size(); ++i) {
        EXPECT_EQ(set.examples[i].label, (!knows[i] && in_corpus[i]) ? 1 : 0);
        EXPECT_EQ(set.examples[i].nr_correct, knows[i]);
        EXPECT_EQ(set.examples[i].fr_correct, in_corpus[i]);
        EXPECT_EQ(set.examples[i].embedding.values.size(), 16u);
    }
    cfg.embedding.layer = 99;
    EXPECT_THROW(build_labeled_set(h.world.queries, h.backends, cfg), ValidationError);
}

namespace {
class FlakyClient final : public GenerationClient {
public:
    std::string name() const override { return "flaky"; }

protected:
    std::string complete(const std::string& prompt, int) override {
        const auto last = prompt.substr(prompt.rfind('\n') + 1);  // npos + 1 == 0
        if (last.find("Poison") != std::string::npos) throw TransportError("backend down", 3);
        return "nothing";
    }
};
}  // namespace

TEST(Labeler, BackendFailuresSkipOrAbort) {
    auto spec = eiarag::testing::synthetic_world(12, 1);
    spec.queries[3].question = "Poison question?";
    Harness h(spec);
    FlakyClient flaky;
    Backends b{flaky, *h.world.embedder, h.index, h.selector};
    LabelConfig cfg;
    LabelSummary summary;
    const auto set = build_labeled_set(h.world.queries, b, cfg, &summary);
    EXPECT_EQ(set.size(), 11u);
    EXPECT_EQ(summary.skipped, 1u);
    EXPECT_NE(summary.skip_reasons[0].find(spec.queries[3].id), std::string::npos);
    cfg.strict = true;
    EXPECT_THROW(build_labeled_set(h.world.queries, b, cfg), QueryError);
}

TEST(Labeler, PersistenceRoundTripAndConsistencyCheck) {
    TempDir dir;
    Harness h(eiarag::testing::synthetic_world(20, 2));
    const auto set = build_labeled_set(h.world.queries, h.backends, {});
    save_labeled_set(set, dir / "l.jsonl", dir / "l.eiar");
    EXPECT_EQ(load_labeled_set(dir / "l.jsonl", dir / "l.eiar"), set);

    auto rows = eiarag::testing::slurp(dir / "l.jsonl");
    const auto pos = rows.find("\"label\":");
    ASSERT_NE(pos, std::string::npos);
    rows[pos + 8] = rows[pos + 8] == '0' ? '1' : '0';
    eiarag::testing::spit(dir / "bad.jsonl", rows);
    EXPECT_THROW(load_labeled_set(dir / "bad.jsonl", dir / "l.eiar"), ParseError);
}

// ---------------------------------------------------------------------------
// classifier

TEST(Classifier, ToyForwardPass) {
    ClassifierModel m;
    m.params = MlpParams<float>(1, 1, 1);
    m.params.w1 = {1.0f};
    m.params.w2 = {1.0f};
    m.params.w3 = {1.0f};
    const std::vector<float> x{2.0f};
    EXPECT_NEAR(forward(m, x), 0.8807970779778823, 1e-6);
    const std::vector<float> neg{-2.0f};
    EXPECT_FLOAT_EQ(forward(m, neg), 0.5f);  // both ReLUs closed
    SentenceEmbedding e{{2.0f}, 1, "q"};
    EXPECT_EQ(decide(m, e, 0.88), 1);
    EXPECT_EQ(decide(m, e, 0.89), 0);
    EXPECT_THROW(decide(m, e, 0.0), ValidationError);
    EXPECT_THROW(decide(m, e, 1.0), ValidationError);
    EXPECT_THROW(forward(m, std::vector<float>{1.0f, 2.0f}), ValidationError);
}

TEST(Classifier, LogisticAndSoftplusAreStable) {
    EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
    EXPECT_GT(logistic(-800.0), -1e-300);
    EXPECT_EQ(logistic(800.0), 1.0);
    EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
}

TEST(Classifier, InitIsGlorotBoundedAndSeeded) {
    const auto a = init_model(10, 6, 4, 1), b = init_model(10, 6, 4, 1), c = init_model(10, 6, 4, 2);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    const float limit = std::sqrt(6.0f / 16.0f);
    for (float w : a.params.w1) EXPECT_LE(std::abs(w), limit);
    for (float x : a.params.b1) EXPECT_EQ(x, 0.0f);
    EXPECT_THROW(init_model(0, 6, 4, 1), ValidationError);
}

TEST(Classifier, GradientMatchesFiniteDifferences) {
    Rng rng(21);
    auto p = init_model(5, 7, 3, 3).params.cast<double>();
    for (auto* b : {&p.b1, &p.b2, &p.b3}) {
        for (auto& x : *b) x = rng.uniform(-0.3, 0.3);
    }
    std::vector<std::vector<double>> xs(6, std::vector<double>(5));
    for (auto& x : xs) {
        for (auto& v : x) v = rng.normal();
    }
    const std::vector<int> ys{1, 0, 0, 1, 1, 0};
    EXPECT_LT(eiarag::testing::gradient_relative_error(p, xs, ys), 1e-6);
}

namespace {
LabeledSet separable(std::size_t n, std::uint64_t seed, std::size_t d = 4) {
    Rng rng(seed);
    LabeledSet set;
    for (std::size_t i = 0; i < n; ++i) {
        LabeledExample ex;
        ex.query_id = "q" + std::to_string(i);
        ex.label = static_cast<int>(i % 2);
        ex.embedding.values.resize(d);
        for (auto& v : ex.embedding.values) v = static_cast<float>(0.3 * rng.normal());
        ex.embedding.values[0] += ex.label ? 1.0f : -1.0f;
        ex.embedding.layer = 1;
        set.examples.push_back(ex);
    }
    return set;
}
}  // namespace

TEST(Classifier, TrainingLearnsAndKeepsFirstBestEpoch) {
    const auto data = separable(200, 5);
    TrainConfig cfg;
    cfg.max_epochs = 20;
    const auto [model, log] = train(init_model(4, 16, 8, 5), data, cfg);
    EXPECT_EQ(log.epochs.size(), 21u);
    EXPECT_EQ(log.epochs[0].epoch, 0);
    EXPECT_EQ(log.val_size, 20u);
    EXPECT_EQ(log.train_size, 180u);
    EXPECT_GE(log.best_val_accuracy, 0.95);
    double best = -1;
    int first = 0;
    for (std::size_t e = 1; e < log.epochs.size(); ++e) {
        if (log.epochs[e].val_accuracy > best) {
            best = log.epochs[e].val_accuracy;
            first = log.epochs[e].epoch;
        }
    }
    EXPECT_EQ(log.best_epoch, first);
    EXPECT_EQ(model.meta.best_epoch, static_cast<std::uint32_t>(first));
    EXPECT_LT(log.epochs.back().train_loss, log.epochs.front().train_loss);
}

TEST(Classifier, SingleClassYieldsConstantPrior) {
    auto data = separable(10, 1);
    for (auto& ex : data.examples) ex.label = 0;
    const auto [model, log] = train(init_model(4, 8, 4, 0), data, {});
    ASSERT_EQ(log.warnings.size(), 1u);
    EXPECT_LT(forward(model, data.examples[0].embedding), 1e-3f);
}

TEST(Classifier, DivergentTrainingFails) {
    auto data = separable(64, 2);
    for (auto& ex : data.examples) ex.embedding.values[0] *= 1e30f;
    TrainConfig cfg;
    cfg.learning_rate = 1e30;
    cfg.max_epochs = 5;
    EXPECT_THROW(train(init_model(4, 8, 4, 0), data, cfg), TrainingError);
    cfg.learning_rate = -1;
    EXPECT_THROW(train(init_model(4, 8, 4, 0), data, cfg), ValidationError);
}

TEST(Classifier, ModelFileRoundTripAndRejections) {
    TempDir dir;
    auto m = init_model(6, 5, 3, 8);
    m.meta.best_epoch = 7;
    m.meta.layer = 2;
    m.meta.validation_accuracy = 0.75;
    save_model(m, dir / "m.eimc");
    EXPECT_EQ(load_model(dir / "m.eimc"), m);
    const auto bytes = eiarag::testing::slurp(dir / "m.eimc");
    EXPECT_EQ(bytes.size(), 4 + 4 * 4 + 8 + 4 + 4 + 8 + 4 * m.params.parameter_count());

    eiarag::testing::spit(dir / "t.eimc", bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(load_model(dir / "t.eimc"), FormatError);
    eiarag::testing::spit(dir / "x.eimc", bytes + "pad!");
    EXPECT_THROW(load_model(dir / "x.eimc"), FormatError);
    auto v2 = bytes;
    v2[4] = 2;
    eiarag::testing::spit(dir / "v.eimc", v2);
    EXPECT_THROW(load_model(dir / "v.eimc"), FormatError);
    auto nan = bytes;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + nan.size() - 4, &q, 4);
    eiarag::testing::spit(dir / "n.eimc", nan);
    EXPECT_THROW(load_model(dir / "n.eimc"), FormatError);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "clir/autodiff.hpp"
#include "clir/error.hpp"
#include "clir/log.hpp"
#include "clir/training.hpp"
#include "support/pipeline.hpp"

using namespace clir;

namespace {

RankedList list_of(const std::string& qid, const std::vector<std::string>& docs) {
    RankedList l{qid, {}};
    double s = 0.0;
    for (const auto& d : docs) l.entries.push_back({d, s -= 1.0});
    return l;
}

// Collects warnings for the lifetime of the object.
struct CapturedLog {
    std::vector<std::string> lines;
    LogSink previous;
    CapturedLog() : previous(set_log_sink([this](const std::string& s) { lines.push_back(s); })) {}
    ~CapturedLog() { set_log_sink(previous); }
};

std::set<std::string> doc_set(const RankedList& l) {
    std::set<std::string> s;
    for (const auto& e : l.entries) s.insert(e.doc_id);
    return s;
}

}  // namespace

TEST(TrainingPairs, OneNegativePerPositive) {
    clir::Run run;
    std::vector<std::string> docs;
    for (int i = 0; i < 10; ++i) docs.push_back("d" + std::to_string(i));
    run["q1"] = list_of("q1", docs);
    RelevanceJudgments qrels;
    qrels.set("q1", "d2", 1);
    qrels.set("q1", "d7", 2);
    qrels.set("q1", "d3", 0);  // judged non-relevant; the rest are unjudged negatives
    const auto pairs = build_training_pairs(run, qrels, 5);
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].positive, "d2");
    EXPECT_EQ(pairs[1].positive, "d7");
    for (const auto& p : pairs) {
        EXPECT_EQ(p.query_id, "q1");
        EXPECT_FALSE(qrels.is_relevant("q1", p.negative));
        EXPECT_TRUE(doc_set(run["q1"]).count(p.negative));
    }
    const auto again = build_training_pairs(run, qrels, 5);
    for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(pairs[i].negative, again[i].negative);
}

TEST(TrainingPairs, NegativesCoverTheList) {
    clir::Run run;
    run["q"] = list_of("q", {"p", "n1", "n2", "n3"});
    RelevanceJudgments qrels;
    qrels.set("q", "p", 1);
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 60; ++seed) seen.insert(build_training_pairs(run, qrels, seed)[0].negative);
    EXPECT_EQ(seen, (std::set<std::string>{"n1", "n2", "n3"}));
}

TEST(TrainingPairs, PositivesOnlyQueryWarnsAndIsSkipped) {
    clir::Run run;
    run["a"] = list_of("a", {"x", "y"});
    run["b"] = list_of("b", {"u", "v"});
    RelevanceJudgments qrels;
    qrels.set("a", "x", 1);
    qrels.set("a", "y", 1);
    qrels.set("b", "u", 1);
    CapturedLog log;
    const auto pairs = build_training_pairs(run, qrels, 1);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].query_id, "b");
    ASSERT_EQ(log.lines.size(), 1u);
    EXPECT_NE(log.lines[0].find("query a"), std::string::npos);
}

TEST(TrainingPairs, NoPairsIsDataError) {
    clir::Run run;
    run["a"] = list_of("a", {"x", "y"});
    RelevanceJudgments qrels;
    EXPECT_THROW(build_training_pairs(run, qrels, 1), DataError);
    qrels.set("a", "x", 1);
    const std::set<std::string> other{"zzz"};
    EXPECT_THROW(build_training_pairs(run, qrels, 1, &other), DataError);
}

TEST(TrainingLoss, BinaryCrossEntropyValues) {
    auto z = ad::Tensor::constant(1, 1, {0.0});
    EXPECT_NEAR(ad::bce_with_logits(z, 1.0).item(), std::log(2.0), 1e-15);
    auto big = ad::Tensor::constant(1, 1, {40.0});
    EXPECT_NEAR(ad::bce_with_logits(big, 1.0).item(), std::log1p(std::exp(-40.0)), 1e-25);
    EXPECT_NEAR(ad::bce_with_logits(big, 0.0).item(), 40.0, 1e-12);
    auto neg = ad::Tensor::constant(1, 1, {-2.0});
    EXPECT_NEAR(ad::bce_with_logits(neg, 1.0).item(), std::log1p(std::exp(2.0)), 1e-12);
}

TEST(TrainingSelection, EarliestBestEpoch) {
    EXPECT_EQ(select_best_epoch({0.3, 0.5, 0.4}), 1u);
    EXPECT_EQ(select_best_epoch({0.5, 0.5}), 0u);
    EXPECT_EQ(select_best_epoch({0.1, 0.2, 0.7, 0.7}), 2u);
}

TEST(TrainingConfig, RejectsBadHyperparameters) {
    TrainConfig tc;
    EXPECT_NO_THROW(tc.validate());
    tc.lr = 0.0;
    EXPECT_THROW(tc.validate(), UsageError);
    tc = {};
    tc.epochs = 0;
    EXPECT_THROW(tc.validate(), UsageError);
    tc = {};
    tc.batch_size = 0;
    EXPECT_THROW(tc.validate(), UsageError);
}

class TrainingLoop : public ::testing::Test {
  protected:
    static void SetUpTestSuite() { exp_ = fixtures::make_experiment(fixtures::tiny_options(3), 0.0, 8, 4, 4, 30).release(); }
    static void TearDownTestSuite() { delete exp_; }
    static fixtures::Experiment* exp_;
};
fixtures::Experiment* TrainingLoop::exp_ = nullptr;

TEST_F(TrainingLoop, RepeatedTrainingIsBitIdentical) {
    for (Arch arch : {Arch::posit_drmm, Arch::pacrr, Arch::pacrr_drmm}) {
        TrainConfig tc;
        tc.epochs = 2;
        tc.seed = 11;
        const auto a = train(fixtures::tiny_ranker(arch), tc, exp_->data());
        const auto b = train(fixtures::tiny_ranker(arch), tc, exp_->data());
        EXPECT_EQ(a.to_json().dump(), b.to_json().dump()) << to_string(arch);
        tc.seed = 12;
        const auto c = train(fixtures::tiny_ranker(arch), tc, exp_->data());
        EXPECT_NE(a.to_json().dump(), c.to_json().dump()) << to_string(arch);
    }
}

TEST_F(TrainingLoop, HistoryAndBestEpoch) {
    TrainConfig tc;
    tc.epochs = 3;
    std::vector<EpochLog> seen;
    const auto ck = train(fixtures::tiny_ranker(Arch::posit_drmm), tc, exp_->data(),
                          [&](const EpochLog& e) { seen.push_back(e); });
    ASSERT_EQ(seen.size(), 3u);
    ASSERT_EQ(ck.history.size(), 3u);
    std::vector<double> maps;
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(seen[i].epoch, i + 1);
        EXPECT_EQ(ck.history[i].dev_map, seen[i].dev_map);
        EXPECT_TRUE(std::isfinite(seen[i].mean_loss));
        maps.push_back(seen[i].dev_map);
    }
    EXPECT_EQ(ck.best_epoch, select_best_epoch(maps) + 1);
    // the returned parameters are the best epoch's: reranking dev reproduces its MAP
    const clir::Run dev = rerank(ck, *exp_->ctx, exp_->ql, &exp_->dev);
    EXPECT_NEAR(mean_average_precision(dev, exp_->ds.qrels, &exp_->dev), maps[ck.best_epoch - 1], 1e-12);
}

TEST_F(TrainingLoop, LossDecreasesOnTrainingData) {
    TrainConfig tc;
    tc.epochs = 8;
    tc.lr = 1e-2;
    std::vector<double> losses;
    train(fixtures::tiny_ranker(Arch::pacrr_drmm), tc, exp_->data(), [&](const EpochLog& e) { losses.push_back(e.mean_loss); });
    EXPECT_LT(losses.back(), losses.front());
}

TEST_F(TrainingLoop, RerankPreservesCandidatesAndIsIdempotent) {
    TrainConfig tc;
    tc.epochs = 1;
    const auto ck = train(fixtures::tiny_ranker(Arch::posit_drmm), tc, exp_->data());
    const clir::Run once = rerank(ck, *exp_->ctx, exp_->ql);
    ASSERT_EQ(once.size(), exp_->ql.size());
    for (const auto& [qid, list] : exp_->ql) {
        const auto& r = once.at(qid);
        EXPECT_EQ(doc_set(r), doc_set(list));
        EXPECT_EQ(r.entries.size(), list.entries.size());
        for (std::size_t i = 1; i < r.entries.size(); ++i) EXPECT_FALSE(ranks_before(r.entries[i], r.entries[i - 1]));
    }
    EXPECT_EQ(format_run(rerank(ck, *exp_->ctx, exp_->ql), "t"), format_run(once, "t"));
    EXPECT_EQ(format_run(rerank_ensemble({ck}, *exp_->ctx, exp_->ql), "t"), format_run(once, "t"));
}

TEST_F(TrainingLoop, RerankRestrictsToSelectedQueries) {
    TrainConfig tc;
    tc.epochs = 1;
    const auto ck = train(fixtures::tiny_ranker(Arch::pacrr), tc, exp_->data());
    const clir::Run r = rerank(ck, *exp_->ctx, exp_->ql, &exp_->test);
    EXPECT_EQ(r.size(), exp_->test.size());
    for (const auto& [qid, list] : r) EXPECT_TRUE(exp_->test.count(qid));
}

TEST_F(TrainingLoop, QlOnlyFusionKeepsFirstStageOrder) {
    // Standardization is increasing, so a fusion reading only the ql feature preserves the order.
    TrainConfig tc;
    tc.epochs = 1;
    const auto ck = train(fixtures::tiny_ranker(Arch::posit_drmm), tc, exp_->data());
    auto scorer = load_scorer(ck);
    auto wm = scorer.fusion_model_weight();
    wm.mutable_values()[0] = 0.0;
    auto w = scorer.fusion_feature_weights();
    for (double& x : w.mutable_values()) x = 0.0;
    w.mutable_values()[0] = 2.5;
    const clir::Run r = rerank(scorer, ck.feature_stats, ck.channel, *exp_->ctx, exp_->ql);
    for (const auto& [qid, list] : exp_->ql) {
        std::map<std::string, double> ql;
        for (const auto& e : list.entries) ql[e.doc_id] = e.score;
        const auto& got = r.at(qid).entries;
        for (std::size_t i = 1; i < got.size(); ++i) EXPECT_GE(ql[got[i - 1].doc_id], ql[got[i].doc_id]);
    }
}

TEST_F(TrainingLoop, UnknownDocumentIsDataError) {
    TrainConfig tc;
    tc.epochs = 1;
    const auto ck = train(fixtures::tiny_ranker(Arch::posit_drmm), tc, exp_->data());
    clir::Run bad;
    bad["q00"] = list_of("q00", {"no-such-doc"});
    EXPECT_THROW(rerank(ck, *exp_->ctx, bad), DataError);
}

TEST_F(TrainingLoop, CheckpointRoundTrip) {
    TrainConfig tc;
    tc.epochs = 2;
    const auto ck = train(fixtures::tiny_ranker(Arch::pacrr_drmm), tc, exp_->data());
    const auto path = (std::filesystem::temp_directory_path() / "clir_ckpt_roundtrip.json").string();
    ck.save(path);
    const auto back = Checkpoint::load(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.to_json().dump(), ck.to_json().dump());
    EXPECT_EQ(format_run(rerank(back, *exp_->ctx, exp_->ql), "t"), format_run(rerank(ck, *exp_->ctx, exp_->ql), "t"));

    auto j = nlohmann::json::parse(ck.to_json().dump());
    j["tensors"][0]["values"].push_back(1.0);
    EXPECT_THROW(Checkpoint::from_json(j), DataError);
    j = nlohmann::json::parse(ck.to_json().dump());
    j["format_version"] = 99;
    EXPECT_THROW(Checkpoint::from_json(j), DataError);
}

TEST_F(TrainingLoop, DimensionMismatchIsDataError) {
    const auto cfg = fixtures::tiny_ranker(Arch::posit_drmm);
    auto wrong = cfg;
    wrong.embed_dim = 6;
    TrainConfig tc;
    tc.epochs = 1;
    EXPECT_THROW(train(wrong, tc, exp_->data()), DataError);
}

TEST_F(TrainingLoop, RerankChecksEmbeddingDimension) {
    TrainConfig tc;
    tc.epochs = 1;
    auto ck = train(fixtures::tiny_ranker(Arch::pacrr), tc, exp_->data());
    ck.config.embed_dim = 6;
    ck.config.l_d = 30;
    BilingualScorer other(ck.config);
    EXPECT_THROW(rerank(other, ck.feature_stats, ck.channel, *exp_->ctx, exp_->ql), DataError);
    EXPECT_THROW(rerank_ensemble({ck}, *exp_->ctx, exp_->ql), DataError);
}

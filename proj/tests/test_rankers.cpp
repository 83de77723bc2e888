#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "clir/error.hpp"
#include "clir/linalg.hpp"
#include "clir/random.hpp"
#include "clir/rankers.hpp"
#include "support/ranker_fixtures.hpp"

using namespace clir;
using ad::Tensor;

namespace {

const Arch kArchs[] = {Arch::posit_drmm, Arch::pacrr, Arch::pacrr_drmm};

void zero_all(BilingualScorer& s) {
    for (auto& t : s.params().tensors()) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
}

Tensor rotate(const Tensor& t, const Matrix& r) {
    Matrix m(t.rows(), t.cols(), t.values());
    Matrix out = m * r;
    return Tensor::constant(out.rows(), out.cols(), out.data());
}

/// Feature matrix computed on the fully padded l_q x l_d similarity matrix.
Tensor dense_reference_features(const SimilarityMatrix& sm, const std::vector<double>& idf, const ComponentParams& p,
                                const RankerConfig& cfg) {
    const Tensor full = sm.dense();
    std::vector<Tensor> blocks;
    for (std::size_t f = 0; f < cfg.filter_sizes.size(); ++f) {
        const std::size_t n = cfg.filter_sizes[f];
        const Tensor conv = ad::conv2d(full, p.conv_w[f], p.conv_b[f], n, n, ad::Padding::same);
        // plain loops for the channel max
        std::vector<double> best(cfg.l_q * cfg.l_d, -INFINITY);
        for (std::size_t ch = 0; ch < conv.rows(); ++ch)
            for (std::size_t pos = 0; pos < conv.cols(); ++pos) best[pos] = std::max(best[pos], conv.at(ch, pos));
        blocks.push_back(ad::kmax_pool_row(Tensor::constant(cfg.l_q, cfg.l_d, best), cfg.pool_k()));
    }
    blocks.push_back(Tensor::constant(cfg.l_q, 1, normalized_idf(idf, cfg.l_q)));
    return ad::concat_cols(blocks);
}

}  // namespace

TEST(RankerConfig, ValidatesInvariants) {
    RankerConfig c;
    EXPECT_NO_THROW(c.validate());
    c.embed_dim = 7;
    EXPECT_THROW(c.validate(), UsageError);
    c.arch = Arch::pacrr;
    EXPECT_NO_THROW(c.validate());
    c.l_q = 2;
    EXPECT_THROW(c.validate(), UsageError);
    c.l_q = 8;
    c.filter_sizes = {0};
    EXPECT_THROW(c.validate(), UsageError);
    EXPECT_EQ(RankerConfig{}.pool_k(), 5u);
    c.filter_sizes = {1, 2, 3};
    EXPECT_EQ(c.pool_k(), 2u);
    EXPECT_EQ(c.pacrr_feature_cols(), 7u);
}

TEST(RankerConfig, JsonRoundTrip) {
    RankerConfig c;
    c.arch = Arch::pacrr_drmm;
    c.l_d = 77;
    c.share_components = true;
    auto back = RankerConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_THROW(parse_arch("bert"), UsageError);
}

TEST(PositEncoder, ZeroLstmIsResidualIdentity) {
    auto cfg = fixtures::small_config(Arch::posit_drmm, false);
    BilingualScorer s(cfg);
    zero_all(s);
    std::mt19937_64 rng(1);
    auto emb = fixtures::random_rows(5, cfg.embed_dim, rng);
    ParameterStore store;
    auto p = add_component_params(cfg, "", store);
    auto enc = encode_posit(emb, p, cfg, false, 0);
    EXPECT_EQ(enc.rows(), 5u);
    EXPECT_EQ(enc.cols(), cfg.embed_dim);
    EXPECT_EQ(enc.values(), emb.values());
}

TEST(PositDrmm, HandTracedProbe) {
    RankerConfig cfg = fixtures::small_config(Arch::posit_drmm, false);
    cfg.term_mlp_hidden = 2;
    ParameterStore store;
    auto p = add_component_params(cfg, "", store);
    // probe: hidden = tanh(features), output = 1*h0 + 10*h1
    p.term_w1.mutable_values() = {1, 0, 0, 1};
    p.term_w2.mutable_values() = {1, 10};
    auto v = Tensor::constant(1, 6, {1, 2, 0, 0, 0, 0});
    auto score = score_posit_drmm(encode_posit(v, p, cfg, false, 0), encode_posit(v, p, cfg, false, 0), {1.3}, p, cfg);
    // features [max = 1, mean(top5 of [1]) = 0.2]; single term so its gate is 1
    EXPECT_NEAR(score.item(), std::tanh(1.0) + 10 * std::tanh(0.2), 1e-12);
}

TEST(PositDrmm, GatesSumToOne) {
    std::mt19937_64 rng(2);
    auto cfg = fixtures::small_config(Arch::posit_drmm, false);
    ParameterStore store;
    auto p = add_component_params(cfg, "", store);
    store.initialize(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 8;
        auto q = fixtures::random_rows(n, cfg.embed_dim, rng);
        std::vector<double> idf(n);
        for (double& x : idf) x = static_cast<double>(rng() % 1000) / 50.0;
        auto g = posit_gates(q, idf, p);
        double total = 0;
        for (double x : g.values()) total += x;
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(PositDrmm, DocumentOrderInvariantAndEmptyDocLegal) {
    std::mt19937_64 rng(4);
    auto cfg = fixtures::small_config(Arch::posit_drmm, false);
    ParameterStore store;
    auto p = add_component_params(cfg, "", store);
    store.initialize(5);
    for (auto* t : {&p.lstm_fw_ih, &p.lstm_fw_hh, &p.lstm_bw_ih, &p.lstm_bw_hh})
        std::fill(t->mutable_values().begin(), t->mutable_values().end(), 0.0);  // context-free encodings
    auto q = fixtures::random_rows(3, cfg.embed_dim, rng);
    auto d = fixtures::random_rows(6, cfg.embed_dim, rng);
    std::vector<double> rows = d.values();
    std::vector<double> shuffled;
    for (std::size_t r : {5u, 2u, 0u, 4u, 1u, 3u})
        shuffled.insert(shuffled.end(), rows.begin() + static_cast<long>(r * cfg.embed_dim),
                        rows.begin() + static_cast<long>((r + 1) * cfg.embed_dim));
    auto d2 = Tensor::constant(6, cfg.embed_dim, shuffled);
    const std::vector<double> idf{1, 2, 3};
    auto qe = encode_posit(q, p, cfg, false, 0);
    EXPECT_NEAR(score_posit_drmm(qe, encode_posit(d, p, cfg, false, 0), idf, p, cfg).item(),
                score_posit_drmm(qe, encode_posit(d2, p, cfg, false, 0), idf, p, cfg).item(), 1e-12);
    EXPECT_NO_THROW(score_posit_drmm(qe, Tensor::zeros(0, cfg.embed_dim), idf, p, cfg));
}

TEST(SimMatrix, BoundsPaddingAndTruncation) {
    std::mt19937_64 rng(6);
    auto q = fixtures::random_rows(3, 5, rng);
    auto d = fixtures::random_rows(20, 5, rng);
    auto sm = build_sim_matrix(q, d, 4, 12);
    auto full = sm.dense();
    ASSERT_EQ(full.rows(), 4u);
    ASSERT_EQ(full.cols(), 12u);
    for (double x : full.values()) {
        EXPECT_LE(x, 1.0 + 1e-9);
        EXPECT_GE(x, -1.0 - 1e-9);
    }
    for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(full.at(3, j), 0.0);
    // truncation keeps the first 12 document terms
    auto first12 = ad::slice_rows(d, 0, 12);
    EXPECT_EQ(full.values(), build_sim_matrix(q, first12, 4, 12).dense().values());
    auto same = Tensor::constant(1, 2, {0.6, 0.8});
    EXPECT_NEAR(build_sim_matrix(same, same, 1, 1).dense().item(), 1.0, 1e-15);
    auto zero = Tensor::constant(1, 2, {0, 0});
    EXPECT_EQ(build_sim_matrix(zero, same, 1, 1).dense().item(), 0.0);
}

TEST(SimMatrix, RotationInvariant) {
    std::mt19937_64 r(7);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = fixtures::random_rows(4, 8, rng), d = fixtures::random_rows(9, 8, rng);
        Matrix rot = random_orthogonal(8, r);
        auto a = build_sim_matrix(q, d, 5, 10).dense(), b = build_sim_matrix(rotate(q, rot), rotate(d, rot), 5, 10).dense();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-9);
    }
}

TEST(Pacrr, CompactPaddingMatchesDenseReference) {
    std::mt19937_64 rng(8);
    for (Arch arch : {Arch::pacrr, Arch::pacrr_drmm}) {
        for (int trial = 0; trial < 60; ++trial) {
            RankerConfig cfg = fixtures::small_config(arch, false);
            cfg.l_d = 4 + rng() % 20;
            cfg.l_q = 3 + rng() % 4;
            ParameterStore store;
            auto p = add_component_params(cfg, "", store);
            store.initialize(rng());
            std::uniform_real_distribution<double> u(-0.5, 0.5);
            for (auto& b : p.conv_b)
                for (double& x : b.mutable_values()) x = u(rng);
            auto q = fixtures::random_rows(1 + rng() % 6, cfg.embed_dim, rng);
            auto d = fixtures::random_rows(1 + rng() % 30, cfg.embed_dim, rng);
            std::vector<double> idf(q.rows(), 1.0);
            auto sm = build_sim_matrix(q, d, cfg.l_q, cfg.l_d);
            auto fast = pacrr_features(sm, idf, p, cfg);
            auto ref = dense_reference_features(sm, idf, p, cfg);
            ASSERT_EQ(fast.values(), ref.values()) << "trial " << trial;
        }
    }
}

TEST(Pacrr, ZeroInputZeroParamsScoresZero) {
    for (Arch arch : {Arch::pacrr, Arch::pacrr_drmm}) {
        auto cfg = fixtures::small_config(arch, false);
        ParameterStore store;
        auto p = add_component_params(cfg, "", store);
        SimilarityMatrix sm{Tensor::zeros(cfg.l_q, cfg.l_d), cfg.l_d};
        auto s = arch == Arch::pacrr ? score_pacrr(sm, {1.0}, p, cfg) : score_pacrr_drmm(sm, {1.0}, p, cfg);
        EXPECT_EQ(s.item(), 0.0);
    }
}

TEST(Pacrr, UnigramIdentityProbeGivesTwoLargest) {
    RankerConfig cfg = fixtures::small_config(Arch::pacrr, false);
    cfg.filter_sizes = {1};
    cfg.filters_per_size = 1;
    ParameterStore store;
    auto p = add_component_params(cfg, "", store);
    p.conv_w[0].mutable_values() = {1.0};
    std::vector<double> sim(cfg.l_q * 5, 0.0);
    sim[0] = 0.3;
    sim[1] = 0.9;
    sim[2] = -0.2;
    sim[3] = 0.7;
    sim[4] = 0.1;
    SimilarityMatrix sm{Tensor::constant(cfg.l_q, 5, sim), cfg.l_d};
    auto f = pacrr_features(sm, {1.0}, p, cfg);
    ASSERT_EQ(f.cols(), 3u);
    EXPECT_EQ(f.at(0, 0), 0.9);
    EXPECT_EQ(f.at(0, 1), 0.7);
    EXPECT_EQ(f.at(0, 2), 1.0);  // single real query term takes all idf mass
    EXPECT_EQ(f.at(1, 2), 0.0);
}

TEST(PacrrDrmm, DuplicatedQueryTermDuplicatesTermScore) {
    auto cfg = fixtures::small_config(Arch::pacrr_drmm, false);
    ParameterStore store;
    auto p = add_component_params(cfg, "", store);
    store.initialize(9);
    std::mt19937_64 rng(9);
    auto t = fixtures::random_rows(1, cfg.embed_dim, rng);
    auto q = ad::concat_rows({t, t});
    auto d = fixtures::random_rows(6, cfg.embed_dim, rng);
    auto feats = pacrr_features(build_sim_matrix(q, d, cfg.l_q, cfg.l_d), {1.0, 1.0}, p, cfg);
    // filters reach across rows, so compare with unigram-only filters
    RankerConfig uni = cfg;
    uni.filter_sizes = {1};
    ParameterStore s2;
    auto p2 = add_component_params(uni, "", s2);
    s2.initialize(9);
    auto f2 = pacrr_features(build_sim_matrix(q, d, uni.l_q, uni.l_d), {1.0, 1.0}, p2, uni);
    for (std::size_t c = 0; c < f2.cols(); ++c) EXPECT_EQ(f2.at(0, c), f2.at(1, c));
    auto hidden = ad::relu(ad::add(ad::matmul(f2, p2.row_w1), p2.row_b1));
    auto terms = ad::add(ad::matmul(hidden, p2.row_w2), p2.row_b2);
    EXPECT_EQ(terms.at(0, 0), terms.at(1, 0));
    EXPECT_EQ(feats.rows(), cfg.l_q);
}

TEST(Bilingual, ComponentSumAndFusion) {
    auto cfg = fixtures::small_config(Arch::pacrr, true);
    BilingualScorer s(cfg);
    zero_all(s);
    // make each component's output bias distinct: 0.1, 0.2, 0.3, 0.4
    const char* names[] = {"q_d.mlp.b2", "q_dhat.mlp.b2", "qhat_dhat.mlp.b2", "qhat_d.mlp.b2"};
    for (int c = 0; c < 4; ++c) {
        auto t = s.params().get(names[c]);
        t.mutable_values()[0] = 0.1 * (c + 1);
    }
    auto w = s.fusion_model_weight();
    w.mutable_values()[0] = 1.0;
    std::mt19937_64 rng(10);
    auto in = fixtures::random_pair(cfg, rng);
    in.features = {0, 0, 0, 0};
    EXPECT_NEAR(s.score(in, false, 0).item(), 1.0, 1e-12);

    in.q_hat = Tensor::zeros(0, cfg.embed_dim);
    in.d_hat = Tensor::zeros(0, cfg.embed_dim);
    EXPECT_NEAR(s.score(in, false, 0).item(), 0.1, 1e-12);
    in.d = Tensor::zeros(0, cfg.embed_dim);
    EXPECT_THROW(s.score(in, false, 0), DataError);
}

TEST(Bilingual, FusionUsesFeatureWeights) {
    auto cfg = fixtures::small_config(Arch::pacrr_drmm, true);
    BilingualScorer s(cfg);
    s.initialize(3);
    std::mt19937_64 rng(11);
    auto in = fixtures::random_pair(cfg, rng);
    // w_model starts at 0 and only w_ql is 1
    EXPECT_NEAR(s.score(in, false, 0).item(), in.features[0], 1e-15);
    EXPECT_EQ(s.fusion_model_weight().item(), 0.0);
    EXPECT_EQ(s.fusion_feature_weights().values(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Bilingual, SharedComponentsSymmetry) {
    for (Arch arch : kArchs) {
        auto cfg = fixtures::small_config(arch, true);
        cfg.share_components = true;
        BilingualScorer s(cfg);
        fixtures::randomize(s, 12);
        std::mt19937_64 rng(12);
        auto in = fixtures::random_pair(cfg, rng);
        in.q_hat = in.q;
        in.idf_q_hat = in.idf_q;
        in.d_hat = in.d;
        auto single = s.component_score(Component::q_d, in, false, 0);
        ASSERT_TRUE(single.has_value());
        EXPECT_NEAR(s.model_score(in, false, 0).item(), 4 * single->item(), 1e-9) << to_string(arch);
    }
}

TEST(Bilingual, MaskingEqualsZeroingComponentInputs) {
    for (Arch arch : kArchs) {
        auto cfg = fixtures::small_config(arch, true);
        BilingualScorer s(cfg);
        fixtures::randomize(s, 13);
        std::mt19937_64 rng(13);
        auto in = fixtures::random_pair(cfg, rng);
        auto masked = in;
        masked.q_hat = Tensor::zeros(0, cfg.embed_dim);
        double expected = 0;
        for (Component c : {Component::q_d, Component::q_dhat}) expected += s.component_score(c, in, false, 0)->item();
        EXPECT_NEAR(s.model_score(masked, false, 0).item(), expected, 1e-12) << to_string(arch);
    }
}

TEST(Bilingual, MonolingualUsesOnlyTranslatedDocComponent) {
    for (Arch arch : kArchs) {
        auto cfg = fixtures::small_config(arch, false);
        BilingualScorer s(cfg);
        fixtures::randomize(s, 14);
        ASSERT_EQ(s.active_components().size(), 1u);
        std::mt19937_64 rng(14);
        auto in = fixtures::random_pair(cfg, rng);
        auto other = in;
        other.d = fixtures::random_rows(4, cfg.embed_dim, rng);
        other.q_hat = fixtures::random_rows(2, cfg.embed_dim, rng);
        EXPECT_EQ(s.score(in, false, 0).item(), s.score(other, false, 0).item());
    }
}

TEST(Bilingual, DeterministicWithoutTraining) {
    for (Arch arch : kArchs) {
        auto cfg = fixtures::small_config(arch, true);
        BilingualScorer s(cfg);
        fixtures::randomize(s, 15);
        std::mt19937_64 rng(15);
        auto in = fixtures::random_pair(cfg, rng);
        EXPECT_EQ(s.score(in, false, 1).item(), s.score(in, false, 2).item());
    }
}

TEST(Bilingual, PacrrFamilyRotationInvariant) {
    std::mt19937_64 r(16);
    for (Arch arch : {Arch::pacrr, Arch::pacrr_drmm}) {
        auto cfg = fixtures::small_config(arch, true);
        BilingualScorer s(cfg);
        fixtures::randomize(s, 16);
        std::mt19937_64 rng(16);
        auto in = fixtures::random_pair(cfg, rng);
        Matrix rot = random_orthogonal(cfg.embed_dim, r);
        auto rin = in;
        rin.q = rotate(in.q, rot);
        rin.q_hat = rotate(in.q_hat, rot);
        rin.d = rotate(in.d, rot);
        rin.d_hat = rotate(in.d_hat, rot);
        EXPECT_NEAR(s.score(in, false, 0).item(), s.score(rin, false, 0).item(), 1e-7);
    }
}

TEST(Bilingual, EmbedTermsUsesZeroForOov) {
    auto emb = parse_embeddings("1 2\na 1 2\n");
    auto t = embed_terms({"a", "zz"}, emb);
    EXPECT_EQ(t.values(), (std::vector<double>{1, 2, 0, 0}));
}

class ScorerGradient : public ::testing::TestWithParam<std::tuple<Arch, bool>> {};

TEST_P(ScorerGradient, FiniteDifferencesAgree) {
    const auto [arch, bilingual] = GetParam();
    auto rep = fixtures::check_scorer(arch, bilingual, 21, 150);
    EXPECT_GE(rep.checked, 100u);
    EXPECT_LT(rep.worst_rel, 1e-6) << rep.worst_where;
}

INSTANTIATE_TEST_SUITE_P(AllArchitectures, ScorerGradient,
                         ::testing::Combine(::testing::Values(Arch::posit_drmm, Arch::pacrr, Arch::pacrr_drmm),
                                            ::testing::Bool()));

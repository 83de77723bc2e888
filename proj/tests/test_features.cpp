#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "clir/error.hpp"
#include "clir/features.hpp"

using namespace clir;

namespace {

CollectionStats stats_with_df(std::size_t n_docs, std::initializer_list<std::pair<Token, std::size_t>> df) {
    CollectionStats s;
    s.n_docs = n_docs;
    for (const auto& [t, d] : df) {
        s.df[t] = d;
        s.cf[t] = d;
    }
    return s;
}

TokenSeq random_seq(std::mt19937_64& rng, std::size_t max_len, int vocab) {
    TokenSeq out(rng() % (max_len + 1));
    for (auto& t : out) t = "w" + std::to_string(rng() % vocab);
    return out;
}

}  // namespace

TEST(ExtractFeatures, DefinitionExamples) {
    const auto stats = stats_with_df(4, {{"a", 1}, {"b", 2}, {"c", 2}});
    EXPECT_DOUBLE_EQ(extract_features({"a", "b"}, {"a", "x"}, stats, 0).exact, 0.5);
    EXPECT_DOUBLE_EQ(extract_features({"a", "b", "c"}, {"a", "b", "x", "c"}, stats, 0).bigram, 0.5);
    // idf(a) = ln 4 is twice idf(b) = ln 2
    EXPECT_NEAR(extract_features({"a", "b"}, {"a"}, stats, 0).exact_idf, 2.0 / 3.0, 1e-15);
    EXPECT_EQ(extract_features({"a"}, {}, stats, -7.25).ql, -7.25);
}

TEST(ExtractFeatures, EdgeCases) {
    const auto stats = stats_with_df(1, {{"a", 1}});
    EXPECT_THROW(extract_features({}, {"a"}, stats, 0), UsageError);
    auto f = extract_features({"a"}, {"a"}, stats, 0);
    EXPECT_EQ(f.bigram, 0.0);      // fewer than two query terms
    EXPECT_EQ(f.exact_idf, 0.0);   // ln(1/1) = 0 for the only term
    EXPECT_EQ(f.exact, 1.0);
    // bigram order matters
    EXPECT_EQ(extract_features({"a", "b"}, {"b", "a"}, stats, 0).bigram, 0.0);
    EXPECT_EQ(extract_features({"a", "b"}, {"a", "b"}, stats, 0).bigram, 1.0);
}

TEST(ExtractFeatures, PropertiesOnRandomInputs) {
    std::mt19937_64 rng(3);
    CollectionStats stats;
    stats.n_docs = 50;
    for (int i = 0; i < 12; ++i) stats.df["w" + std::to_string(i)] = 1 + rng() % 50;
    for (int trial = 0; trial < 1000; ++trial) {
        TokenSeq q = random_seq(rng, 6, 15);
        if (q.empty()) q.push_back("w0");
        TokenSeq d = random_seq(rng, 20, 15);
        const auto f = extract_features(q, d, stats, -3.0);
        for (double x : {f.exact, f.exact_idf, f.bigram}) {
            EXPECT_GE(x, 0.0);
            EXPECT_LE(x, 1.0);
            EXPECT_TRUE(std::isfinite(x));
        }
        TokenSeq reversed(d.rbegin(), d.rend());
        EXPECT_EQ(extract_features(q, reversed, stats, 0).exact, f.exact);
        TokenSeq doubled = q;
        doubled.insert(doubled.end(), q.begin(), q.end());
        EXPECT_EQ(extract_features(doubled, d, stats, 0).exact, f.exact);
        EXPECT_EQ(extract_features(doubled, d, stats, 0).exact_idf, f.exact_idf);
    }
}

TEST(ExtractFeatures, AsArrayOrderMatchesNames) {
    FeatureVector f{1, 2, 3, 4};
    EXPECT_EQ(f.as_array(), (FeatureArray{1, 2, 3, 4}));
    EXPECT_EQ(feature_names()[0], "ql");
    EXPECT_EQ(feature_names()[3], "bigram");
}

TEST(FeatureChannel, ParseAndPrint) {
    EXPECT_EQ(parse_feature_channel("q-dhat"), FeatureChannel::query_vs_translated_doc);
    EXPECT_EQ(to_string(parse_feature_channel("qhat-d")), "qhat-d");
    EXPECT_THROW(parse_feature_channel("both"), UsageError);
}

TEST(FeatureStats, StandardizesTrainingColumns) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(3.0, 40.0);
    std::vector<FeatureArray> rows(200);
    for (auto& r : rows) r = {n(rng), 0.25, n(rng) / 100, static_cast<double>(rng() % 2)};
    const auto s = FeatureStats::fit(rows);
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
        double sum = 0, sq = 0;
        for (const auto& r : rows) sum += s.transform(r)[j];
        const double mean = sum / rows.size();
        for (const auto& r : rows) sq += std::pow(s.transform(r)[j] - mean, 2);
        EXPECT_NEAR(mean, 0.0, 1e-9);
        if (j == 1) {
            for (const auto& r : rows) EXPECT_EQ(s.transform(r)[j], 0.0);  // constant column
        } else {
            EXPECT_NEAR(std::sqrt(sq / rows.size()), 1.0, 1e-6);
        }
    }
}

TEST(FeatureStats, NeedsTwoRows) {
    EXPECT_THROW(FeatureStats::fit({}), DataError);
    EXPECT_THROW(FeatureStats::fit({FeatureArray{}}), DataError);
    EXPECT_NO_THROW(FeatureStats::fit({FeatureArray{}, FeatureArray{}}));
}

TEST(FeatureStats, JsonRoundTripAndValidation) {
    const auto s = FeatureStats::fit({FeatureArray{1, 2, 3, 4}, FeatureArray{2, 2, 5, 0}});
    const auto back = FeatureStats::from_json(nlohmann::json::parse(s.to_json().dump()));
    EXPECT_EQ(back.mean, s.mean);
    EXPECT_EQ(back.std, s.std);
    auto bad = s.to_json();
    bad["std"][0] = 0.0;
    EXPECT_THROW(FeatureStats::from_json(bad), DataError);
    auto renamed = s.to_json();
    renamed["names"][0] = "indri";
    EXPECT_THROW(FeatureStats::from_json(renamed), DataError);
    EXPECT_THROW(FeatureStats::from_json(nlohmann::json::object()), DataError);
}

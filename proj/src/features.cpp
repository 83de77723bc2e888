#include "clir/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>
#include <utility>

#include "clir/error.hpp"

namespace clir {

const std::array<std::string, kNumFeatures>& feature_names() {
    static const std::array<std::string, kNumFeatures> names{"ql", "exact", "exact_idf", "bigram"};
    return names;
}

FeatureVector extract_features(const TokenSeq& query, const TokenSeq& doc, const CollectionStats& stats, double ql) {
    if (query.empty()) throw UsageError("extract_features: empty query");
    FeatureVector f;
    f.ql = ql;

    const std::unordered_set<Token> doc_terms(doc.begin(), doc.end());
    const std::set<Token> unique(query.begin(), query.end());
    std::size_t matched = 0;
    double idf_all = 0.0, idf_matched = 0.0;
    for (const auto& t : unique) {
        const double idf = stats.idf(t);
        idf_all += idf;
        if (doc_terms.count(t)) {
            ++matched;
            idf_matched += idf;
        }
    }
    f.exact = static_cast<double>(matched) / static_cast<double>(unique.size());
    f.exact_idf = idf_all > 0.0 ? idf_matched / idf_all : 0.0;

    if (query.size() >= 2) {
        std::set<std::pair<Token, Token>> doc_bigrams;
        for (std::size_t i = 0; i + 1 < doc.size(); ++i) doc_bigrams.emplace(doc[i], doc[i + 1]);
        std::size_t hits = 0;
        for (std::size_t i = 0; i + 1 < query.size(); ++i) hits += doc_bigrams.count({query[i], query[i + 1]});
        f.bigram = static_cast<double>(hits) / static_cast<double>(query.size() - 1);
    }
    return f;
}

FeatureChannel parse_feature_channel(const std::string& name) {
    if (name == "q-dhat") return FeatureChannel::query_vs_translated_doc;
    if (name == "qhat-d") return FeatureChannel::translated_query_vs_doc;
    throw UsageError("unknown feature channel '" + name + "' (expected q-dhat or qhat-d)");
}

std::string to_string(FeatureChannel channel) {
    return channel == FeatureChannel::query_vs_translated_doc ? "q-dhat" : "qhat-d";
}

FeatureStats FeatureStats::fit(const std::vector<FeatureArray>& rows) {
    if (rows.size() < 2) throw DataError("feature standardization needs at least two training rows");
    FeatureStats s;
    const double n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
        double sum = 0.0;
        for (const auto& r : rows) sum += r[j];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& r : rows) ss += (r[j] - mean) * (r[j] - mean);
        s.mean[j] = mean;
        s.std[j] = std::max(std::sqrt(ss / n), kStdFloor);
    }
    return s;
}

FeatureArray FeatureStats::transform(const FeatureArray& row) const {
    FeatureArray out{};
    for (std::size_t j = 0; j < kNumFeatures; ++j) out[j] = (row[j] - mean[j]) / std[j];
    return out;
}

nlohmann::ordered_json FeatureStats::to_json() const {
    nlohmann::ordered_json j;
    j["names"] = feature_names();
    j["mean"] = mean;
    j["std"] = std;
    return j;
}

FeatureStats FeatureStats::from_json(const nlohmann::json& j) {
    FeatureStats s;
    try {
        if (j.at("names").get<std::vector<std::string>>() !=
            std::vector<std::string>(feature_names().begin(), feature_names().end())) {
            throw DataError("feature statistics list unexpected feature names");
        }
        s.mean = j.at("mean").get<FeatureArray>();
        s.std = j.at("std").get<FeatureArray>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed feature statistics: ") + e.what());
    }
    for (double x : s.std)
        if (!(x > 0.0)) throw DataError("feature statistics contain a non-positive deviation");
    return s;
}

}  // namespace clir

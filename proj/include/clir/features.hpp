#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "clir/corpus.hpp"

namespace clir {

inline constexpr std::size_t kNumFeatures = 4;
using FeatureArray = std::array<double, kNumFeatures>;

/// Hand-crafted reranking signals, in fusion-weight order: ql, exact, exact_idf, bigram.
struct FeatureVector {
    double ql = 0.0;         ///< first-stage log-likelihood, passed through
    double exact = 0.0;      ///< share of unique query terms found in the document
    double exact_idf = 0.0;  ///< the same share weighted by idf
    double bigram = 0.0;     ///< share of adjacent query bigrams occurring adjacently in the document

    [[nodiscard]] FeatureArray as_array() const { return {ql, exact, exact_idf, bigram}; }
};

/// Names matching `FeatureVector::as_array` order.
const std::array<std::string, kNumFeatures>& feature_names();

/// `stats` supplies idf for the document's language. Throws UsageError on an empty query.
FeatureVector extract_features(const TokenSeq& query, const TokenSeq& doc, const CollectionStats& stats, double ql);

/// Which query side is matched against which document side.
enum class FeatureChannel { query_vs_translated_doc, translated_query_vs_doc };

FeatureChannel parse_feature_channel(const std::string& name);
std::string to_string(FeatureChannel channel);

/// Per-feature z-scoring with frozen statistics.
struct FeatureStats {
    FeatureArray mean{};
    FeatureArray std{1.0, 1.0, 1.0, 1.0};

    static constexpr double kStdFloor = 1e-6;

    /// Population mean and standard deviation of each column; needs at least two rows.
    static FeatureStats fit(const std::vector<FeatureArray>& rows);
    [[nodiscard]] FeatureArray transform(const FeatureArray& row) const;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static FeatureStats from_json(const nlohmann::json& j);
};

}  // namespace clir

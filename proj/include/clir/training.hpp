#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clir/corpus.hpp"
#include "clir/embeddings.hpp"
#include "clir/features.hpp"
#include "clir/rankers.hpp"
#include "clir/retrieval.hpp"
#include "clir/tensor_io.hpp"

namespace clir {

struct TrainingPair {
    std::string query_id;
    std::string positive;
    std::string negative;
};

/// One pair per relevant document in each query's list, its negative drawn uniformly from the
/// same list's non-relevant (grade 0 or unjudged) documents. Queries are visited in id order and
/// restricted to `only` when given. Throws DataError if no pair can be formed.
std::vector<TrainingPair> build_training_pairs(const Run& run, const RelevanceJudgments& qrels, std::uint64_t seed,
                                               const std::set<std::string>* only = nullptr);

/// Documents and queries of one language pair, embedded into the shared source space.
///
/// Documents carry D (target language) in `terms` and D-hat (source language) in
/// `translated_terms`; queries carry Q (source) and Q-hat (target). Target vectors must
/// already be aligned into the source space. Query idf comes from the collection on the
/// same side: Q against D-hat, Q-hat against D.
class RerankContext {
  public:
    RerankContext(const Corpus& docs, const QuerySet& queries, const EmbeddingMatrix& source_embeddings,
                  const EmbeddingMatrix& target_embeddings);

    [[nodiscard]] const Corpus& docs() const { return *docs_; }
    [[nodiscard]] const QuerySet& queries() const { return *queries_; }
    [[nodiscard]] const CollectionStats& source_stats() const { return source_stats_; }
    [[nodiscard]] const CollectionStats& target_stats() const { return target_stats_; }
    [[nodiscard]] std::size_t embedding_dim() const { return source_->dim(); }
    /// DataError unless a scorer of this configuration can read these embeddings.
    void check_compatible(const RankerConfig& cfg) const;

    /// Unstandardized features; `ql` is the first-stage score. Throws DataError for unknown ids.
    [[nodiscard]] FeatureArray raw_features(const std::string& query_id, const std::string& doc_id, double ql,
                                            FeatureChannel channel) const;
    /// Embedded sides plus standardized features.
    [[nodiscard]] PairInput pair(const std::string& query_id, const std::string& doc_id,
                                 const FeatureArray& standardized) const;

  private:
    struct QuerySides {
        ad::Tensor q, q_hat;
        std::vector<double> idf_q, idf_q_hat;
    };
    struct DocSides {
        ad::Tensor d, d_hat;
    };
    const QuerySides& query_sides(const std::string& query_id) const;
    const DocSides& doc_sides(const std::string& doc_id) const;

    const Corpus* docs_;
    const QuerySet* queries_;
    const EmbeddingMatrix* source_;
    const EmbeddingMatrix* target_;
    CollectionStats source_stats_, target_stats_;
    mutable std::map<std::string, QuerySides> query_cache_;
    mutable std::map<std::string, DocSides> doc_cache_;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    FeatureChannel channel = FeatureChannel::query_vs_translated_doc;

    void validate() const;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct EpochLog {
    std::size_t epoch = 0;  ///< 1-based
    double mean_loss = 0.0;
    double dev_map = 0.0;
};

/// Everything needed to rerank; carries no language identifiers so any aligned pair can use it.
struct Checkpoint {
    RankerConfig config;
    FeatureChannel channel = FeatureChannel::query_vs_translated_doc;
    FeatureStats feature_stats;
    std::vector<NamedTensor> tensors;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    std::vector<EpochLog> history;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static Checkpoint from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

/// Scorer with the checkpoint's configuration and parameter values.
BilingualScorer load_scorer(const Checkpoint& ckpt);

/// Epoch index (0-based) of the highest dev MAP; earliest wins ties.
std::size_t select_best_epoch(const std::vector<double>& dev_map);

/// Replaces every candidate's score with the fused model score and re-sorts. Candidates are
/// never added or removed; a document missing from the corpus is a DataError.
Run rerank(const BilingualScorer& scorer, const FeatureStats& stats, FeatureChannel channel, const RerankContext& ctx,
           const Run& first_stage, const std::set<std::string>* only = nullptr);
Run rerank(const Checkpoint& ckpt, const RerankContext& ctx, const Run& first_stage,
           const std::set<std::string>* only = nullptr);
/// Mean final score over the checkpoints, then re-sorted.
Run rerank_ensemble(const std::vector<Checkpoint>& ckpts, const RerankContext& ctx, const Run& first_stage,
                    const std::set<std::string>* only = nullptr);

struct TrainData {
    const RerankContext* ctx = nullptr;
    const Run* train_run = nullptr;
    const Run* dev_run = nullptr;
    const RelevanceJudgments* qrels = nullptr;
    std::set<std::string> train_queries;
    std::set<std::string> dev_queries;
};

/// Adam on mean binary cross-entropy over minibatches of examples (each pair yields a
/// positive and a negative). Dev MAP is measured after every epoch and the best epoch's
/// parameters are returned. Feature statistics are fit on every training-run candidate.
Checkpoint train(const RankerConfig& cfg, const TrainConfig& tc, const TrainData& data,
                 const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace clir

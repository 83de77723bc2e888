#include "clir/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "clir/error.hpp"
#include "clir/evaluation.hpp"
#include "clir/log.hpp"
#include "clir/random.hpp"

namespace clir {

namespace {

bool selected(const std::set<std::string>* only, const std::string& qid) { return !only || only->count(qid); }

std::vector<double> idf_of(const TokenSeq& terms, const CollectionStats& stats) {
    std::vector<double> out;
    out.reserve(terms.size());
    for (const auto& t : terms) out.push_back(stats.idf(t));
    return out;
}

/// Model scores for every selected candidate of the run, in run order.
template <typename ScoreFn>
Run rescore(const Run& first_stage, const std::set<std::string>* only, ScoreFn&& score) {
    Run out;
    for (const auto& [qid, list] : first_stage) {
        if (!selected(only, qid)) continue;
        RankedList ranked{qid, {}};
        ranked.entries.reserve(list.entries.size());
        for (const auto& e : list.entries) ranked.entries.push_back({e.doc_id, score(qid, e)});
        sort_ranked(ranked.entries);
        out.emplace(qid, std::move(ranked));
    }
    return out;
}

/// Turns a scorer's encoding cache on for one reranking pass.
class EncodingCacheScope {
  public:
    explicit EncodingCacheScope(const BilingualScorer& s) : s_(s) { s_.set_encoding_cache(true); }
    ~EncodingCacheScope() { s_.set_encoding_cache(false); }
    EncodingCacheScope(const EncodingCacheScope&) = delete;
    EncodingCacheScope& operator=(const EncodingCacheScope&) = delete;

  private:
    const BilingualScorer& s_;
};

}  // namespace

std::vector<TrainingPair> build_training_pairs(const Run& run, const RelevanceJudgments& qrels, std::uint64_t seed,
                                               const std::set<std::string>* only) {
    Rng rng(mix_seed(seed, 0x7061697273));
    std::vector<TrainingPair> pairs;
    for (const auto& [qid, list] : run) {
        if (!selected(only, qid)) continue;
        std::vector<const std::string*> positives, negatives;
        for (const auto& e : list.entries) (qrels.is_relevant(qid, e.doc_id) ? positives : negatives).push_back(&e.doc_id);
        if (positives.empty()) continue;
        if (negatives.empty()) {
            warn("query " + qid + " has relevant candidates but no negatives; it contributes no training pairs");
            continue;
        }
        for (const auto* pos : positives)
            pairs.push_back({qid, *pos, *negatives[uniform_index(rng, negatives.size())]});
    }
    if (pairs.empty()) throw DataError("no training pairs: no training query has both relevant and non-relevant candidates");
    return pairs;
}

// -- context -----------------------------------------------------------------

RerankContext::RerankContext(const Corpus& docs, const QuerySet& queries, const EmbeddingMatrix& source_embeddings,
                             const EmbeddingMatrix& target_embeddings)
    : docs_(&docs),
      queries_(&queries),
      source_(&source_embeddings),
      target_(&target_embeddings),
      source_stats_(collection_stats(swap_sides(docs))),
      target_stats_(collection_stats(docs)) {
    if (source_embeddings.dim() != target_embeddings.dim()) {
        throw DataError("source and target embeddings differ in dimension (" + std::to_string(source_embeddings.dim()) +
                        " vs " + std::to_string(target_embeddings.dim()) + ")");
    }
}

void RerankContext::check_compatible(const RankerConfig& cfg) const {
    if (cfg.embed_dim != embedding_dim())
        throw DataError("embeddings have dimension " + std::to_string(embedding_dim()) + " but the ranker expects " +
                        std::to_string(cfg.embed_dim));
}

const RerankContext::QuerySides& RerankContext::query_sides(const std::string& query_id) const {
    auto it = query_cache_.find(query_id);
    if (it != query_cache_.end()) return it->second;
    const BilingualQuery* q = queries_->find(query_id);
    if (!q) throw DataError("query " + query_id + " is in the run but not in the query set");
    QuerySides s{embed_terms(q->terms, *source_), embed_terms(q->translated_terms, *target_),
                 idf_of(q->terms, source_stats_), idf_of(q->translated_terms, target_stats_)};
    return query_cache_.emplace(query_id, std::move(s)).first->second;
}

const RerankContext::DocSides& RerankContext::doc_sides(const std::string& doc_id) const {
    auto it = doc_cache_.find(doc_id);
    if (it != doc_cache_.end()) return it->second;
    const BilingualDocument* d = docs_->find(doc_id);
    if (!d) throw DataError("document " + doc_id + " is in the run but not in the corpus");
    DocSides s{embed_terms(d->terms, *target_), embed_terms(d->translated_terms, *source_)};
    return doc_cache_.emplace(doc_id, std::move(s)).first->second;
}

FeatureArray RerankContext::raw_features(const std::string& query_id, const std::string& doc_id, double ql,
                                         FeatureChannel channel) const {
    const BilingualQuery* q = queries_->find(query_id);
    if (!q) throw DataError("query " + query_id + " is in the run but not in the query set");
    const BilingualDocument* d = docs_->find(doc_id);
    if (!d) throw DataError("document " + doc_id + " is in the run but not in the corpus");
    const bool source_side = channel == FeatureChannel::query_vs_translated_doc;
    const TokenSeq& query = source_side ? q->terms : q->translated_terms;
    const TokenSeq& doc = source_side ? d->translated_terms : d->terms;
    // a missing translation leaves the channel without evidence; only the first-stage score remains
    if (query.empty()) return {ql, 0.0, 0.0, 0.0};
    return extract_features(query, doc, source_side ? source_stats_ : target_stats_, ql).as_array();
}

PairInput RerankContext::pair(const std::string& query_id, const std::string& doc_id,
                              const FeatureArray& standardized) const {
    const QuerySides& q = query_sides(query_id);
    const DocSides& d = doc_sides(doc_id);
    return PairInput{q.q, q.q_hat, d.d, d.d_hat, q.idf_q, q.idf_q_hat, standardized};
}

// -- configuration and checkpoints ------------------------------------------

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("learning rate must be positive");
    if (epochs == 0) throw UsageError("training needs at least one epoch");
    if (batch_size == 0) throw UsageError("batch size must be positive");
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["feature_channel"] = to_string(channel);
    return j;
}

nlohmann::ordered_json Checkpoint::to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["arch"] = to_string(config.arch);
    j["config"] = config.to_json();
    j["feature_channel"] = to_string(channel);
    j["feature_stats"] = feature_stats.to_json();
    auto& ts = j["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : tensors) ts.push_back(tensor_to_json(t));
    nlohmann::ordered_json meta;
    meta["seed"] = seed;
    meta["best_epoch"] = best_epoch;
    meta["embedding_dim"] = config.embed_dim;
    auto& hist = meta["history"] = nlohmann::ordered_json::array();
    for (const auto& e : history) hist.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"dev_map", e.dev_map}});
    j["meta"] = meta;
    return j;
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
    Checkpoint c;
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion)
            throw DataError("unsupported checkpoint format_version " + std::to_string(version));
        c.config = RankerConfig::from_json(j.at("config"));
        if (parse_arch(j.at("arch").get<std::string>()) != c.config.arch)
            throw DataError("checkpoint arch disagrees with its config");
        c.channel = parse_feature_channel(j.at("feature_channel").get<std::string>());
        c.feature_stats = FeatureStats::from_json(j.at("feature_stats"));
        for (const auto& t : j.at("tensors")) c.tensors.push_back(tensor_from_json(t));
        const auto& meta = j.at("meta");
        c.seed = meta.at("seed").get<std::uint64_t>();
        c.best_epoch = meta.at("best_epoch").get<std::size_t>();
        for (const auto& e : meta.at("history"))
            c.history.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(),
                                 e.at("dev_map").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
    return c;
}

void Checkpoint::save(const std::string& path) const { write_file(path, dump_json(to_json()) + "\n"); }

Checkpoint Checkpoint::load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path + ": not a JSON checkpoint: " + e.what());
    }
    try {
        return from_json(j);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

BilingualScorer load_scorer(const Checkpoint& ckpt) {
    BilingualScorer scorer(ckpt.config);
    try {
        scorer.params().import_tensors(ckpt.tensors);
    } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint tensors do not fit the configuration: ") + e.what());
    }
    return scorer;
}

std::size_t select_best_epoch(const std::vector<double>& dev_map) {
    if (dev_map.empty()) throw UsageError("no epochs to select from");
    return static_cast<std::size_t>(std::max_element(dev_map.begin(), dev_map.end()) - dev_map.begin());
}

// -- reranking ---------------------------------------------------------------

Run rerank(const BilingualScorer& scorer, const FeatureStats& stats, FeatureChannel channel, const RerankContext& ctx,
           const Run& first_stage, const std::set<std::string>* only) {
    ctx.check_compatible(scorer.config());
    ad::NoGradGuard no_grad;
    // the context keeps every embedded side alive, so cached encodings stay valid for this call
    const EncodingCacheScope cache(scorer);
    return rescore(first_stage, only, [&](const std::string& qid, const ScoredDoc& e) {
        const auto feats = stats.transform(ctx.raw_features(qid, e.doc_id, e.score, channel));
        return scorer.score(ctx.pair(qid, e.doc_id, feats), false, 0).item();
    });
}

Run rerank(const Checkpoint& ckpt, const RerankContext& ctx, const Run& first_stage,
           const std::set<std::string>* only) {
    return rerank(load_scorer(ckpt), ckpt.feature_stats, ckpt.channel, ctx, first_stage, only);
}

Run rerank_ensemble(const std::vector<Checkpoint>& ckpts, const RerankContext& ctx, const Run& first_stage,
                    const std::set<std::string>* only) {
    if (ckpts.empty()) throw UsageError("ensemble needs at least one checkpoint");
    std::vector<BilingualScorer> scorers;
    for (const auto& c : ckpts) {
        ctx.check_compatible(c.config);
        scorers.push_back(load_scorer(c));
    }
    std::vector<std::unique_ptr<EncodingCacheScope>> caches;
    for (const auto& s : scorers) caches.push_back(std::make_unique<EncodingCacheScope>(s));
    ad::NoGradGuard no_grad;
    return rescore(first_stage, only, [&](const std::string& qid, const ScoredDoc& e) {
        double sum = 0.0;
        for (std::size_t i = 0; i < ckpts.size(); ++i) {
            const auto feats = ckpts[i].feature_stats.transform(ctx.raw_features(qid, e.doc_id, e.score, ckpts[i].channel));
            sum += scorers[i].score(ctx.pair(qid, e.doc_id, feats), false, 0).item();
        }
        return sum / static_cast<double>(ckpts.size());
    });
}

// -- training ----------------------------------------------------------------

Checkpoint train(const RankerConfig& cfg, const TrainConfig& tc, const TrainData& data,
                 const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    tc.validate();
    data.ctx->check_compatible(cfg);
    if (!data.ctx || !data.train_run || !data.dev_run || !data.qrels) throw UsageError("incomplete training data");
    const RerankContext& ctx = *data.ctx;
    if (evaluated_queries(*data.qrels, &data.dev_queries).empty())
        throw DataError("no dev query has a relevant document; dev MAP cannot select a model");

    const auto pairs = build_training_pairs(*data.train_run, *data.qrels, tc.seed, &data.train_queries);

    // standardization statistics and raw features of every training candidate
    std::map<std::pair<std::string, std::string>, FeatureArray> raw;
    std::vector<FeatureArray> rows;
    for (const auto& [qid, list] : *data.train_run) {
        if (!data.train_queries.count(qid)) continue;
        for (const auto& e : list.entries) {
            auto f = ctx.raw_features(qid, e.doc_id, e.score, tc.channel);
            raw.emplace(std::make_pair(qid, e.doc_id), f);
            rows.push_back(f);
        }
    }
    const FeatureStats stats = FeatureStats::fit(rows);

    BilingualScorer scorer(cfg);
    scorer.initialize(tc.seed);
    auto& params = scorer.params().tensors();
    ad::AdamState adam;
    adam.lr = tc.lr;

    struct Example {
        const TrainingPair* pair;
        bool positive;
    };
    std::vector<EpochLog> history;
    std::vector<double> dev_maps;
    std::vector<std::vector<double>> best;
    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        const std::uint64_t epoch_seed = mix_seed(tc.seed, epoch);
        std::vector<const TrainingPair*> order;
        for (const auto& p : pairs) order.push_back(&p);
        Rng rng(epoch_seed);
        shuffle(order, rng);
        std::vector<Example> examples;
        for (const auto* p : order) {
            examples.push_back({p, true});
            examples.push_back({p, false});
        }

        double loss_sum = 0.0;
        for (std::size_t start = 0, batch = 0; start < examples.size(); start += tc.batch_size, ++batch) {
            const std::size_t end = std::min(examples.size(), start + tc.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);
            for (auto& t : params) t.zero_grad();
            try {
                for (std::size_t i = start; i < end; ++i) {
                    const auto& ex = examples[i];
                    const std::string& doc = ex.positive ? ex.pair->positive : ex.pair->negative;
                    const auto feats = stats.transform(raw.at({ex.pair->query_id, doc}));
                    const auto input = ctx.pair(ex.pair->query_id, doc, feats);
                    auto loss = ad::bce_with_logits(scorer.score(input, true, mix_seed(epoch_seed, i)),
                                                    ex.positive ? 1.0 : 0.0);
                    if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
                    loss_sum += loss.item();
                    ad::backward(ad::scale(loss, scale));
                }
                std::vector<std::vector<double>> grads;
                grads.reserve(params.size());
                for (const auto& t : params) grads.push_back(t.grad());
                ad::adam_step(params, grads, adam);
            } catch (const NumericError& e) {
                throw NumericError("training diverged in epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch) + ": " + e.what());
            }
        }
        for (auto& t : params) t.zero_grad();

        const Run dev = rerank(scorer, stats, tc.channel, ctx, *data.dev_run, &data.dev_queries);
        const EpochLog log{epoch, loss_sum / static_cast<double>(examples.size()),
                           mean_average_precision(dev, *data.qrels, &data.dev_queries)};
        history.push_back(log);
        dev_maps.push_back(log.dev_map);
        if (select_best_epoch(dev_maps) == epoch - 1) best = scorer.params().snapshot();
        if (on_epoch) on_epoch(log);
    }

    scorer.params().restore(best);
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.channel = tc.channel;
    ckpt.feature_stats = stats;
    ckpt.tensors = scorer.params().export_tensors();
    ckpt.seed = tc.seed;
    ckpt.best_epoch = select_best_epoch(dev_maps) + 1;
    ckpt.history = history;
    return ckpt;
}

}  // namespace clir

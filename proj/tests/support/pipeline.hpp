#pragma once

// In-process synthetic CLIR experiment: cipher dataset, gold-lexicon alignment,
// first-stage QL on translated documents and a rerank context over all queries.

#include <memory>
#include <set>
#include <string>

#include "clir/evaluation.hpp"
#include "clir/retrieval.hpp"
#include "clir/synth.hpp"
#include "clir/training.hpp"

namespace fixtures {

struct Experiment {
    clir::CipherDataset ds;
    clir::EmbeddingMatrix aligned_target;
    clir::Run ql;
    std::set<std::string> train, dev, test;
    std::unique_ptr<clir::RerankContext> ctx;

    [[nodiscard]] clir::TrainData data() const { return {ctx.get(), &ql, &ql, &ds.qrels, train, dev}; }
    [[nodiscard]] double test_map(const clir::Run& run) const {
        return clir::mean_average_precision(run, ds.qrels, &test);
    }
};

inline std::set<std::string> ids_of(const clir::QuerySet& qs) {
    std::set<std::string> out;
    for (const auto& q : qs) out.insert(q.id);
    return out;
}

/// `noise` replaces that share of every translated token, with the dataset seed as noise seed.
inline std::unique_ptr<Experiment> make_experiment(const clir::CipherOptions& opt, double noise, std::size_t n_train,
                                                   std::size_t n_dev, std::size_t n_test, std::size_t k = 100) {
    auto e = std::make_unique<Experiment>();
    e->ds = clir::gen_cipher_dataset(opt);
    if (noise > 0.0) {
        e->ds.target_docs =
            clir::inject_translation_noise(e->ds.target_docs, noise, e->ds.source_embeddings.tokens(), opt.seed);
        e->ds.queries = clir::inject_translation_noise(e->ds.queries, noise, e->ds.target_embeddings.tokens(), opt.seed);
    }
    const auto split = clir::split_queries(e->ds.queries, n_train, n_dev, n_test);
    e->train = ids_of(split.train);
    e->dev = ids_of(split.dev);
    e->test = ids_of(split.test);
    const auto map = clir::procrustes(e->ds.source_embeddings, e->ds.target_embeddings, e->ds.gold_lexicon);
    e->aligned_target = clir::apply_alignment(map, e->ds.target_embeddings);
    const auto index = clir::build_index(e->ds.target_docs, clir::IndexSide::translated);
    for (const auto& q : e->ds.queries) e->ql[q.id] = clir::retrieve_topk(index, clir::plain_query(q.terms), k, 1000.0, q.id);
    e->ctx = std::make_unique<clir::RerankContext>(e->ds.target_docs, e->ds.queries, e->ds.source_embeddings,
                                                   e->aligned_target);
    return e;
}

/// A dataset small enough for unit tests.
inline clir::CipherOptions tiny_options(std::uint64_t seed) {
    clir::CipherOptions o;
    o.seed = seed;
    o.n_docs = 80;
    o.n_queries = 16;
    o.vocab_size = 400;
    o.embed_dim = 8;
    o.doc_len_min = 15;
    o.doc_len_max = 25;
    return o;
}

inline clir::RankerConfig tiny_ranker(clir::Arch arch, bool bilingual = true) {
    clir::RankerConfig cfg;
    cfg.arch = arch;
    cfg.embed_dim = 8;
    cfg.filters_per_size = 4;
    cfg.l_q = 4;
    cfg.l_d = 30;
    cfg.pacrr_mlp_hidden = 8;
    cfg.bilingual = bilingual;
    return cfg;
}

}  // namespace fixtures

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "clir/corpus.hpp"
#include "clir/embeddings.hpp"
#include "clir/linalg.hpp"
#include "clir/retrieval.hpp"

namespace clir {

/// Parameters of the synthetic cipher-language generator.
///
/// The "world" (source vocabulary, topic structure, source embeddings) is drawn
/// from `world_seed` when given, else from `seed`. Everything language- or
/// sample-specific (cipher bijection, rotation, documents, queries) comes from
/// `seed`, so two datasets sharing a world seed are two language pairs over the
/// same source space.
struct CipherOptions {
    std::uint64_t seed = 7;
    std::size_t n_docs = 500;
    std::size_t n_queries = 100;
    std::size_t vocab_size = 2000;
    std::size_t doc_len_min = 30;
    std::size_t doc_len_max = 60;
    std::size_t embed_dim = 50;
    std::optional<std::uint64_t> world_seed;
    std::string source_lang = "en";
    std::string target_lang = "xa";
    std::size_t words_per_topic = 10;
    std::size_t query_len_min = 2;
    std::size_t query_len_max = 4;
    double primary_share = 0.5;
    double secondary_share = 0.2;
};

struct CipherDataset {
    Corpus source_docs;          ///< terms in the source language, translation = target twin
    Corpus target_docs;          ///< terms in the target language, translation = source twin
    QuerySet queries;            ///< source-language queries, translation = cipher of the terms
    RelevanceJudgments qrels;
    EmbeddingMatrix source_embeddings;
    EmbeddingMatrix target_embeddings;
    Lexicon gold_lexicon;        ///< (source, target) bijection, in source vocabulary order
    Matrix rotation;             ///< W with source = W * target for every lexicon pair
};

/// Minimum vocabulary the generator needs for the requested topic structure.
std::size_t cipher_vocab_demand(const CipherOptions& opt);

CipherDataset gen_cipher_dataset(const CipherOptions& opt);

/// Each translated token replaced, with probability `rate`, by a uniformly drawn token of `vocab`.
Corpus inject_translation_noise(const Corpus& corpus, double rate, const std::vector<Token>& vocab, std::uint64_t seed);
QuerySet inject_translation_noise(const QuerySet& queries, double rate, const std::vector<Token>& vocab,
                                  std::uint64_t seed);

/// Deterministic table: every (source, target) pair with probability 1.
TranslationTable table_from_lexicon(const Lexicon& lex);
BilingualDictionary dictionary_from_lexicon(const Lexicon& lex);

struct QuerySplit {
    QuerySet train, dev, test;
};

/// First n_train queries, next n_dev, next n_test (in stored order).
QuerySplit split_queries(const QuerySet& queries, std::size_t n_train, std::size_t n_dev, std::size_t n_test);

}  // namespace clir

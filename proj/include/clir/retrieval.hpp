#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clir/corpus.hpp"

namespace clir {

enum class IndexSide { original, translated };

IndexSide parse_index_side(const std::string& name);
std::string to_string(IndexSide side);

struct Posting {
    std::uint32_t doc;  ///< dense document number; numbering follows ascending doc_id
    std::uint32_t tf;
};

/// Postings, document lengths and collection statistics over one side of a corpus.
class InvertedIndex {
  public:
    InvertedIndex() = default;

    [[nodiscard]] std::size_t num_docs() const { return doc_ids_.size(); }
    [[nodiscard]] const std::string& doc_id(std::uint32_t doc) const { return doc_ids_[doc]; }
    [[nodiscard]] std::size_t doc_len(std::uint32_t doc) const { return doc_len_[doc]; }
    /// Dense number of `doc_id`; throws DataError if absent.
    [[nodiscard]] std::uint32_t doc_number(const std::string& doc_id) const;
    [[nodiscard]] bool contains_doc(const std::string& doc_id) const { return doc_index_.count(doc_id) != 0; }

    /// Empty span for terms that are not indexed.
    [[nodiscard]] const std::vector<Posting>& postings(const Token& term) const;
    [[nodiscard]] std::uint32_t tf(const Token& term, std::uint32_t doc) const;

    [[nodiscard]] const CollectionStats& stats() const { return stats_; }
    [[nodiscard]] IndexSide side() const { return side_; }
    [[nodiscard]] const std::unordered_map<Token, std::vector<Posting>>& all_postings() const { return postings_; }

    friend InvertedIndex build_index(const Corpus& corpus, IndexSide side);
    friend InvertedIndex index_from_json(std::string_view text, const std::string& source);

  private:
    std::vector<std::string> doc_ids_;
    std::vector<std::size_t> doc_len_;
    std::unordered_map<std::string, std::uint32_t> doc_index_;
    std::unordered_map<Token, std::vector<Posting>> postings_;
    CollectionStats stats_;
    IndexSide side_ = IndexSide::original;
};

InvertedIndex build_index(const Corpus& corpus, IndexSide side = IndexSide::original);

/// One scoring clause: a source concept whose alternatives contribute their
/// probability-weighted term frequency (PSQ), or a single term with probability 1.
struct QueryClause {
    double weight = 1.0;
    std::vector<std::pair<Token, double>> alternatives;
};

struct WeightedQuery {
    std::vector<QueryClause> clauses;

    [[nodiscard]] bool empty() const { return clauses.empty(); }
    /// Flattened (term, weight) view: weight times alternative probability.
    [[nodiscard]] std::vector<std::pair<Token, double>> entries() const;
};

/// Every term a clause with weight 1.
WeightedQuery plain_query(const TokenSeq& terms);

/// source term -> [(target term, probability)], probabilities in (0, 1] summing to at most 1.
class TranslationTable {
  public:
    void add(const Token& source, const Token& target, double prob);
    [[nodiscard]] const std::vector<std::pair<Token, double>>* find(const Token& source) const;
    [[nodiscard]] std::size_t size() const { return table_.size(); }
    /// Throws DataError if a row violates the probability invariants.
    void validate() const;

  private:
    std::map<Token, std::vector<std::pair<Token, double>>> table_;
};

using BilingualDictionary = std::map<Token, std::vector<Token>>;

TranslationTable parse_translation_table(std::string_view text, const std::string& source = "<memory>");
TranslationTable load_translation_table(const std::string& path);
/// TSV "source<TAB>target"; repeated sources accumulate alternatives in file order.
BilingualDictionary parse_dictionary(std::string_view text, const std::string& source = "<memory>");
BilingualDictionary load_dictionary(const std::string& path);

/// Each source term becomes one weight-1 clause per dictionary translation; unlisted terms are dropped.
WeightedQuery translate_query_dbqt(const TokenSeq& query, const BilingualDictionary& dict);
/// One clause per listed source term, alternatives weighted by p(f|e); unlisted terms are dropped.
WeightedQuery expand_query_psq(const TokenSeq& query, const TranslationTable& table);

/// Probability-weighted term frequency of a clause in one document.
double expected_tf(const QueryClause& clause, const InvertedIndex& index, std::uint32_t doc);
/// Probability-weighted collection frequency of a clause.
double expected_cf(const QueryClause& clause, const CollectionStats& stats);

/// Dirichlet-smoothed query log-likelihood; clauses with zero collection frequency are skipped.
double ql_score(const WeightedQuery& query, const std::string& doc_id, const InvertedIndex& index, double mu);
double ql_score(const WeightedQuery& query, std::uint32_t doc, const InvertedIndex& index, double mu);

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

/// Sorted by score descending, ties by ascending doc_id; no duplicates.
struct RankedList {
    std::string query_id;
    std::vector<ScoredDoc> entries;
};

/// Total order used by every ranking in the toolkit.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
}

void sort_ranked(std::vector<ScoredDoc>& entries);

/// Document-at-a-time scoring over the postings. Once any clause occurs in the collection every
/// document is ranked, so non-matching documents carry their background score.
RankedList retrieve_topk(const InvertedIndex& index, const WeightedQuery& query, std::size_t k, double mu,
                         const std::string& query_id = {});

/// query_id -> ranked list, iterated in query_id order.
using Run = std::map<std::string, RankedList>;

/// TREC run lines "qid Q0 docid rank score tag", rank from 1.
std::string format_run(const Run& run, const std::string& tag);
void save_run(const Run& run, const std::string& tag, const std::string& path);
Run parse_run(std::string_view text, const std::string& source = "<memory>");
Run load_run(const std::string& path);

/// Serialized postings for the `index` command.
std::string index_to_json(const InvertedIndex& index);
/// Inverse of index_to_json; throws DataError on malformed or inconsistent input.
InvertedIndex index_from_json(std::string_view text, const std::string& source = "<memory>");
InvertedIndex load_index(const std::string& path);

}  // namespace clir

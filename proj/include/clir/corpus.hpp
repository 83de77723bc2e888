#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clir {

using Token = std::string;
using TokenSeq = std::vector<Token>;

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation per token.
TokenSeq tokenize(std::string_view text);

/// Document D in its own language plus its translation D-hat (possibly empty).
struct BilingualDocument {
    std::string id;
    std::string lang;
    TokenSeq terms;
    TokenSeq translated_terms;
};

/// Query Q in the source language plus its translation Q-hat (possibly empty).
struct BilingualQuery {
    std::string id;
    std::string lang;
    TokenSeq terms;
    TokenSeq translated_terms;
};

/// Immutable id-addressable collection of records.
template <typename Record>
class RecordSet {
  public:
    RecordSet() = default;
    explicit RecordSet(std::vector<Record> records);

    [[nodiscard]] const std::vector<Record>& records() const { return records_; }
    [[nodiscard]] std::size_t size() const { return records_.size(); }
    [[nodiscard]] bool empty() const { return records_.empty(); }
    [[nodiscard]] const Record& operator[](std::size_t i) const { return records_[i]; }
    [[nodiscard]] const Record* find(const std::string& id) const;
    [[nodiscard]] const Record& at(const std::string& id) const;

    auto begin() const { return records_.begin(); }
    auto end() const { return records_.end(); }

  private:
    std::vector<Record> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

using Corpus = RecordSet<BilingualDocument>;
using QuerySet = RecordSet<BilingualQuery>;

/// Corpus whose `terms` are the original `translated_terms` and vice versa.
/// Documents with an empty translation are kept with empty `terms`.
Corpus swap_sides(const Corpus& corpus);

struct CollectionStats {
    std::size_t n_docs = 0;
    std::size_t total_terms = 0;
    std::unordered_map<Token, std::size_t> cf;
    std::unordered_map<Token, std::size_t> df;
    double avg_doc_len = 0.0;

    /// ln(n_docs / df(t)); ln(n_docs + 1) for unseen terms.
    [[nodiscard]] double idf(const Token& term) const;
    [[nodiscard]] std::size_t collection_frequency(const Token& term) const;
};

/// Statistics over the `terms` field of every document.
CollectionStats collection_stats(const Corpus& corpus);

/// (query_id, doc_id) -> grade. Ordered maps keep iteration deterministic.
class RelevanceJudgments {
  public:
    /// Sets the grade; returns false when the pair already had one (it is overwritten).
    bool set(const std::string& query_id, const std::string& doc_id, int grade);
    /// nullptr when the pair is unjudged.
    [[nodiscard]] const int* grade(const std::string& query_id, const std::string& doc_id) const;
    [[nodiscard]] bool is_relevant(const std::string& query_id, const std::string& doc_id) const;
    [[nodiscard]] std::size_t num_relevant(const std::string& query_id) const;
    [[nodiscard]] const std::map<std::string, int>* for_query(const std::string& query_id) const;
    [[nodiscard]] const std::map<std::string, std::map<std::string, int>>& all() const { return judgments_; }
    [[nodiscard]] std::size_t size() const;

  private:
    std::map<std::string, std::map<std::string, int>> judgments_;
};

Corpus load_documents(const std::string& path);
QuerySet load_queries(const std::string& path);
RelevanceJudgments load_qrels(const std::string& path);

/// Parsers over in-memory text; `source` names the input in diagnostics.
Corpus parse_documents(std::string_view text, const std::string& source = "<memory>");
QuerySet parse_queries(std::string_view text, const std::string& source = "<memory>");
RelevanceJudgments parse_qrels(std::string_view text, const std::string& source = "<memory>");

void save_documents(const Corpus& corpus, const std::string& path);
void save_queries(const QuerySet& queries, const std::string& path);
void save_qrels(const RelevanceJudgments& qrels, const std::string& path);

/// Space-joined token sequence.
std::string join_tokens(const TokenSeq& tokens);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace clir

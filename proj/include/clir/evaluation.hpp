#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clir/corpus.hpp"
#include "clir/retrieval.hpp"

namespace clir {

/// doc_id -> grade for one query; grades >= 1 are relevant.
using QueryGrades = std::map<std::string, int>;

struct EvalConfig {
    std::size_t cutoff_k = 20;
    double beta = 40.0;
    /// Fixed AQWV score cutoff; when absent the best global cutoff on the evaluated run is used.
    std::optional<double> aqwv_threshold;

    void validate() const;
};

/// (1/R) * sum of precision at each relevant rank; 0 when R = 0.
double average_precision(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades);
/// Relevant documents in the top k divided by k (never by the list length).
double precision_at_k(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades, std::size_t k);
/// Exponential gain 2^g - 1 with log2(r + 1) discount; 0 when the ideal DCG is 0.
double ndcg_at_k(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades, std::size_t k);
/// 1 - P_miss - beta * P_FA for the documents scoring >= threshold. N - R = 0 gives P_FA = 0.
double query_value(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades, std::size_t n_docs, double beta,
                   double threshold);

/// Queries with at least one relevant document, optionally restricted to `only`.
std::vector<std::string> evaluated_queries(const RelevanceJudgments& qrels, const std::set<std::string>* only = nullptr);

/// Mean AP over evaluated queries; a query missing from the run scores 0. Returns 0 for no queries.
double mean_average_precision(const Run& run, const RelevanceJudgments& qrels,
                              const std::set<std::string>* only = nullptr);

/// Mean per-query value at a global threshold.
double aqwv(const Run& run, const RelevanceJudgments& qrels, std::size_t n_docs, double beta, double threshold,
            const std::set<std::string>* only = nullptr);

/// Sweeps every distinct run score and +infinity; returns the AQWV maximizer, preferring the highest
/// threshold among values within 1e-12 of the best.
double find_best_cutoff(const Run& run, const RelevanceJudgments& qrels, std::size_t n_docs, double beta,
                        const std::set<std::string>* only = nullptr);

struct QueryMetrics {
    std::string query_id;
    double ap = 0, precision = 0, ndcg = 0, aqwv = 0;
};

struct EvalReport {
    std::size_t cutoff_k = 20;
    double beta = 40.0;
    double threshold = 0.0;
    std::vector<QueryMetrics> per_query;  ///< in query_id order
    QueryMetrics mean;                    ///< query_id "all"
};

EvalReport evaluate(const Run& run, const RelevanceJudgments& qrels, std::size_t n_docs, const EvalConfig& cfg,
                    const std::set<std::string>* only = nullptr);

/// Fixed-width table, one row per query plus the "all" row.
std::string format_report_table(const EvalReport& report);
/// One JSON object per line: each query, then the summary with the cutoff settings.
std::string format_report_jsonl(const EvalReport& report);

}  // namespace clir

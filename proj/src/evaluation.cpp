#include "clir/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <tuple>

#include <json.hpp>

#include "clir/error.hpp"

namespace clir {

namespace {

constexpr double kTieTolerance = 1e-12;

int grade_of(const QueryGrades& grades, const std::string& doc) {
    auto it = grades.find(doc);
    return it == grades.end() ? 0 : it->second;
}

std::size_t relevant_count(const QueryGrades& grades) {
    return static_cast<std::size_t>(
        std::count_if(grades.begin(), grades.end(), [](const auto& kv) { return kv.second >= 1; }));
}

const std::vector<ScoredDoc>& entries_for(const Run& run, const std::string& qid) {
    static const std::vector<ScoredDoc> empty;
    auto it = run.find(qid);
    return it == run.end() ? empty : it->second.entries;
}

std::string fmt(double x) {
    char buf[32];
    if (std::isinf(x)) return x > 0 ? "+inf" : "-inf";
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

nlohmann::ordered_json json_number(double x) {
    if (std::isinf(x)) return x > 0 ? "+inf" : "-inf";
    return x;
}

}  // namespace

void EvalConfig::validate() const {
    if (cutoff_k < 1) throw UsageError("eval cutoff k must be at least 1");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("AQWV beta must be positive and finite");
    if (aqwv_threshold && std::isnan(*aqwv_threshold)) throw UsageError("AQWV threshold is NaN");
}

double average_precision(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades) {
    const std::size_t r = relevant_count(grades);
    if (r == 0) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (grade_of(grades, ranked[i].doc_id) >= 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(r);
}

double precision_at_k(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
        if (grade_of(grades, ranked[i].doc_id) >= 1) ++hits;
    return static_cast<double>(hits) / static_cast<double>(k);
}

double ndcg_at_k(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades, std::size_t k) {
    std::vector<int> ideal;
    for (const auto& [doc, g] : grades)
        if (g >= 1) ideal.push_back(g);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i)
        idcg += (std::exp2(ideal[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    if (idcg == 0.0) return 0.0;
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
        const int g = grade_of(grades, ranked[i].doc_id);
        if (g >= 1) dcg += (std::exp2(g) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / idcg;
}

double query_value(const std::vector<ScoredDoc>& ranked, const QueryGrades& grades, std::size_t n_docs, double beta,
                   double threshold) {
    const std::size_t r = relevant_count(grades);
    if (r == 0) return 0.0;
    std::size_t hits = 0, false_alarms = 0;
    for (const auto& e : ranked) {
        if (!(e.score >= threshold)) continue;
        if (grade_of(grades, e.doc_id) >= 1)
            ++hits;
        else
            ++false_alarms;
    }
    const double p_miss = static_cast<double>(r - hits) / static_cast<double>(r);
    const double p_fa = n_docs > r ? static_cast<double>(false_alarms) / static_cast<double>(n_docs - r) : 0.0;
    return 1.0 - p_miss - beta * p_fa;
}

std::vector<std::string> evaluated_queries(const RelevanceJudgments& qrels, const std::set<std::string>* only) {
    std::vector<std::string> out;
    for (const auto& [qid, grades] : qrels.all()) {
        if (only && !only->count(qid)) continue;
        if (relevant_count(grades) > 0) out.push_back(qid);
    }
    return out;
}

double mean_average_precision(const Run& run, const RelevanceJudgments& qrels, const std::set<std::string>* only) {
    const auto queries = evaluated_queries(qrels, only);
    if (queries.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& q : queries) sum += average_precision(entries_for(run, q), *qrels.for_query(q));
    return sum / static_cast<double>(queries.size());
}

double aqwv(const Run& run, const RelevanceJudgments& qrels, std::size_t n_docs, double beta, double threshold,
            const std::set<std::string>* only) {
    const auto queries = evaluated_queries(qrels, only);
    if (queries.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& q : queries) sum += query_value(entries_for(run, q), *qrels.for_query(q), n_docs, beta, threshold);
    return sum / static_cast<double>(queries.size());
}

double find_best_cutoff(const Run& run, const RelevanceJudgments& qrels, std::size_t n_docs, double beta,
                        const std::set<std::string>* only) {
    const auto queries = evaluated_queries(qrels, only);
    const double inf = std::numeric_limits<double>::infinity();
    if (queries.empty()) return inf;

    // Lowering the threshold past a document changes its query's value by +1/R (relevant)
    // or -beta/(N-R) (non-relevant); sweep all documents in descending score order.
    struct Step {
        double score;
        double delta;
    };
    std::vector<Step> steps;
    const double nq = static_cast<double>(queries.size());
    for (const auto& q : queries) {
        const QueryGrades& grades = *qrels.for_query(q);
        const std::size_t r = relevant_count(grades);
        for (const auto& e : entries_for(run, q)) {
            if (grade_of(grades, e.doc_id) >= 1)
                steps.push_back({e.score, 1.0 / static_cast<double>(r) / nq});
            else
                steps.push_back({e.score, n_docs > r ? -beta / static_cast<double>(n_docs - r) / nq : 0.0});
        }
    }
    std::sort(steps.begin(), steps.end(), [](const Step& a, const Step& b) { return a.score > b.score; });

    double best_threshold = inf, best_value = 0.0, value = 0.0;
    for (std::size_t i = 0; i < steps.size();) {
        const double s = steps[i].score;
        for (; i < steps.size() && steps[i].score == s; ++i) value += steps[i].delta;
        if (value > best_value + kTieTolerance) {
            best_value = value;
            best_threshold = s;
        }
    }
    return best_threshold;
}

EvalReport evaluate(const Run& run, const RelevanceJudgments& qrels, std::size_t n_docs, const EvalConfig& cfg,
                    const std::set<std::string>* only) {
    cfg.validate();
    EvalReport rep;
    rep.cutoff_k = cfg.cutoff_k;
    rep.beta = cfg.beta;
    rep.threshold = cfg.aqwv_threshold ? *cfg.aqwv_threshold : find_best_cutoff(run, qrels, n_docs, cfg.beta, only);
    rep.mean.query_id = "all";
    const auto queries = evaluated_queries(qrels, only);
    for (const auto& q : queries) {
        const auto& ranked = entries_for(run, q);
        const QueryGrades& grades = *qrels.for_query(q);
        QueryMetrics m{q, average_precision(ranked, grades), precision_at_k(ranked, grades, cfg.cutoff_k),
                       ndcg_at_k(ranked, grades, cfg.cutoff_k),
                       query_value(ranked, grades, n_docs, cfg.beta, rep.threshold)};
        rep.mean.ap += m.ap;
        rep.mean.precision += m.precision;
        rep.mean.ndcg += m.ndcg;
        rep.mean.aqwv += m.aqwv;
        rep.per_query.push_back(std::move(m));
    }
    if (!queries.empty()) {
        const double n = static_cast<double>(queries.size());
        rep.mean.ap /= n;
        rep.mean.precision /= n;
        rep.mean.ndcg /= n;
        rep.mean.aqwv /= n;
    }
    return rep;
}

std::string format_report_table(const EvalReport& report) {
    const std::string pk = "P@" + std::to_string(report.cutoff_k);
    const std::string nk = "NDCG@" + std::to_string(report.cutoff_k);
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %8s %8s %8s %8s\n", "query", "AP", pk.c_str(), nk.c_str(), "AQWV");
    std::string out = line;
    auto row = [&](const QueryMetrics& m) {
        std::snprintf(line, sizeof line, "%-16s %8s %8s %8s %8s\n", m.query_id.c_str(), fmt(m.ap).c_str(),
                      fmt(m.precision).c_str(), fmt(m.ndcg).c_str(), fmt(m.aqwv).c_str());
        out += line;
    };
    for (const auto& m : report.per_query) row(m);
    row(report.mean);
    out += "queries=" + std::to_string(report.per_query.size()) + " beta=" + fmt(report.beta) +
           " threshold=" + fmt(report.threshold) + "\n";
    return out;
}

std::string format_report_jsonl(const EvalReport& report) {
    std::string out;
    auto obj = [&](const QueryMetrics& m) {
        nlohmann::ordered_json j;
        j["query"] = m.query_id;
        j["ap"] = m.ap;
        j["p_at_k"] = m.precision;
        j["ndcg_at_k"] = m.ndcg;
        j["aqwv"] = m.aqwv;
        return j;
    };
    for (const auto& m : report.per_query) out += obj(m).dump() + "\n";
    auto summary = obj(report.mean);
    summary["map"] = report.mean.ap;
    summary["queries"] = report.per_query.size();
    summary["k"] = report.cutoff_k;
    summary["beta"] = report.beta;
    summary["threshold"] = json_number(report.threshold);
    out += summary.dump() + "\n";
    return out;
}

}  // namespace clir

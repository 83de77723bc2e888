#pragma once

// Slow reference implementations used only by tests. They work from raw token
// sequences and never touch the library's index or scoring code.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "clir/corpus.hpp"

namespace oracle {

struct Doc {
    std::string id;
    clir::TokenSeq terms;
};

/// QL with Dirichlet smoothing for a bag of (term, weight) pairs; terms absent from the collection are skipped.
inline double ql(const std::vector<std::pair<clir::Token, double>>& query, const Doc& doc, const std::vector<Doc>& all,
                 double mu) {
    double total = 0;
    for (const auto& d : all) total += static_cast<double>(d.terms.size());
    double score = 0;
    for (const auto& [term, w] : query) {
        double cf = 0;
        for (const auto& d : all) cf += static_cast<double>(std::count(d.terms.begin(), d.terms.end(), term));
        if (cf == 0) continue;
        const double tf = static_cast<double>(std::count(doc.terms.begin(), doc.terms.end(), term));
        score += w * std::log((tf + mu * (cf / total)) / (static_cast<double>(doc.terms.size()) + mu));
    }
    return score;
}

/// Every document scored when at least one query term occurs in the collection, else nothing;
/// sorted by (score desc, id asc) and cut at k.
inline std::vector<std::pair<std::string, double>> rank(const std::vector<std::pair<clir::Token, double>>& query,
                                                        const std::vector<Doc>& all, double mu, std::size_t k) {
    std::vector<std::pair<std::string, double>> out;
    bool any = false;
    for (const auto& d : all)
        for (const auto& [term, w] : query)
            if (std::find(d.terms.begin(), d.terms.end(), term) != d.terms.end()) any = true;
    if (!any) return out;
    for (const auto& d : all) out.emplace_back(d.id, ql(query, d, all, mu));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (out.size() > k) out.resize(k);
    return out;
}

/// Average precision from a ranked list of doc ids and a grade map.
inline bool relevant(const std::map<std::string, int>& grades, const std::string& doc) {
    auto it = grades.find(doc);
    return it != grades.end() && it->second >= 1;
}

inline std::size_t num_relevant(const std::map<std::string, int>& grades) {
    std::size_t r = 0;
    for (const auto& kv : grades) r += kv.second >= 1;
    return r;
}

/// Precision recounted from scratch at every relevant rank.
inline double average_precision(const std::vector<std::string>& ranked, const std::map<std::string, int>& grades) {
    const std::size_t r = num_relevant(grades);
    if (r == 0) return 0;
    double sum = 0;
    for (std::size_t cut = 1; cut <= ranked.size(); ++cut) {
        if (!relevant(grades, ranked[cut - 1])) continue;
        std::size_t in_top = 0;
        for (std::size_t j = 0; j < cut; ++j) in_top += relevant(grades, ranked[j]);
        sum += static_cast<double>(in_top) / static_cast<double>(cut);
    }
    return sum / static_cast<double>(r);
}

inline double precision_at(const std::vector<std::string>& ranked, const std::map<std::string, int>& grades,
                           std::size_t k) {
    std::set<std::string> top(ranked.begin(), ranked.begin() + static_cast<long>(std::min(k, ranked.size())));
    std::size_t hits = 0;
    for (const auto& d : top) hits += relevant(grades, d);
    return static_cast<double>(hits) / static_cast<double>(k);
}

/// Ideal ordering built by repeatedly taking the largest remaining grade.
inline double ndcg_at(const std::vector<std::string>& ranked, const std::map<std::string, int>& grades, std::size_t k) {
    auto gain = [](int g) { return g >= 1 ? std::pow(2.0, g) - 1.0 : 0.0; };
    auto discount = [](std::size_t rank) { return std::log(static_cast<double>(rank) + 1.0) / std::log(2.0); };
    double dcg = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
        auto it = grades.find(ranked[i]);
        dcg += gain(it == grades.end() ? 0 : it->second) / discount(i + 1);
    }
    std::vector<int> pool;
    for (const auto& kv : grades) pool.push_back(kv.second);
    double idcg = 0;
    for (std::size_t rank = 1; rank <= k && !pool.empty(); ++rank) {
        auto best = std::max_element(pool.begin(), pool.end());
        idcg += gain(*best) / discount(rank);
        pool.erase(best);
    }
    return idcg == 0 ? 0 : dcg / idcg;
}

/// One query's 1 - P_miss - beta * P_FA from explicit returned / relevant sets.
inline double query_value(const std::vector<std::pair<std::string, double>>& scored,
                          const std::map<std::string, int>& grades, std::size_t n_docs, double beta,
                          double threshold) {
    std::set<std::string> returned, rel;
    for (const auto& [d, s] : scored)
        if (s >= threshold) returned.insert(d);
    for (const auto& [d, g] : grades)
        if (g >= 1) rel.insert(d);
    if (rel.empty()) return 0;
    std::size_t missed = 0, false_alarms = 0;
    for (const auto& d : rel) missed += !returned.count(d);
    for (const auto& d : returned) false_alarms += !rel.count(d);
    const double p_fa = n_docs == rel.size() ? 0.0 : static_cast<double>(false_alarms) / static_cast<double>(n_docs - rel.size());
    return 1.0 - static_cast<double>(missed) / static_cast<double>(rel.size()) - beta * p_fa;
}

inline std::vector<std::vector<std::vector<double>>> conv2d(const std::vector<std::vector<double>>& img,
                                                            const std::vector<std::vector<std::vector<double>>>& kernels,
                                                            const std::vector<double>& bias, bool same) {
    const int h = static_cast<int>(img.size()), w = static_cast<int>(img[0].size());
    std::vector<std::vector<std::vector<double>>> out;
    for (std::size_t f = 0; f < kernels.size(); ++f) {
        const int kh = static_cast<int>(kernels[f].size()), kw = static_cast<int>(kernels[f][0].size());
        const int top = same ? (kh - 1) / 2 : 0, left = same ? (kw - 1) / 2 : 0;
        const int oh = same ? h : h - kh + 1, ow = same ? w : w - kw + 1;
        std::vector<std::vector<double>> o(oh, std::vector<double>(ow, bias[f]));
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j) {
                        const int yy = y + i - top, xx = x + j - left;
                        if (yy >= 0 && yy < h && xx >= 0 && xx < w) o[y][x] += kernels[f][i][j] * img[yy][xx];
                    }
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace oracle

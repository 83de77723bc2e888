#include "clir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "clir/error.hpp"
#include "clir/log.hpp"
#include "clir/tensor_io.hpp"

namespace clir {

IndexSide parse_index_side(const std::string& name) {
    if (name == "original") return IndexSide::original;
    if (name == "translated") return IndexSide::translated;
    throw UsageError("unknown index side \"" + name + "\" (expected original or translated)");
}

std::string to_string(IndexSide side) { return side == IndexSide::original ? "original" : "translated"; }

std::uint32_t InvertedIndex::doc_number(const std::string& doc_id) const {
    auto it = doc_index_.find(doc_id);
    if (it == doc_index_.end()) throw DataError("unknown document " + doc_id);
    return it->second;
}

const std::vector<Posting>& InvertedIndex::postings(const Token& term) const {
    static const std::vector<Posting> empty;
    auto it = postings_.find(term);
    return it == postings_.end() ? empty : it->second;
}

std::uint32_t InvertedIndex::tf(const Token& term, std::uint32_t doc) const {
    const auto& list = postings(term);
    auto it = std::lower_bound(list.begin(), list.end(), doc, [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    return it != list.end() && it->doc == doc ? it->tf : 0;
}

InvertedIndex build_index(const Corpus& corpus, IndexSide side) {
    if (corpus.empty()) throw DataError("cannot index an empty corpus");
    const Corpus view = side == IndexSide::original ? corpus : swap_sides(corpus);
    bool any_terms = false;
    for (const auto& d : view) any_terms = any_terms || !d.terms.empty();
    if (!any_terms) throw DataError("every document has an empty " + to_string(side) + " side");

    InvertedIndex idx;
    idx.side_ = side;
    std::vector<std::size_t> order(view.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return view[a].id < view[b].id; });

    idx.doc_ids_.reserve(view.size());
    idx.doc_len_.reserve(view.size());
    for (std::size_t i : order) {
        const auto& d = view[i];
        const auto doc = static_cast<std::uint32_t>(idx.doc_ids_.size());
        idx.doc_ids_.push_back(d.id);
        idx.doc_len_.push_back(d.terms.size());
        idx.doc_index_.emplace(d.id, doc);
        std::map<Token, std::uint32_t> counts;
        for (const auto& t : d.terms) ++counts[t];
        for (const auto& [t, c] : counts) idx.postings_[t].push_back({doc, c});
    }
    idx.stats_ = collection_stats(view);
    return idx;
}

std::vector<std::pair<Token, double>> WeightedQuery::entries() const {
    std::vector<std::pair<Token, double>> out;
    for (const auto& c : clauses)
        for (const auto& [t, p] : c.alternatives) out.emplace_back(t, c.weight * p);
    return out;
}

WeightedQuery plain_query(const TokenSeq& terms) {
    WeightedQuery q;
    for (const auto& t : terms) q.clauses.push_back({1.0, {{t, 1.0}}});
    return q;
}

void TranslationTable::add(const Token& source, const Token& target, double prob) {
    table_[source].emplace_back(target, prob);
}

const std::vector<std::pair<Token, double>>* TranslationTable::find(const Token& source) const {
    auto it = table_.find(source);
    return it == table_.end() ? nullptr : &it->second;
}

void TranslationTable::validate() const {
    for (const auto& [src, alts] : table_) {
        double sum = 0.0;
        for (const auto& [t, p] : alts) {
            if (!(p > 0.0 && p <= 1.0)) throw DataError("translation probability for " + src + " -> " + t + " outside (0,1]");
            sum += p;
        }
        if (sum > 1.0 + 1e-9) throw DataError("translation probabilities for " + src + " sum to more than 1");
    }
}

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        pos = nl + 1;
    }
    return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    for (;;) {
        std::size_t tab = line.find('\t', pos);
        if (tab == std::string_view::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
}

std::string format_score(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

TranslationTable parse_translation_table(std::string_view text, const std::string& source) {
    TranslationTable table;
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split_tabs(lines[i]);
        const std::string where = source + ":" + std::to_string(i + 1);
        if (f.size() != 3) throw DataError(where + ": expected \"source<TAB>target<TAB>prob\"");
        std::string ptxt(f[2]);
        char* end = nullptr;
        const double p = std::strtod(ptxt.c_str(), &end);
        if (ptxt.empty() || end != ptxt.c_str() + ptxt.size()) throw DataError(where + ": bad probability \"" + ptxt + "\"");
        table.add(std::string(f[0]), std::string(f[1]), p);
    }
    table.validate();
    return table;
}

TranslationTable load_translation_table(const std::string& path) { return parse_translation_table(read_file(path), path); }

BilingualDictionary parse_dictionary(std::string_view text, const std::string& source) {
    BilingualDictionary dict;
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split_tabs(lines[i]);
        if (f.size() != 2) throw DataError(source + ":" + std::to_string(i + 1) + ": expected \"source<TAB>target\"");
        auto& alts = dict[std::string(f[0])];
        std::string tgt(f[1]);
        if (std::find(alts.begin(), alts.end(), tgt) == alts.end()) alts.push_back(std::move(tgt));
    }
    return dict;
}

BilingualDictionary load_dictionary(const std::string& path) { return parse_dictionary(read_file(path), path); }

WeightedQuery translate_query_dbqt(const TokenSeq& query, const BilingualDictionary& dict) {
    WeightedQuery out;
    for (const auto& term : query) {
        auto it = dict.find(term);
        if (it == dict.end()) continue;
        for (const auto& t : it->second) out.clauses.push_back({1.0, {{t, 1.0}}});
    }
    return out;
}

WeightedQuery expand_query_psq(const TokenSeq& query, const TranslationTable& table) {
    WeightedQuery out;
    for (const auto& term : query) {
        const auto* alts = table.find(term);
        if (!alts || alts->empty()) continue;
        out.clauses.push_back({1.0, *alts});
    }
    return out;
}

double expected_tf(const QueryClause& clause, const InvertedIndex& index, std::uint32_t doc) {
    double tf = 0.0;
    for (const auto& [t, p] : clause.alternatives) tf += p * static_cast<double>(index.tf(t, doc));
    return tf;
}

double expected_cf(const QueryClause& clause, const CollectionStats& stats) {
    double cf = 0.0;
    for (const auto& [t, p] : clause.alternatives) cf += p * static_cast<double>(stats.collection_frequency(t));
    return cf;
}

namespace {

double clause_term(double weight, double tf, double cf, double doc_len, double total_terms, double mu) {
    return weight * std::log((tf + mu * (cf / total_terms)) / (doc_len + mu));
}

}  // namespace

double ql_score(const WeightedQuery& query, std::uint32_t doc, const InvertedIndex& index, double mu) {
    if (!(mu > 0.0)) throw UsageError("Dirichlet mu must be positive");
    if (doc >= index.num_docs()) throw DataError("unknown document number " + std::to_string(doc));
    const auto& stats = index.stats();
    const double total = static_cast<double>(stats.total_terms);
    const double len = static_cast<double>(index.doc_len(doc));
    double score = 0.0;
    for (const auto& clause : query.clauses) {
        const double cf = expected_cf(clause, stats);
        if (cf <= 0.0) continue;
        score += clause_term(clause.weight, expected_tf(clause, index, doc), cf, len, total, mu);
    }
    return score;
}

double ql_score(const WeightedQuery& query, const std::string& doc_id, const InvertedIndex& index, double mu) {
    return ql_score(query, index.doc_number(doc_id), index, mu);
}

void sort_ranked(std::vector<ScoredDoc>& entries) { std::sort(entries.begin(), entries.end(), ranks_before); }

RankedList retrieve_topk(const InvertedIndex& index, const WeightedQuery& query, std::size_t k, double mu,
                         const std::string& query_id) {
    if (k < 1) throw UsageError("retrieve_topk: k must be >= 1");
    if (!(mu > 0.0)) throw UsageError("Dirichlet mu must be positive");
    RankedList out{query_id, {}};
    if (query.empty()) return out;

    const auto& stats = index.stats();
    const double total = static_cast<double>(stats.total_terms);

    // Distinct terms with postings; each clause refers to them by slot.
    std::vector<Token> terms;
    std::unordered_map<Token, std::size_t> slot;
    struct Prepared {
        double weight;
        double cf;
        std::vector<std::pair<std::size_t, double>> alts;
    };
    std::vector<Prepared> clauses;
    for (const auto& c : query.clauses) {
        const double cf = expected_cf(c, stats);
        if (cf <= 0.0) continue;
        Prepared p{c.weight, cf, {}};
        for (const auto& [t, prob] : c.alternatives) {
            auto [it, inserted] = slot.emplace(t, terms.size());
            if (inserted) terms.push_back(t);
            p.alts.emplace_back(it->second, prob);
        }
        clauses.push_back(std::move(p));
    }
    if (clauses.empty()) return out;

    std::vector<const std::vector<Posting>*> lists(terms.size());
    std::vector<std::size_t> cursor(terms.size(), 0);
    for (std::size_t i = 0; i < terms.size(); ++i) lists[i] = &index.postings(terms[i]);

    auto worse = [](const ScoredDoc& a, const ScoredDoc& b) { return ranks_before(a, b); };
    std::priority_queue<ScoredDoc, std::vector<ScoredDoc>, decltype(worse)> heap(worse);
    std::vector<double> tf(terms.size());

    // Every document is scored once any clause occurs in the collection: those matching
    // no query term still receive the smoothed background probability. Postings are
    // walked in step with the document numbers.
    const auto n_docs = static_cast<std::uint32_t>(index.num_docs());
    for (std::uint32_t doc = 0; doc < n_docs; ++doc) {
        for (std::size_t i = 0; i < terms.size(); ++i) {
            if (cursor[i] < lists[i]->size() && (*lists[i])[cursor[i]].doc == doc) {
                tf[i] = static_cast<double>((*lists[i])[cursor[i]].tf);
                ++cursor[i];
            } else {
                tf[i] = 0.0;
            }
        }
        const double len = static_cast<double>(index.doc_len(doc));
        double score = 0.0;
        for (const auto& c : clauses) {
            double ctf = 0.0;
            for (const auto& [s, prob] : c.alts) ctf += prob * tf[s];
            score += clause_term(c.weight, ctf, c.cf, len, total, mu);
        }
        ScoredDoc sd{index.doc_id(doc), score};
        if (heap.size() < k) {
            heap.push(std::move(sd));
        } else if (ranks_before(sd, heap.top())) {
            heap.pop();
            heap.push(std::move(sd));
        }
    }
    out.entries.reserve(heap.size());
    while (!heap.empty()) {
        out.entries.push_back(heap.top());
        heap.pop();
    }
    sort_ranked(out.entries);
    return out;
}

std::string format_run(const Run& run, const std::string& tag) {
    std::string out;
    for (const auto& [qid, list] : run) {
        for (std::size_t r = 0; r < list.entries.size(); ++r) {
            const auto& e = list.entries[r];
            out += qid + " Q0 " + e.doc_id + " " + std::to_string(r + 1) + " " + format_score(e.score) + " " + tag + "\n";
        }
    }
    return out;
}

void save_run(const Run& run, const std::string& tag, const std::string& path) { write_file(path, format_run(run, tag)); }

Run parse_run(std::string_view text, const std::string& source) {
    Run run;
    std::map<std::string, std::set<std::string>> seen;
    auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::istringstream in{std::string(lines[i])};
        std::string qid, q0, doc, rank, score_text, tag;
        if (!(in >> qid)) continue;
        const std::string where = source + ":" + std::to_string(i + 1);
        if (!(in >> q0 >> doc >> rank >> score_text >> tag)) throw DataError(where + ": expected \"qid Q0 docid rank score tag\"");
        char* end = nullptr;
        const double score = std::strtod(score_text.c_str(), &end);
        if (end != score_text.c_str() + score_text.size() || !std::isfinite(score)) {
            throw DataError(where + ": bad score \"" + score_text + "\"");
        }
        if (!seen[qid].insert(doc).second) {
            warn(where + ": duplicate document " + doc + " for query " + qid + ", keeping first");
            continue;
        }
        auto& list = run[qid];
        list.query_id = qid;
        list.entries.push_back({doc, score});
    }
    for (auto& [qid, list] : run) sort_ranked(list.entries);
    return run;
}

Run load_run(const std::string& path) { return parse_run(read_file(path), path); }

std::string index_to_json(const InvertedIndex& index) {
    nlohmann::ordered_json j;
    j["side"] = to_string(index.side());
    j["n_docs"] = index.num_docs();
    j["total_terms"] = index.stats().total_terms;
    j["avg_doc_len"] = index.stats().avg_doc_len;
    nlohmann::ordered_json docs = nlohmann::ordered_json::array();
    for (std::uint32_t d = 0; d < index.num_docs(); ++d) docs.push_back({index.doc_id(d), index.doc_len(d)});
    j["docs"] = std::move(docs);
    std::map<Token, const std::vector<Posting>*> sorted;
    for (const auto& [t, list] : index.all_postings()) sorted.emplace(t, &list);
    nlohmann::ordered_json postings = nlohmann::ordered_json::object();
    for (const auto& [t, list] : sorted) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& p : *list) arr.push_back({p.doc, p.tf});
        postings[t] = std::move(arr);
    }
    j["postings"] = std::move(postings);
    return dump_json(j);
}

InvertedIndex index_from_json(std::string_view text, const std::string& source) {
    InvertedIndex idx;
    try {
        const auto j = nlohmann::json::parse(text);
        idx.side_ = parse_index_side(j.at("side").get<std::string>());
        for (const auto& d : j.at("docs")) {
            const auto doc = static_cast<std::uint32_t>(idx.doc_ids_.size());
            idx.doc_ids_.push_back(d.at(0).get<std::string>());
            idx.doc_len_.push_back(d.at(1).get<std::size_t>());
            if (!idx.doc_index_.emplace(idx.doc_ids_.back(), doc).second)
                throw DataError("duplicate document " + idx.doc_ids_.back());
        }
        std::vector<std::size_t> len_check(idx.doc_ids_.size(), 0);
        for (const auto& [term, list] : j.at("postings").items()) {
            auto& out = idx.postings_[term];
            std::size_t cf = 0;
            for (const auto& p : list) {
                const auto doc = p.at(0).get<std::uint32_t>();
                const auto tf = p.at(1).get<std::uint32_t>();
                if (doc >= idx.doc_ids_.size() || tf == 0 || (!out.empty() && out.back().doc >= doc))
                    throw DataError("bad posting for term '" + term + "'");
                out.push_back({doc, tf});
                cf += tf;
                len_check[doc] += tf;
            }
            idx.stats_.cf[term] = cf;
            idx.stats_.df[term] = out.size();
        }
        for (std::size_t d = 0; d < len_check.size(); ++d)
            if (len_check[d] != idx.doc_len_[d]) throw DataError("postings disagree with the length of " + idx.doc_ids_[d]);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(source + ": malformed index: " + e.what());
    } catch (const DataError& e) {
        throw DataError(source + ": " + e.what());
    }
    idx.stats_.n_docs = idx.doc_ids_.size();
    for (std::size_t len : idx.doc_len_) idx.stats_.total_terms += len;
    idx.stats_.avg_doc_len =
        idx.stats_.n_docs ? static_cast<double>(idx.stats_.total_terms) / static_cast<double>(idx.stats_.n_docs) : 0.0;
    return idx;
}

InvertedIndex load_index(const std::string& path) { return index_from_json(read_file(path), path); }

}  // namespace clir

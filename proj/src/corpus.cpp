#include "clir/corpus.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "clir/error.hpp"
#include "clir/log.hpp"

namespace clir {

namespace {

std::mutex g_log_mutex;
LogSink g_sink = [](const std::string& line) { std::cerr << line << '\n'; };

bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }

}  // namespace

LogSink set_log_sink(LogSink sink) {
    std::lock_guard lock(g_log_mutex);
    std::swap(g_sink, sink);
    return sink;
}

void warn(const std::string& msg) {
    std::lock_guard lock(g_log_mutex);
    if (g_sink) g_sink("warning: " + msg);
}

void info(const std::string& msg) {
    std::lock_guard lock(g_log_mutex);
    if (g_sink) g_sink(msg);
}

TokenSeq tokenize(std::string_view text) {
    TokenSeq out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        std::size_t b = i, e = j;
        while (b < e && is_punct(static_cast<unsigned char>(text[b]))) ++b;
        while (e > b && is_punct(static_cast<unsigned char>(text[e - 1]))) --e;
        if (e > b) {
            std::string tok(text.substr(b, e - b));
            // ASCII folding only; multi-byte UTF-8 sequences pass through unchanged.
            for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            out.push_back(std::move(tok));
        }
        i = j;
    }
    return out;
}

std::string join_tokens(const TokenSeq& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

template <typename Record>
RecordSet<Record>::RecordSet(std::vector<Record> records) : records_(std::move(records)) {
    by_id_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (!by_id_.emplace(records_[i].id, i).second) {
            throw DataError("duplicate id " + records_[i].id);
        }
    }
}

template <typename Record>
const Record* RecordSet<Record>::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &records_[it->second];
}

template <typename Record>
const Record& RecordSet<Record>::at(const std::string& id) const {
    const Record* r = find(id);
    if (!r) throw DataError("unknown id " + id);
    return *r;
}

template class RecordSet<BilingualDocument>;
template class RecordSet<BilingualQuery>;

Corpus swap_sides(const Corpus& corpus) {
    std::vector<BilingualDocument> docs;
    docs.reserve(corpus.size());
    for (const auto& d : corpus) {
        docs.push_back({d.id, d.lang, d.translated_terms, d.terms});
    }
    return Corpus(std::move(docs));
}

double CollectionStats::idf(const Token& term) const {
    auto it = df.find(term);
    if (it == df.end()) return std::log(static_cast<double>(n_docs) + 1.0);
    return std::log(static_cast<double>(n_docs) / static_cast<double>(it->second));
}

std::size_t CollectionStats::collection_frequency(const Token& term) const {
    auto it = cf.find(term);
    return it == cf.end() ? 0 : it->second;
}

CollectionStats collection_stats(const Corpus& corpus) {
    if (corpus.empty()) throw DataError("collection statistics of an empty corpus");
    CollectionStats s;
    s.n_docs = corpus.size();
    for (const auto& d : corpus) {
        s.total_terms += d.terms.size();
        std::unordered_map<Token, bool> seen;
        for (const auto& t : d.terms) {
            ++s.cf[t];
            if (seen.emplace(t, true).second) ++s.df[t];
        }
    }
    s.avg_doc_len = static_cast<double>(s.total_terms) / static_cast<double>(s.n_docs);
    return s;
}

bool RelevanceJudgments::set(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0) throw DataError("negative grade for " + query_id + "/" + doc_id);
    auto [it, inserted] = judgments_[query_id].insert_or_assign(doc_id, grade);
    (void)it;
    return inserted;
}

const int* RelevanceJudgments::grade(const std::string& query_id, const std::string& doc_id) const {
    auto q = judgments_.find(query_id);
    if (q == judgments_.end()) return nullptr;
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? nullptr : &d->second;
}

bool RelevanceJudgments::is_relevant(const std::string& query_id, const std::string& doc_id) const {
    const int* g = grade(query_id, doc_id);
    return g && *g >= 1;
}

std::size_t RelevanceJudgments::num_relevant(const std::string& query_id) const {
    const auto* q = for_query(query_id);
    if (!q) return 0;
    std::size_t n = 0;
    for (const auto& [doc, g] : *q) n += g >= 1 ? 1 : 0;
    return n;
}

const std::map<std::string, int>* RelevanceJudgments::for_query(const std::string& query_id) const {
    auto q = judgments_.find(query_id);
    return q == judgments_.end() ? nullptr : &q->second;
}

std::size_t RelevanceJudgments::size() const {
    std::size_t n = 0;
    for (const auto& [q, docs] : judgments_) n += docs.size();
    return n;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("write failed for " + path);
}

namespace {

struct RawRecord {
    std::string id, lang;
    TokenSeq terms, translated;
};

std::vector<RawRecord> parse_jsonl(std::string_view text, const std::string& source) {
    std::vector<RawRecord> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        ++line_no;
        pos = nl + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            if (nl == text.size()) break;
            continue;
        }
        auto fail = [&](const std::string& why) {
            return DataError(source + ":" + std::to_string(line_no) + ": " + why);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw fail(std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) throw fail("expected a JSON object");
        for (const char* key : {"id", "lang", "text"}) {
            if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string field \"") + key + "\"");
        }
        RawRecord r;
        r.id = j["id"].get<std::string>();
        r.lang = j["lang"].get<std::string>();
        r.terms = tokenize(j["text"].get<std::string>());
        if (j.contains("translation")) {
            if (!j["translation"].is_string()) throw fail("\"translation\" must be a string");
            r.translated = tokenize(j["translation"].get<std::string>());
        }
        if (r.id.empty()) throw fail("empty id");
        if (r.terms.empty()) throw fail("record " + r.id + " has no terms");
        out.push_back(std::move(r));
        if (nl == text.size()) break;
    }
    return out;
}

template <typename Record>
RecordSet<Record> to_records(std::vector<RawRecord> raw) {
    std::vector<Record> recs;
    recs.reserve(raw.size());
    for (auto& r : raw) {
        recs.push_back({std::move(r.id), std::move(r.lang), std::move(r.terms), std::move(r.translated)});
    }
    return RecordSet<Record>(std::move(recs));
}

template <typename Record>
std::string to_jsonl(const RecordSet<Record>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["lang"] = r.lang;
        j["text"] = join_tokens(r.terms);
        if (!r.translated_terms.empty()) j["translation"] = join_tokens(r.translated_terms);
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

}  // namespace

Corpus parse_documents(std::string_view text, const std::string& source) {
    return to_records<BilingualDocument>(parse_jsonl(text, source));
}

QuerySet parse_queries(std::string_view text, const std::string& source) {
    return to_records<BilingualQuery>(parse_jsonl(text, source));
}

Corpus load_documents(const std::string& path) { return parse_documents(read_file(path), path); }
QuerySet load_queries(const std::string& path) { return parse_queries(read_file(path), path); }

RelevanceJudgments parse_qrels(std::string_view text, const std::string& source) {
    RelevanceJudgments qrels;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string qid, iter, doc, grade_text, extra;
        if (!(fields >> qid)) continue;
        if (!(fields >> iter >> doc >> grade_text) || (fields >> extra)) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected \"qid 0 docid grade\"");
        }
        std::size_t used = 0;
        int grade = 0;
        try {
            grade = std::stoi(grade_text, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != grade_text.size() || used == 0) {
            throw DataError(source + ":" + std::to_string(line_no) + ": non-integer grade \"" + grade_text + "\"");
        }
        if (grade < 0) throw DataError(source + ":" + std::to_string(line_no) + ": negative grade");
        if (!qrels.set(qid, doc, grade)) {
            warn(source + ":" + std::to_string(line_no) + ": repeated judgment for " + qid + " " + doc + ", last value wins");
        }
    }
    return qrels;
}

RelevanceJudgments load_qrels(const std::string& path) { return parse_qrels(read_file(path), path); }

void save_documents(const Corpus& corpus, const std::string& path) { write_file(path, to_jsonl(corpus)); }
void save_queries(const QuerySet& queries, const std::string& path) { write_file(path, to_jsonl(queries)); }

void save_qrels(const RelevanceJudgments& qrels, const std::string& path) {
    std::string out;
    for (const auto& [q, docs] : qrels.all()) {
        for (const auto& [d, g] : docs) out += q + " 0 " + d + " " + std::to_string(g) + "\n";
    }
    write_file(path, out);
}

}  // namespace clir

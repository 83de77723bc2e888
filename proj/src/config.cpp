#include "clir/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "clir/corpus.hpp"
#include "clir/error.hpp"

namespace clir {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw UsageError("config key " + key + ": '" + value + "' is not " + expected);
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema{
        {"experiment.seed", "", "seed for every random choice (required)"},

        {"paths.out_dir", "", "gen-synth output directory"},
        {"paths.docs", "", "documents (JSONL)"},
        {"paths.queries", "", "queries to search, rerank or evaluate (JSONL)"},
        {"paths.train_queries", "", "training queries (JSONL)"},
        {"paths.dev_queries", "", "development queries (JSONL)"},
        {"paths.qrels", "", "relevance judgments"},
        {"paths.source_embeddings", "", "source-language vectors (.vec)"},
        {"paths.target_embeddings", "", "target-language vectors (.vec)"},
        {"paths.alignment", "", "alignment map applied to the target vectors"},
        {"paths.lexicon", "", "seed lexicon for align (TSV)"},
        {"paths.test_lexicon", "", "held-out lexicon for align (TSV)"},
        {"paths.index", "", "index written by index, read by search"},
        {"paths.dictionary", "", "bilingual dictionary for dbqt search (TSV)"},
        {"paths.translation_table", "", "translation table for psq search"},
        {"paths.run", "", "first-stage or evaluated run (TREC)"},
        {"paths.cutoff_run", "", "run used to pick the AQWV cutoff (defaults to paths.run)"},
        {"paths.checkpoint", "", "checkpoint written by train, read by rerank"},
        {"paths.checkpoints", "", "comma-separated checkpoints for ensemble"},
        {"paths.output", "", "primary output file of the command"},

        {"retrieval.mu", "1000", "Dirichlet smoothing pseudo-count"},
        {"retrieval.k", "100", "documents kept per query"},
        {"retrieval.mode", "ql", "ql, dbqt or psq"},
        {"retrieval.side", "translated", "document side indexed: original or translated"},
        {"retrieval.tag", "", "run tag (defaults to the mode)"},

        {"align.iters", "5", "Procrustes refinement rounds"},
        {"align.method", "nn", "dictionary induction: nn or csls"},
        {"align.csls_k", "10", "CSLS neighbourhood size"},

        {"ranker.arch", "posit-drmm", "posit-drmm, pacrr or pacrr-drmm"},
        {"ranker.embed_dim", "50", "embedding dimension"},
        {"ranker.k_pool", "0", "k-max pooling size (0 = architecture default)"},
        {"ranker.filter_sizes", "1,2,3", "PACRR n-gram filter sizes"},
        {"ranker.filters_per_size", "32", "PACRR filters per size"},
        {"ranker.l_q", "8", "PACRR query length"},
        {"ranker.l_d", "300", "PACRR document length"},
        {"ranker.dropout", "0.3", "dropout rate"},
        {"ranker.bilingual", "true", "four components (true) or the single Q-Dhat component"},
        {"ranker.share_components", "false", "one parameter set for all components"},
        {"ranker.term_mlp_hidden", "8", "POSIT-DRMM term scorer width"},
        {"ranker.pacrr_mlp_hidden", "32", "PACRR scorer width"},
        {"ranker.row_mlp_hidden", "8", "PACRR-DRMM row scorer width"},

        {"train.lr", "0.001", "Adam learning rate"},
        {"train.epochs", "20", "training epochs"},
        {"train.batch_size", "32", "examples per minibatch"},
        {"train.feature_channel", "q-dhat", "feature channel: q-dhat or qhat-d"},

        {"eval.k", "20", "rank cutoff for P@k and NDCG@k"},
        {"eval.beta", "40", "AQWV false-alarm weight"},
        {"eval.cutoff", "dev", "AQWV threshold: dev, in-split or fixed"},
        {"eval.threshold", "", "fixed AQWV threshold for eval.cutoff = fixed"},

        {"synth.n_docs", "500", "documents"},
        {"synth.n_queries", "100", "queries (one per topic)"},
        {"synth.vocab_size", "2000", "vocabulary size per language"},
        {"synth.embed_dim", "50", "embedding dimension"},
        {"synth.doc_len_min", "30", "shortest document"},
        {"synth.doc_len_max", "60", "longest document"},
        {"synth.world_seed", "", "seed of the shared source world (defaults to experiment.seed)"},
        {"synth.source_lang", "en", "source language code"},
        {"synth.target_lang", "xa", "target language code"},
        {"synth.n_train", "50", "training queries"},
        {"synth.n_dev", "25", "development queries"},
        {"synth.n_test", "25", "test queries"},
        {"synth.noise", "0", "fraction of translated tokens replaced at random"},
        {"synth.test_lexicon_fraction", "0.2", "share of the gold lexicon held out for align"},
    };
    return schema;
}

Config::Config() {
    for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

Config Config::parse(std::string_view text, const std::string& source) {
    Config c;
    c.merge(text, source);
    return c;
}

Config Config::load(const std::string& path) { return parse(read_file(path), path); }

void Config::merge(std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos)
            throw UsageError(source + ":" + std::to_string(line_no) + ": expected \"section.key = value\"");
        try {
            set(trim(std::string_view(content).substr(0, eq)), trim(std::string_view(content).substr(eq + 1)));
        } catch (const UsageError& e) {
            throw UsageError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    if (value.find('\n') != std::string::npos) throw UsageError("config key " + key + ": value spans lines");
    it->second = value;
}

void Config::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + assignment + "'");
    set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

bool Config::has(const std::string& key) const { return !raw(key).empty(); }

const std::string& Config::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
}

const std::string& Config::require(const std::string& key) const {
    const std::string& v = raw(key);
    if (v.empty()) throw UsageError("missing required setting " + key + " (use --" + key + " or --set " + key + "=...)");
    return v;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = require(key);
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x)) bad_value(key, v, "a finite number");
    return x;
}

std::uint64_t Config::get_u64(const std::string& key) const {
    const std::string& v = require(key);
    std::uint64_t x = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
    return x;
}

std::size_t Config::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

bool Config::get_bool(const std::string& key) const {
    const std::string& v = require(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(raw(key));
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::size_t> Config::get_size_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : get_list(key)) {
        std::size_t x = 0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (ec != std::errc() || ptr != item.data() + item.size()) bad_value(key, raw(key), "a list of integers");
        out.push_back(x);
    }
    if (out.empty()) bad_value(key, raw(key), "a non-empty list of integers");
    return out;
}

std::optional<double> Config::get_optional_double(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return get_double(key);
}

std::string Config::format() const {
    std::string out;
    for (const auto& k : config_schema()) out += k.name + " = " + values_.at(k.name) + "\n";
    return out;
}

nlohmann::ordered_json Config::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& k : config_schema()) j[k.name] = values_.at(k.name);
    return j;
}

}  // namespace clir

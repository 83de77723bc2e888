#include "clir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clir/error.hpp"
#include "clir/random.hpp"

namespace clir {

namespace {

constexpr std::size_t kMinBackground = 50;

std::vector<double> random_unit(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    for (;;) {
        for (double& x : v) x = normal(rng);
        const double n = norm2(v);
        if (n > 1e-8) {
            for (double& x : v) x /= n;
            return v;
        }
    }
}

std::string padded(const std::string& prefix, std::size_t i, std::size_t width) {
    std::string num = std::to_string(i);
    if (num.size() < width) num.insert(0, width - num.size(), '0');
    return prefix + num;
}

struct World {
    std::vector<Token> source_tokens;
    std::vector<std::vector<std::size_t>> topic_words;
    std::vector<std::size_t> background;
    std::vector<double> background_cdf;
    Matrix source_vectors;
};

World make_world(const CipherOptions& opt, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 1));
    World w;
    const std::size_t v = opt.vocab_size, d = opt.embed_dim, t = opt.n_queries;
    const std::size_t width = std::to_string(v - 1).size();
    for (std::size_t i = 0; i < v; ++i) w.source_tokens.push_back(padded("s", i, width));

    std::vector<std::size_t> perm(v);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    w.topic_words.resize(t);
    for (std::size_t k = 0; k < t; ++k) {
        w.topic_words[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(k * opt.words_per_topic),
                                perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * opt.words_per_topic));
    }
    w.background.assign(perm.begin() + static_cast<std::ptrdiff_t>(t * opt.words_per_topic), perm.end());
    // Zipf(1) weights over background ranks.
    double acc = 0.0;
    for (std::size_t r = 0; r < w.background.size(); ++r) {
        acc += 1.0 / static_cast<double>(r + 1);
        w.background_cdf.push_back(acc);
    }
    for (double& c : w.background_cdf) c /= acc;

    w.source_vectors = Matrix(v, d);
    for (std::size_t i : w.background) {
        auto u = random_unit(d, rng);
        std::copy(u.begin(), u.end(), w.source_vectors.row(i).begin());
    }
    for (std::size_t k = 0; k < t; ++k) {
        const auto center = random_unit(d, rng);
        for (std::size_t i : w.topic_words[k]) {
            auto u = random_unit(d, rng);
            std::vector<double> x(d);
            for (std::size_t j = 0; j < d; ++j) x[j] = 0.8 * center[j] + 0.6 * u[j];
            const double n = norm2(x);
            for (std::size_t j = 0; j < d; ++j) w.source_vectors(i, j) = x[j] / n;
        }
    }
    return w;
}

std::size_t sample_background(const World& w, Rng& rng) {
    const double u = uniform01(rng);
    auto it = std::lower_bound(w.background_cdf.begin(), w.background_cdf.end(), u);
    const auto r = std::min<std::size_t>(static_cast<std::size_t>(it - w.background_cdf.begin()), w.background.size() - 1);
    return w.background[r];
}

}  // namespace

std::size_t cipher_vocab_demand(const CipherOptions& opt) {
    return opt.n_queries * opt.words_per_topic + kMinBackground;
}

CipherDataset gen_cipher_dataset(const CipherOptions& opt) {
    if (opt.n_docs == 0 || opt.n_queries == 0 || opt.vocab_size == 0 || opt.embed_dim == 0 || opt.doc_len_min == 0 ||
        opt.words_per_topic == 0 || opt.query_len_min == 0) {
        throw UsageError("synthetic dataset sizes must be positive");
    }
    if (opt.doc_len_max < opt.doc_len_min || opt.query_len_max < opt.query_len_min) {
        throw UsageError("synthetic dataset length ranges are inverted");
    }
    if (opt.query_len_max > opt.words_per_topic) throw UsageError("queries cannot be longer than a topic's vocabulary");
    if (opt.vocab_size < cipher_vocab_demand(opt)) {
        throw DataError("vocab_size " + std::to_string(opt.vocab_size) + " below query vocabulary demand " +
                        std::to_string(cipher_vocab_demand(opt)));
    }
    if (opt.n_docs < opt.n_queries) throw DataError("need at least one document per query topic");
    if (opt.source_lang == opt.target_lang) throw UsageError("source and target languages must differ");

    const World world = make_world(opt, opt.world_seed.value_or(opt.seed));
    const std::size_t v = opt.vocab_size, d = opt.embed_dim;

    Rng cipher_rng(mix_seed(opt.seed, 2));
    std::vector<std::size_t> cipher(v);  // source index -> target index
    std::iota(cipher.begin(), cipher.end(), 0);
    shuffle(cipher, cipher_rng);
    const Matrix rotation = random_orthogonal(d, cipher_rng);

    const std::size_t width = std::to_string(v - 1).size();
    std::vector<Token> target_tokens(v);
    for (std::size_t i = 0; i < v; ++i) target_tokens[i] = padded(opt.target_lang, i, width);
    auto encode = [&](std::size_t src) -> const Token& { return target_tokens[cipher[src]]; };

    CipherDataset out;
    out.rotation = rotation;
    out.source_embeddings = EmbeddingMatrix(world.source_tokens, world.source_vectors);
    // y = R^T x for the twin, so that x = R y.
    Matrix target_vectors(v, d);
    for (std::size_t i = 0; i < v; ++i) {
        auto x = world.source_vectors.row(i);
        auto y = target_vectors.row(cipher[i]);
        for (std::size_t r = 0; r < d; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += rotation(c, r) * x[c];
            y[r] = s;
        }
    }
    out.target_embeddings = EmbeddingMatrix(target_tokens, std::move(target_vectors));
    for (std::size_t i = 0; i < v; ++i) out.gold_lexicon.emplace_back(world.source_tokens[i], encode(i));

    Rng doc_rng(mix_seed(opt.seed, 3));
    const std::size_t n_topics = opt.n_queries;
    std::vector<std::size_t> doc_topic(opt.n_docs);
    std::vector<BilingualDocument> src_docs, tgt_docs;
    const std::size_t doc_width = std::to_string(opt.n_docs - 1).size();
    for (std::size_t j = 0; j < opt.n_docs; ++j) {
        const std::size_t primary = j < n_topics ? j : uniform_index(doc_rng, n_topics);
        std::size_t secondary = primary;
        if (n_topics > 1) {
            secondary = uniform_index(doc_rng, n_topics - 1);
            if (secondary >= primary) ++secondary;
        }
        doc_topic[j] = primary;
        const std::size_t len = opt.doc_len_min + uniform_index(doc_rng, opt.doc_len_max - opt.doc_len_min + 1);
        TokenSeq src, tgt;
        for (std::size_t p = 0; p < len; ++p) {
            const double u = uniform01(doc_rng);
            std::size_t word;
            if (u < opt.primary_share) {
                word = world.topic_words[primary][uniform_index(doc_rng, opt.words_per_topic)];
            } else if (u < opt.primary_share + opt.secondary_share) {
                word = world.topic_words[secondary][uniform_index(doc_rng, opt.words_per_topic)];
            } else {
                word = sample_background(world, doc_rng);
            }
            src.push_back(world.source_tokens[word]);
            tgt.push_back(encode(word));
        }
        const std::string id = padded("d", j, doc_width);
        src_docs.push_back({id, opt.source_lang, src, tgt});
        tgt_docs.push_back({id, opt.target_lang, tgt, src});
    }

    Rng query_rng(mix_seed(opt.seed, 4));
    std::vector<std::size_t> topic_order(n_topics);
    std::iota(topic_order.begin(), topic_order.end(), 0);
    shuffle(topic_order, query_rng);
    std::vector<BilingualQuery> queries;
    const std::size_t q_width = std::to_string(opt.n_queries - 1).size();
    for (std::size_t i = 0; i < opt.n_queries; ++i) {
        const std::size_t topic = topic_order[i];
        const std::size_t len = opt.query_len_min + uniform_index(query_rng, opt.query_len_max - opt.query_len_min + 1);
        std::vector<std::size_t> words = world.topic_words[topic];
        shuffle(words, query_rng);
        TokenSeq src, tgt;
        for (std::size_t p = 0; p < len; ++p) {
            src.push_back(world.source_tokens[words[p]]);
            tgt.push_back(encode(words[p]));
        }
        const std::string qid = padded("q", i, q_width);
        queries.push_back({qid, opt.source_lang, src, tgt});
        for (std::size_t j = 0; j < opt.n_docs; ++j) {
            if (doc_topic[j] == topic) out.qrels.set(qid, src_docs[j].id, 1);
        }
    }

    out.source_docs = Corpus(std::move(src_docs));
    out.target_docs = Corpus(std::move(tgt_docs));
    out.queries = QuerySet(std::move(queries));
    return out;
}

namespace {

template <typename Record>
std::vector<Record> noisy_records(const RecordSet<Record>& records, double rate, const std::vector<Token>& vocab,
                                  std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw UsageError("noise rate must be in [0,1]");
    if (vocab.empty() && rate > 0.0) throw UsageError("noise vocabulary is empty");
    Rng rng(mix_seed(seed, 5));
    std::vector<Record> out(records.begin(), records.end());
    for (auto& r : out) {
        for (auto& t : r.translated_terms) {
            if (uniform01(rng) < rate) t = vocab[uniform_index(rng, vocab.size())];
        }
    }
    return out;
}

}  // namespace

Corpus inject_translation_noise(const Corpus& corpus, double rate, const std::vector<Token>& vocab, std::uint64_t seed) {
    return Corpus(noisy_records(corpus, rate, vocab, seed));
}

QuerySet inject_translation_noise(const QuerySet& queries, double rate, const std::vector<Token>& vocab,
                                  std::uint64_t seed) {
    return QuerySet(noisy_records(queries, rate, vocab, mix_seed(seed, 6)));
}

TranslationTable table_from_lexicon(const Lexicon& lex) {
    TranslationTable t;
    for (const auto& [s, tgt] : lex) t.add(s, tgt, 1.0);
    t.validate();
    return t;
}

BilingualDictionary dictionary_from_lexicon(const Lexicon& lex) {
    BilingualDictionary dict;
    for (const auto& [s, t] : lex) dict[s].push_back(t);
    return dict;
}

QuerySplit split_queries(const QuerySet& queries, std::size_t n_train, std::size_t n_dev, std::size_t n_test) {
    if (n_train + n_dev + n_test > queries.size()) {
        throw UsageError("query split " + std::to_string(n_train) + "/" + std::to_string(n_dev) + "/" +
                         std::to_string(n_test) + " exceeds " + std::to_string(queries.size()) + " queries");
    }
    const auto& all = queries.records();
    auto slice = [&](std::size_t b, std::size_t n) {
        return QuerySet(std::vector<BilingualQuery>(all.begin() + static_cast<std::ptrdiff_t>(b),
                                                    all.begin() + static_cast<std::ptrdiff_t>(b + n)));
    };
    return {slice(0, n_train), slice(n_train, n_dev), slice(n_train + n_dev, n_test)};
}

}  // namespace clir

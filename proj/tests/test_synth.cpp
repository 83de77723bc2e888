#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "clir/error.hpp"
#include "clir/synth.hpp"

using namespace clir;
namespace fs = std::filesystem;

namespace {

CipherOptions small() {
    CipherOptions o;
    o.seed = 7;
    o.n_docs = 60;
    o.n_queries = 12;
    o.vocab_size = 300;
    o.doc_len_min = 10;
    o.doc_len_max = 25;
    o.embed_dim = 16;
    return o;
}

std::string serialize(const CipherDataset& d, const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("clir_synth_" + tag);
    fs::create_directories(dir);
    save_documents(d.source_docs, (dir / "s.jsonl").string());
    save_documents(d.target_docs, (dir / "t.jsonl").string());
    save_queries(d.queries, (dir / "q.jsonl").string());
    save_qrels(d.qrels, (dir / "qrels").string());
    save_embeddings(d.source_embeddings, (dir / "s.vec").string());
    save_embeddings(d.target_embeddings, (dir / "t.vec").string());
    save_lexicon(d.gold_lexicon, (dir / "lex.tsv").string());
    std::string all;
    for (const char* f : {"s.jsonl", "t.jsonl", "q.jsonl", "qrels", "s.vec", "t.vec", "lex.tsv"})
        all += read_file((dir / f).string()) + "\x1f";
    fs::remove_all(dir);
    return all;
}

}  // namespace

TEST(GenCipher, SameSeedIsByteIdentical) {
    auto a = serialize(gen_cipher_dataset(small()), "a");
    auto b = serialize(gen_cipher_dataset(small()), "b");
    EXPECT_EQ(a, b);
    auto other = small();
    other.seed = 8;
    EXPECT_NE(a, serialize(gen_cipher_dataset(other), "c"));
}

TEST(GenCipher, LexiconIsBijectionOfVocabSize) {
    auto d = gen_cipher_dataset(small());
    EXPECT_EQ(d.gold_lexicon.size(), 300u);
    std::set<Token> src, tgt;
    for (const auto& [s, t] : d.gold_lexicon) {
        src.insert(s);
        tgt.insert(t);
    }
    EXPECT_EQ(src.size(), 300u);
    EXPECT_EQ(tgt.size(), 300u);
    EXPECT_EQ(d.source_embeddings.size(), 300u);
    EXPECT_EQ(d.target_embeddings.size(), 300u);
}

TEST(GenCipher, CipherMapReproducesTargetTwin) {
    auto d = gen_cipher_dataset(small());
    std::map<Token, Token> cipher(d.gold_lexicon.begin(), d.gold_lexicon.end());
    ASSERT_EQ(d.source_docs.size(), d.target_docs.size());
    for (const auto& doc : d.source_docs) {
        const auto& twin = d.target_docs.at(doc.id);
        ASSERT_EQ(doc.terms.size(), twin.terms.size());
        for (std::size_t i = 0; i < doc.terms.size(); ++i) EXPECT_EQ(cipher.at(doc.terms[i]), twin.terms[i]);
        EXPECT_EQ(doc.translated_terms, twin.terms);
        EXPECT_EQ(twin.translated_terms, doc.terms);
    }
    for (const auto& q : d.queries) {
        ASSERT_EQ(q.terms.size(), q.translated_terms.size());
        for (std::size_t i = 0; i < q.terms.size(); ++i) EXPECT_EQ(cipher.at(q.terms[i]), q.translated_terms[i]);
    }
}

TEST(GenCipher, EveryQueryHasAPositive) {
    auto d = gen_cipher_dataset(small());
    EXPECT_EQ(d.queries.size(), 12u);
    for (const auto& q : d.queries) EXPECT_GE(d.qrels.num_relevant(q.id), 1u) << q.id;
}

TEST(GenCipher, DocLengthsInRange) {
    auto d = gen_cipher_dataset(small());
    for (const auto& doc : d.source_docs) {
        EXPECT_GE(doc.terms.size(), 10u);
        EXPECT_LE(doc.terms.size(), 25u);
    }
}

TEST(GenCipher, RotationMapsTargetOntoSource) {
    auto d = gen_cipher_dataset(small());
    EXPECT_LT(orthogonality_error(d.rotation), 1e-12);
    for (const auto& [s, t] : d.gold_lexicon) {
        auto xs = d.source_embeddings.lookup(s);
        auto xt = d.target_embeddings.lookup(t);
        for (std::size_t r = 0; r < xs.size(); ++r) {
            double acc = 0;
            for (std::size_t c = 0; c < xt.size(); ++c) acc += d.rotation(r, c) * xt[c];
            EXPECT_NEAR(acc, xs[r], 1e-12);
        }
    }
}

TEST(GenCipher, ProcrustesOnGoldLexiconRecoversTransform) {
    auto d = gen_cipher_dataset(small());
    auto map = procrustes(d.source_embeddings, d.target_embeddings, d.gold_lexicon);
    double worst = 0;
    for (const auto& [s, t] : d.gold_lexicon) {
        auto xs = d.source_embeddings.lookup(s);
        auto xt = d.target_embeddings.lookup(t);
        for (std::size_t r = 0; r < xs.size(); ++r) {
            double acc = 0;
            for (std::size_t c = 0; c < xt.size(); ++c) acc += map.w(r, c) * xt[c];
            worst = std::max(worst, std::abs(acc - xs[r]));
        }
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(GenCipher, VocabTooSmallIsAnError) {
    auto o = small();
    o.vocab_size = cipher_vocab_demand(o) - 1;
    EXPECT_THROW(gen_cipher_dataset(o), DataError);
    o.vocab_size = cipher_vocab_demand(o);
    EXPECT_NO_THROW(gen_cipher_dataset(o));
    o.n_docs = 0;
    EXPECT_THROW(gen_cipher_dataset(o), UsageError);
}

TEST(GenCipher, SharedWorldSeedSharesSourceSpace) {
    auto a = small();
    a.world_seed = 99;
    auto b = a;
    b.seed = 123;
    b.target_lang = "xb";
    auto da = gen_cipher_dataset(a), db = gen_cipher_dataset(b);
    EXPECT_EQ(da.source_embeddings.vectors().data(), db.source_embeddings.vectors().data());
    EXPECT_EQ(da.source_embeddings.tokens(), db.source_embeddings.tokens());
    EXPECT_NE(da.rotation.data(), db.rotation.data());
    EXPECT_EQ(db.target_docs[0].lang, "xb");
}

TEST(NoiseInjection, RateZeroIsIdentityAndRateOneChangesMost) {
    auto d = gen_cipher_dataset(small());
    std::vector<Token> vocab;
    for (const auto& [s, t] : d.gold_lexicon) vocab.push_back(t);
    auto same = inject_translation_noise(d.source_docs, 0.0, vocab, 1);
    for (std::size_t i = 0; i < same.size(); ++i) EXPECT_EQ(same[i].translated_terms, d.source_docs[i].translated_terms);
    auto noisy = inject_translation_noise(d.source_docs, 1.0, vocab, 1);
    std::size_t changed = 0, total = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        EXPECT_EQ(noisy[i].terms, d.source_docs[i].terms);
        for (std::size_t j = 0; j < noisy[i].translated_terms.size(); ++j) {
            ++total;
            changed += noisy[i].translated_terms[j] != d.source_docs[i].translated_terms[j];
        }
    }
    EXPECT_GT(changed, total * 9 / 10);
}

TEST(SplitQueries, TakesConsecutiveBlocks) {
    auto d = gen_cipher_dataset(small());
    auto s = split_queries(d.queries, 6, 3, 3);
    EXPECT_EQ(s.train.size(), 6u);
    EXPECT_EQ(s.dev[0].id, d.queries[6].id);
    EXPECT_EQ(s.test[2].id, d.queries[11].id);
    EXPECT_THROW(split_queries(d.queries, 10, 3, 3), UsageError);
}

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clir/corpus.hpp"
#include "clir/linalg.hpp"

namespace clir {

/// Word vectors with a token index. Unknown tokens look up to the zero vector.
class EmbeddingMatrix {
  public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::vector<Token> tokens, Matrix vectors);

    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] std::size_t dim() const { return vectors_.cols(); }
    [[nodiscard]] const std::vector<Token>& tokens() const { return tokens_; }
    [[nodiscard]] const Matrix& vectors() const { return vectors_; }

    [[nodiscard]] std::optional<std::size_t> index_of(const Token& token) const;
    [[nodiscard]] bool contains(const Token& token) const { return index_of(token).has_value(); }
    /// Row for `token`, or a zero vector with `*oov = true`.
    [[nodiscard]] std::span<const double> lookup(const Token& token, bool* oov = nullptr) const;

  private:
    std::vector<Token> tokens_;
    Matrix vectors_;
    std::unordered_map<Token, std::size_t> index_;
    std::vector<double> zero_;
};

/// Text .vec layout: header "count dim", then "token v1 ... v_dim" per line.
EmbeddingMatrix parse_embeddings(std::string_view text, const std::string& source = "<memory>");
EmbeddingMatrix load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingMatrix& emb, const std::string& path);

/// (source token, target token) pairs.
using Lexicon = std::vector<std::pair<Token, Token>>;

Lexicon parse_lexicon(std::string_view text, const std::string& source = "<memory>");
Lexicon load_lexicon(const std::string& path);
void save_lexicon(const Lexicon& lex, const std::string& path);

/// Drops pairs whose source or target token is missing from its embedding.
Lexicon filter_lexicon(const Lexicon& lex, const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                       std::size_t* dropped = nullptr);

/// Orthogonal map W taking target-language vectors into the source space: x ~ W y.
struct AlignmentMap {
    Matrix w;
    std::string source_lang;
    std::string target_lang;
};

/// argmin over orthogonal W of ||W Y^T - X^T||_F, via W = U V^T with U S V^T = svd(X^T Y).
/// X and Y are n x d with paired rows.
AlignmentMap procrustes(const Matrix& x, const Matrix& y);
/// Procrustes over the rows selected by a lexicon (OOV pairs filtered first).
AlignmentMap procrustes(const EmbeddingMatrix& source, const EmbeddingMatrix& target, const Lexicon& lex);

double procrustes_loss(const Matrix& w, const Matrix& x, const Matrix& y);

enum class InductionMethod { nn, csls };

InductionMethod parse_induction_method(const std::string& name);

/// Mutual nearest neighbours between aligned target vectors and source vectors,
/// by cosine (nn) or CSLS with neighbourhood k. Ties go to the lowest row index.
/// Returned pairs are (source token, target token), ordered by target row.
Lexicon induce_dictionary(const EmbeddingMatrix& aligned_target, const EmbeddingMatrix& source,
                          InductionMethod method = InductionMethod::nn, std::size_t k_csls = 10);

/// Fraction of test pairs whose aligned target vector has its gold source word as
/// cosine nearest neighbour. Pairs with OOV tokens are skipped; 0 when none remain.
double translation_accuracy(const EmbeddingMatrix& aligned_target, const EmbeddingMatrix& source,
                            const Lexicon& test);

struct IterativeAlignment {
    AlignmentMap map;
    std::size_t best_round = 1;           ///< 1-based
    std::vector<double> round_accuracy;   ///< empty without a test lexicon
    std::size_t seed_pairs_used = 0;
    std::size_t seed_pairs_dropped = 0;
};

/// Alternates Procrustes and dictionary induction for `iters` rounds, starting from
/// the seed lexicon. With a test lexicon, returns the round with the best held-out
/// accuracy (earliest on ties); otherwise the last round.
IterativeAlignment iterative_procrustes(const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                                        const Lexicon& seed, std::size_t iters,
                                        InductionMethod method = InductionMethod::nn,
                                        std::size_t k_csls = 10, const Lexicon* test = nullptr);

/// Every row v replaced by W v.
EmbeddingMatrix apply_alignment(const AlignmentMap& map, const EmbeddingMatrix& emb);

void save_alignment(const AlignmentMap& map, const std::string& path);
AlignmentMap load_alignment(const std::string& path);

}  // namespace clir

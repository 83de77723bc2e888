#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clir/autodiff.hpp"
#include "clir/corpus.hpp"
#include "clir/embeddings.hpp"
#include "clir/features.hpp"
#include "clir/tensor_io.hpp"

namespace clir {

enum class Arch { posit_drmm, pacrr, pacrr_drmm };

Arch parse_arch(const std::string& name);
std::string to_string(Arch arch);

struct RankerConfig {
    Arch arch = Arch::posit_drmm;
    std::size_t embed_dim = 50;
    /// 0 picks the architecture default: 5 for POSIT-DRMM, 2 for the PACRR family.
    std::size_t k_pool = 0;
    std::vector<std::size_t> filter_sizes{1, 2, 3};
    std::size_t filters_per_size = 32;
    std::size_t l_q = 8;
    std::size_t l_d = 300;
    double dropout = 0.3;
    bool bilingual = true;
    bool share_components = false;
    std::size_t term_mlp_hidden = 8;    ///< POSIT-DRMM term scorer
    std::size_t pacrr_mlp_hidden = 32;  ///< PACRR scorer over the flattened feature matrix
    std::size_t row_mlp_hidden = 8;     ///< PACRR-DRMM shared row scorer

    [[nodiscard]] std::size_t pool_k() const;
    [[nodiscard]] std::size_t lstm_hidden() const { return embed_dim / 2; }
    /// Columns of the PACRR feature matrix: k per filter size plus the idf column.
    [[nodiscard]] std::size_t pacrr_feature_cols() const { return pool_k() * filter_sizes.size() + 1; }
    /// Throws UsageError when an invariant fails.
    void validate() const;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static RankerConfig from_json(const nlohmann::json& j);
};

/// Named trainable tensors in creation order.
class ParameterStore {
  public:
    enum class Kind { weight, bias, fusion };

    ad::Tensor add(const std::string& name, std::size_t rows, std::size_t cols, Kind kind);
    [[nodiscard]] const ad::Tensor& get(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const;

    [[nodiscard]] std::size_t size() const { return tensors_.size(); }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] const std::vector<ad::Tensor>& tensors() const { return tensors_; }
    [[nodiscard]] std::vector<ad::Tensor>& tensors() { return tensors_; }
    [[nodiscard]] Kind kind(std::size_t i) const { return kinds_[i]; }
    [[nodiscard]] std::size_t num_values() const;

    /// Weights uniform(-0.1, 0.1) from `seed`; biases zero; fusion weights zero.
    void initialize(std::uint64_t seed);

    [[nodiscard]] std::vector<NamedTensor> export_tensors() const;
    /// Values for every stored tensor; names and shapes must match exactly.
    void import_tensors(const std::vector<NamedTensor>& tensors);
    /// Deep copy of the current values (used for best-epoch snapshots).
    [[nodiscard]] std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& values);

  private:
    std::vector<std::string> names_;
    std::vector<ad::Tensor> tensors_;
    std::vector<Kind> kinds_;
};

/// Parameters of one term-interaction network.
struct ComponentParams {
    // POSIT-DRMM
    ad::Tensor lstm_fw_ih, lstm_fw_hh, lstm_fw_b, lstm_bw_ih, lstm_bw_hh, lstm_bw_b;
    ad::Tensor term_w1, term_b1, term_w2, term_b2, gate_w;
    // PACRR family
    std::vector<ad::Tensor> conv_w, conv_b;
    ad::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // PACRR
    ad::Tensor row_w1, row_b1, row_w2, row_b2;  // PACRR-DRMM row scorer
    ad::Tensor comb_w, comb_b;                  // PACRR-DRMM combination over query terms
};

/// Registers one component's tensors under `prefix` and returns handles to them.
ComponentParams add_component_params(const RankerConfig& cfg, const std::string& prefix, ParameterStore& store);

// -- POSIT-DRMM --------------------------------------------------------------

/// emb + dropout(BiLSTM(emb)); rows follow the input sequence.
ad::Tensor encode_posit(const ad::Tensor& emb, const ComponentParams& p, const RankerConfig& cfg, bool train,
                        std::uint64_t dropout_seed);

/// Softmax term gates (1 x |Q|) over w_g . [enc_i ; idf_i].
ad::Tensor posit_gates(const ad::Tensor& query_enc, const std::vector<double>& query_idf, const ComponentParams& p);

/// Gated sum of per-term MLP scores. An empty document (0 rows) is scored from all-zero pooled features.
ad::Tensor score_posit_drmm(const ad::Tensor& query_enc, const ad::Tensor& doc_enc, const std::vector<double>& query_idf,
                            const ComponentParams& p, const RankerConfig& cfg);

// -- PACRR family ------------------------------------------------------------

/// Cosine similarity matrix padded to l_q x l_d. Only the first `sim.cols()` document columns
/// are stored; the remaining `l_d - sim.cols()` columns are zero.
struct SimilarityMatrix {
    ad::Tensor sim;  ///< l_q x min(l_d, |D|)
    std::size_t l_d = 0;

    /// The full l_q x l_d matrix.
    [[nodiscard]] ad::Tensor dense() const;
};

/// Truncates the query to l_q and the document to l_d terms, then zero-pads the query rows.
SimilarityMatrix build_sim_matrix(const ad::Tensor& query, const ad::Tensor& doc, std::size_t l_q, std::size_t l_d);

/// Idf column of the feature matrix: softmax over the (at most l_q) real query terms, padded rows 0.
std::vector<double> normalized_idf(const std::vector<double>& query_idf, std::size_t l_q);

/// l_q x (k * |filter_sizes| + 1) matrix of n-gram match signals plus the idf column.
ad::Tensor pacrr_features(const SimilarityMatrix& sim, const std::vector<double>& query_idf, const ComponentParams& p,
                          const RankerConfig& cfg);

ad::Tensor score_pacrr(const SimilarityMatrix& sim, const std::vector<double>& query_idf, const ComponentParams& p,
                       const RankerConfig& cfg);
ad::Tensor score_pacrr_drmm(const SimilarityMatrix& sim, const std::vector<double>& query_idf,
                            const ComponentParams& p, const RankerConfig& cfg);

// -- bilingual scorer --------------------------------------------------------

/// Which query side meets which document side.
enum class Component { q_d = 0, q_dhat = 1, qhat_dhat = 2, qhat_d = 3 };
inline constexpr std::size_t kNumComponents = 4;
std::string to_string(Component c);

/// Embedded sides of one query-document pair. Q and D-hat are in the source language,
/// Q-hat and D in the target language; empty sides have zero rows.
struct PairInput {
    ad::Tensor q, q_hat, d, d_hat;
    std::vector<double> idf_q, idf_q_hat;
    FeatureArray features{};  ///< already standardized
};

/// Embedding lookup for a side, using the language-appropriate table.
ad::Tensor embed_terms(const TokenSeq& terms, const EmbeddingMatrix& emb);

/// Four components (or the single Q-D-hat component in monolingual mode) plus linear fusion.
class BilingualScorer {
  public:
    explicit BilingualScorer(RankerConfig cfg);

    [[nodiscard]] const RankerConfig& config() const { return cfg_; }
    [[nodiscard]] ParameterStore& params() { return store_; }
    [[nodiscard]] const ParameterStore& params() const { return store_; }

    /// Components evaluated for this configuration, in index order.
    [[nodiscard]] std::vector<Component> active_components() const;

    /// One component's score, or nullopt when one of its sides is empty.
    [[nodiscard]] std::optional<ad::Tensor> component_score(Component c, const PairInput& in, bool train,
                                                            std::uint64_t seed) const;
    /// Sum of the available component scores; throws DataError if none is available.
    [[nodiscard]] ad::Tensor model_score(const PairInput& in, bool train, std::uint64_t seed) const;
    /// w_m * model_score + sum_j w_j * feature_j + bias.
    [[nodiscard]] ad::Tensor score(const PairInput& in, bool train, std::uint64_t seed) const;

    [[nodiscard]] const ad::Tensor& fusion_model_weight() const { return w_model_; }
    [[nodiscard]] const ad::Tensor& fusion_feature_weights() const { return w_features_; }
    [[nodiscard]] const ad::Tensor& fusion_bias() const { return b_fusion_; }

    /// Standard initialization with the first-stage feature weight warm-started at 1.
    void initialize(std::uint64_t seed);

    /// Reuses POSIT-DRMM encodings of inputs that share storage while gradients are off. The caller
    /// keeps those input tensors alive and unchanged and must not update parameters while it is on.
    /// Toggling clears the cache.
    void set_encoding_cache(bool enabled) const;

  private:
    [[nodiscard]] const ComponentParams& params_for(Component c) const;
    [[nodiscard]] ad::Tensor encode_cached(Component c, const ad::Tensor& emb, const ComponentParams& p, bool train,
                                           std::uint64_t seed) const;

    RankerConfig cfg_;
    ParameterStore store_;
    std::array<ComponentParams, kNumComponents> comps_;
    std::array<int, kNumComponents> slot_{};
    ad::Tensor w_model_, w_features_, b_fusion_;
    mutable bool cache_enabled_ = false;
    mutable std::map<std::pair<int, const ad::Node*>, ad::Tensor> encodings_;
};

}  // namespace clir

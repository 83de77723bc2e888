#include "clir/rankers.hpp"

#include <algorithm>
#include <cmath>

#include "clir/error.hpp"
#include "clir/random.hpp"

namespace clir {

using ad::Tensor;

Arch parse_arch(const std::string& name) {
    if (name == "posit-drmm") return Arch::posit_drmm;
    if (name == "pacrr") return Arch::pacrr;
    if (name == "pacrr-drmm") return Arch::pacrr_drmm;
    throw UsageError("unknown architecture '" + name + "' (expected posit-drmm, pacrr or pacrr-drmm)");
}

std::string to_string(Arch arch) {
    switch (arch) {
        case Arch::posit_drmm: return "posit-drmm";
        case Arch::pacrr: return "pacrr";
        case Arch::pacrr_drmm: return "pacrr-drmm";
    }
    return "?";
}

std::size_t RankerConfig::pool_k() const {
    if (k_pool != 0) return k_pool;
    return arch == Arch::posit_drmm ? 5 : 2;
}

void RankerConfig::validate() const {
    if (embed_dim == 0) throw UsageError("embed_dim must be positive");
    if (arch == Arch::posit_drmm && embed_dim % 2 != 0) {
        throw UsageError("posit-drmm needs an even embed_dim to split the BiLSTM directions, got " +
                         std::to_string(embed_dim));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must be in [0,1)");
    if (term_mlp_hidden == 0 || pacrr_mlp_hidden == 0 || row_mlp_hidden == 0) {
        throw UsageError("hidden layer widths must be positive");
    }
    if (arch != Arch::posit_drmm) {
        if (filter_sizes.empty()) throw UsageError("filter_sizes must not be empty");
        if (filters_per_size == 0) throw UsageError("filters_per_size must be positive");
        std::size_t largest = 0;
        for (std::size_t n : filter_sizes) {
            if (n == 0) throw UsageError("filter sizes must be positive");
            largest = std::max(largest, n);
        }
        if (l_q < largest || l_d < largest) {
            throw UsageError("l_q and l_d must be at least the largest filter size " + std::to_string(largest));
        }
    }
}

nlohmann::ordered_json RankerConfig::to_json() const {
    nlohmann::ordered_json j;
    j["arch"] = to_string(arch);
    j["embed_dim"] = embed_dim;
    j["k_pool"] = pool_k();
    j["filter_sizes"] = filter_sizes;
    j["filters_per_size"] = filters_per_size;
    j["l_q"] = l_q;
    j["l_d"] = l_d;
    j["dropout"] = dropout;
    j["bilingual"] = bilingual;
    j["share_components"] = share_components;
    j["term_mlp_hidden"] = term_mlp_hidden;
    j["pacrr_mlp_hidden"] = pacrr_mlp_hidden;
    j["row_mlp_hidden"] = row_mlp_hidden;
    return j;
}

RankerConfig RankerConfig::from_json(const nlohmann::json& j) {
    RankerConfig c;
    try {
        c.arch = parse_arch(j.at("arch").get<std::string>());
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.k_pool = j.at("k_pool").get<std::size_t>();
        c.filter_sizes = j.at("filter_sizes").get<std::vector<std::size_t>>();
        c.filters_per_size = j.at("filters_per_size").get<std::size_t>();
        c.l_q = j.at("l_q").get<std::size_t>();
        c.l_d = j.at("l_d").get<std::size_t>();
        c.dropout = j.at("dropout").get<double>();
        c.bilingual = j.at("bilingual").get<bool>();
        c.share_components = j.at("share_components").get<bool>();
        c.term_mlp_hidden = j.at("term_mlp_hidden").get<std::size_t>();
        c.pacrr_mlp_hidden = j.at("pacrr_mlp_hidden").get<std::size_t>();
        c.row_mlp_hidden = j.at("row_mlp_hidden").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed ranker config: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("malformed ranker config: ") + e.what());
    }
    try {
        c.validate();
    } catch (const UsageError& e) {
        throw DataError(std::string("invalid ranker config: ") + e.what());
    }
    return c;
}

// -- parameter store ---------------------------------------------------------

Tensor ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols, Kind kind) {
    if (contains(name)) throw UsageError("duplicate parameter " + name);
    auto t = Tensor::parameter(rows, cols, std::vector<double>(rows * cols, 0.0));
    names_.push_back(name);
    tensors_.push_back(t);
    kinds_.push_back(kind);
    return t;
}

bool ParameterStore::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw UsageError("no parameter named " + name);
    return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

std::size_t ParameterStore::num_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

void ParameterStore::initialize(std::uint64_t seed) {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        auto& v = tensors_[i].mutable_values();
        if (kinds_[i] == Kind::weight) {
            Rng rng(mix_seed(seed, i));
            for (double& x : v) x = uniform(rng, -0.1, 0.1);
        } else {
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
}

std::vector<NamedTensor> ParameterStore::export_tensors() const {
    std::vector<NamedTensor> out;
    out.reserve(tensors_.size());
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        out.push_back({names_[i], {tensors_[i].rows(), tensors_[i].cols()}, tensors_[i].values()});
    }
    return out;
}

void ParameterStore::import_tensors(const std::vector<NamedTensor>& tensors) {
    if (tensors.size() != tensors_.size()) {
        throw DataError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(tensors_.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& t = tensors[i];
        if (t.name != names_[i]) throw DataError("checkpoint tensor " + t.name + " where " + names_[i] + " was expected");
        if (t.shape != std::vector<std::size_t>{tensors_[i].rows(), tensors_[i].cols()}) {
            throw DataError("checkpoint tensor " + t.name + " has the wrong shape");
        }
        for (double x : t.values)
            if (!std::isfinite(x)) throw DataError("checkpoint tensor " + t.name + " holds a non-finite value");
        tensors_[i].mutable_values() = t.values;
    }
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.push_back(t.values());
    return out;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
    if (values.size() != tensors_.size()) throw UsageError("snapshot does not match the parameter store");
    for (std::size_t i = 0; i < values.size(); ++i) tensors_[i].mutable_values() = values[i];
}

ComponentParams add_component_params(const RankerConfig& cfg, const std::string& prefix, ParameterStore& store) {
    using K = ParameterStore::Kind;
    ComponentParams p;
    const std::size_t d = cfg.embed_dim;
    auto add = [&](const std::string& name, std::size_t r, std::size_t c, K k) { return store.add(prefix + name, r, c, k); };
    switch (cfg.arch) {
        case Arch::posit_drmm: {
            const std::size_t h = cfg.lstm_hidden(), h4 = 4 * h;
            p.lstm_fw_ih = add("lstm_fw.w_ih", d, h4, K::weight);
            p.lstm_fw_hh = add("lstm_fw.w_hh", h, h4, K::weight);
            p.lstm_fw_b = add("lstm_fw.b", 1, h4, K::bias);
            p.lstm_bw_ih = add("lstm_bw.w_ih", d, h4, K::weight);
            p.lstm_bw_hh = add("lstm_bw.w_hh", h, h4, K::weight);
            p.lstm_bw_b = add("lstm_bw.b", 1, h4, K::bias);
            p.term_w1 = add("term_mlp.w1", 2, cfg.term_mlp_hidden, K::weight);
            p.term_b1 = add("term_mlp.b1", 1, cfg.term_mlp_hidden, K::bias);
            p.term_w2 = add("term_mlp.w2", cfg.term_mlp_hidden, 1, K::weight);
            p.term_b2 = add("term_mlp.b2", 1, 1, K::bias);
            p.gate_w = add("gate.w", d + 1, 1, K::weight);
            break;
        }
        case Arch::pacrr:
        case Arch::pacrr_drmm: {
            for (std::size_t n : cfg.filter_sizes) {
                const std::string tag = "conv" + std::to_string(n);
                p.conv_w.push_back(add(tag + ".w", cfg.filters_per_size, n * n, K::weight));
                p.conv_b.push_back(add(tag + ".b", 1, cfg.filters_per_size, K::bias));
            }
            const std::size_t cols = cfg.pacrr_feature_cols();
            if (cfg.arch == Arch::pacrr) {
                p.mlp_w1 = add("mlp.w1", cfg.l_q * cols, cfg.pacrr_mlp_hidden, K::weight);
                p.mlp_b1 = add("mlp.b1", 1, cfg.pacrr_mlp_hidden, K::bias);
                p.mlp_w2 = add("mlp.w2", cfg.pacrr_mlp_hidden, 1, K::weight);
                p.mlp_b2 = add("mlp.b2", 1, 1, K::bias);
            } else {
                p.row_w1 = add("row_mlp.w1", cols, cfg.row_mlp_hidden, K::weight);
                p.row_b1 = add("row_mlp.b1", 1, cfg.row_mlp_hidden, K::bias);
                p.row_w2 = add("row_mlp.w2", cfg.row_mlp_hidden, 1, K::weight);
                p.row_b2 = add("row_mlp.b2", 1, 1, K::bias);
                p.comb_w = add("combine.w", cfg.l_q, 1, K::weight);
                p.comb_b = add("combine.b", 1, 1, K::bias);
            }
            break;
        }
    }
    return p;
}

// -- POSIT-DRMM --------------------------------------------------------------

Tensor encode_posit(const Tensor& emb, const ComponentParams& p, const RankerConfig& cfg, bool train,
                    std::uint64_t dropout_seed) {
    if (emb.cols() != cfg.embed_dim) {
        throw NumericError("encode_posit: expected " + std::to_string(cfg.embed_dim) + "-dim inputs, got " + emb.shape_str());
    }
    const Tensor fw = ad::lstm(emb, p.lstm_fw_ih, p.lstm_fw_hh, p.lstm_fw_b, false);
    const Tensor bw = ad::lstm(emb, p.lstm_bw_ih, p.lstm_bw_hh, p.lstm_bw_b, true);
    const Tensor context = ad::concat_cols({fw, bw});
    return ad::add(emb, ad::dropout(context, cfg.dropout, train, dropout_seed));
}

Tensor posit_gates(const Tensor& query_enc, const std::vector<double>& query_idf, const ComponentParams& p) {
    if (query_idf.size() != query_enc.rows()) throw NumericError("posit_gates: one idf per query term required");
    const Tensor idf = Tensor::constant(query_idf.size(), 1, query_idf);
    const Tensor logits = ad::matmul(ad::concat_cols({query_enc, idf}), p.gate_w);
    return ad::softmax_rows(ad::transpose(logits));
}

Tensor score_posit_drmm(const Tensor& query_enc, const Tensor& doc_enc, const std::vector<double>& query_idf,
                        const ComponentParams& p, const RankerConfig& cfg) {
    if (query_enc.rows() == 0) throw NumericError("score_posit_drmm: empty query");
    Tensor pooled;
    if (doc_enc.rows() == 0) {
        pooled = Tensor::zeros(query_enc.rows(), 2);
    } else {
        const Tensor sim = ad::cosine_sim_matrix(query_enc, doc_enc);
        pooled = ad::concat_cols({ad::max_pool_row(sim), ad::row_mean(ad::kmax_pool_row(sim, cfg.pool_k()))});
    }
    const Tensor hidden = ad::tanh(ad::add(ad::matmul(pooled, p.term_w1), p.term_b1));
    const Tensor term_scores = ad::add(ad::matmul(hidden, p.term_w2), p.term_b2);
    return ad::matmul(posit_gates(query_enc, query_idf, p), term_scores);
}

// -- PACRR family ------------------------------------------------------------

namespace {

Tensor pad_cols(const Tensor& t, std::size_t cols) {
    if (t.cols() >= cols) return t;
    const Tensor zeros = Tensor::zeros(t.rows(), cols - t.cols());
    if (t.cols() == 0) return zeros;
    return ad::concat_cols({t, zeros});
}

Tensor pad_rows(const Tensor& t, std::size_t rows) {
    if (t.rows() >= rows) return t;
    const Tensor zeros = Tensor::zeros(rows - t.rows(), t.cols());
    if (t.rows() == 0) return zeros;
    return ad::concat_rows({t, zeros});
}

}  // namespace

Tensor SimilarityMatrix::dense() const { return pad_cols(sim, l_d); }

SimilarityMatrix build_sim_matrix(const Tensor& query, const Tensor& doc, std::size_t l_q, std::size_t l_d) {
    if (query.cols() != doc.cols()) {
        throw NumericError("build_sim_matrix: query " + query.shape_str() + " and document " + doc.shape_str() +
                           " differ in dimension");
    }
    const std::size_t nq = std::min(query.rows(), l_q), nd = std::min(doc.rows(), l_d);
    if (nd == 0) return {Tensor::zeros(l_q, 0), l_d};
    if (nq == 0) return {Tensor::zeros(l_q, nd), l_d};
    const Tensor q = nq == query.rows() ? query : ad::slice_rows(query, 0, nq);
    const Tensor d = nd == doc.rows() ? doc : ad::slice_rows(doc, 0, nd);
    return {pad_rows(ad::cosine_sim_matrix(q, d), l_q), l_d};
}

std::vector<double> normalized_idf(const std::vector<double>& query_idf, std::size_t l_q) {
    std::vector<double> out(l_q, 0.0);
    const std::size_t n = std::min(query_idf.size(), l_q);
    if (n == 0) return out;
    const double top = *std::max_element(query_idf.begin(), query_idf.begin() + static_cast<std::ptrdiff_t>(n));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += out[i] = std::exp(query_idf[i] - top);
    for (std::size_t i = 0; i < n; ++i) out[i] /= total;
    return out;
}

Tensor pacrr_features(const SimilarityMatrix& sm, const std::vector<double>& query_idf, const ComponentParams& p,
                      const RankerConfig& cfg) {
    const std::size_t l_q = cfg.l_q, l_d = sm.l_d, k = cfg.pool_k();
    if (sm.sim.rows() != l_q || sm.l_d != cfg.l_d) {
        throw NumericError("pacrr_features: similarity matrix " + sm.sim.shape_str() + " does not match l_q=" +
                           std::to_string(l_q) + ", l_d=" + std::to_string(cfg.l_d));
    }
    const std::size_t stored = sm.sim.cols();
    std::vector<Tensor> blocks;
    for (std::size_t f = 0; f < cfg.filter_sizes.size(); ++f) {
        const std::size_t n = cfg.filter_sizes[f];
        // Columns past stored + n see only zeros, so their response is the filter bias; the
        // convolution runs on the informative prefix and those columns are summarized below.
        const std::size_t width = std::min(l_d, stored + n);
        const Tensor input = pad_cols(sm.sim, width);
        const Tensor conv = ad::conv2d(input, p.conv_w[f], p.conv_b[f], n, n, ad::Padding::same);
        Tensor strongest = ad::reshape(ad::max_pool_row(ad::transpose(conv)), l_q, width);
        const std::size_t tail = std::min(k, l_d - width);
        if (tail > 0) {
            const Tensor bias_max = ad::max_pool_row(p.conv_b[f]);
            const Tensor column = ad::matmul(Tensor::constant(l_q, 1, std::vector<double>(l_q, 1.0)), bias_max);
            std::vector<Tensor> parts{strongest};
            for (std::size_t i = 0; i < tail; ++i) parts.push_back(column);
            strongest = ad::concat_cols(parts);
        }
        blocks.push_back(ad::kmax_pool_row(strongest, k));
    }
    blocks.push_back(Tensor::constant(l_q, 1, normalized_idf(query_idf, l_q)));
    return ad::concat_cols(blocks);
}

Tensor score_pacrr(const SimilarityMatrix& sim, const std::vector<double>& query_idf, const ComponentParams& p,
                   const RankerConfig& cfg) {
    const Tensor feats = pacrr_features(sim, query_idf, p, cfg);
    const Tensor flat = ad::reshape(feats, 1, feats.size());
    const Tensor hidden = ad::relu(ad::add(ad::matmul(flat, p.mlp_w1), p.mlp_b1));
    return ad::add(ad::matmul(hidden, p.mlp_w2), p.mlp_b2);
}

Tensor score_pacrr_drmm(const SimilarityMatrix& sim, const std::vector<double>& query_idf, const ComponentParams& p,
                        const RankerConfig& cfg) {
    const Tensor feats = pacrr_features(sim, query_idf, p, cfg);
    const Tensor hidden = ad::relu(ad::add(ad::matmul(feats, p.row_w1), p.row_b1));
    const Tensor term_scores = ad::add(ad::matmul(hidden, p.row_w2), p.row_b2);
    return ad::add(ad::matmul(ad::transpose(term_scores), p.comb_w), p.comb_b);
}

// -- bilingual scorer --------------------------------------------------------

std::string to_string(Component c) {
    switch (c) {
        case Component::q_d: return "q-d";
        case Component::q_dhat: return "q-dhat";
        case Component::qhat_dhat: return "qhat-dhat";
        case Component::qhat_d: return "qhat-d";
    }
    return "?";
}

Tensor embed_terms(const TokenSeq& terms, const EmbeddingMatrix& emb) {
    std::vector<double> values;
    values.reserve(terms.size() * emb.dim());
    for (const auto& t : terms) {
        const auto row = emb.lookup(t);
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor::constant(terms.size(), emb.dim(), std::move(values));
}

BilingualScorer::BilingualScorer(RankerConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    static const std::array<std::string, kNumComponents> prefixes{"q_d.", "q_dhat.", "qhat_dhat.", "qhat_d."};
    if (!cfg_.bilingual) {
        comps_[0] = add_component_params(cfg_, prefixes[1], store_);
        slot_.fill(0);
    } else if (cfg_.share_components) {
        comps_[0] = add_component_params(cfg_, "shared.", store_);
        slot_.fill(0);
    } else {
        for (std::size_t c = 0; c < kNumComponents; ++c) {
            comps_[c] = add_component_params(cfg_, prefixes[c], store_);
            slot_[c] = static_cast<int>(c);
        }
    }
    using K = ParameterStore::Kind;
    w_model_ = store_.add("fusion.w_model", 1, 1, K::fusion);
    w_features_ = store_.add("fusion.w_features", kNumFeatures, 1, K::fusion);
    b_fusion_ = store_.add("fusion.bias", 1, 1, K::bias);
}

std::vector<Component> BilingualScorer::active_components() const {
    if (!cfg_.bilingual) return {Component::q_dhat};
    return {Component::q_d, Component::q_dhat, Component::qhat_dhat, Component::qhat_d};
}

const ComponentParams& BilingualScorer::params_for(Component c) const {
    return comps_[static_cast<std::size_t>(slot_[static_cast<std::size_t>(c)])];
}

std::optional<Tensor> BilingualScorer::component_score(Component c, const PairInput& in, bool train,
                                                       std::uint64_t seed) const {
    const bool hat_query = c == Component::qhat_dhat || c == Component::qhat_d;
    const bool hat_doc = c == Component::q_dhat || c == Component::qhat_dhat;
    const Tensor& q = hat_query ? in.q_hat : in.q;
    const Tensor& d = hat_doc ? in.d_hat : in.d;
    const std::vector<double>& idf = hat_query ? in.idf_q_hat : in.idf_q;
    if (!q.defined() || !d.defined() || q.rows() == 0 || d.rows() == 0) return std::nullopt;

    const ComponentParams& p = params_for(c);
    const std::uint64_t comp_seed = mix_seed(seed, static_cast<std::uint64_t>(c));
    switch (cfg_.arch) {
        case Arch::posit_drmm: {
            const Tensor qe = encode_cached(c, q, p, train, mix_seed(comp_seed, 0));
            const Tensor de = encode_cached(c, d, p, train, mix_seed(comp_seed, 1));
            return score_posit_drmm(qe, de, idf, p, cfg_);
        }
        case Arch::pacrr: return score_pacrr(build_sim_matrix(q, d, cfg_.l_q, cfg_.l_d), idf, p, cfg_);
        case Arch::pacrr_drmm: return score_pacrr_drmm(build_sim_matrix(q, d, cfg_.l_q, cfg_.l_d), idf, p, cfg_);
    }
    return std::nullopt;
}

Tensor BilingualScorer::encode_cached(Component c, const Tensor& emb, const ComponentParams& p, bool train,
                                      std::uint64_t seed) const {
    if (train || !cache_enabled_ || ad::grad_enabled()) return encode_posit(emb, p, cfg_, train, seed);
    const auto key = std::make_pair(static_cast<int>(c), emb.node().get());
    auto it = encodings_.find(key);
    if (it == encodings_.end()) it = encodings_.emplace(key, encode_posit(emb, p, cfg_, false, seed)).first;
    return it->second;
}

void BilingualScorer::set_encoding_cache(bool enabled) const {
    cache_enabled_ = enabled;
    encodings_.clear();
}

Tensor BilingualScorer::model_score(const PairInput& in, bool train, std::uint64_t seed) const {
    std::vector<Tensor> parts;
    for (Component c : active_components()) {
        if (auto s = component_score(c, in, train, seed)) parts.push_back(*s);
    }
    if (parts.empty()) throw DataError("no scoring component has both a query side and a document side");
    Tensor total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
    return total;
}

Tensor BilingualScorer::score(const PairInput& in, bool train, std::uint64_t seed) const {
    const Tensor model = model_score(in, train, seed);
    const Tensor feats = Tensor::constant(1, kNumFeatures, std::vector<double>(in.features.begin(), in.features.end()));
    const Tensor fused = ad::add(ad::mul(model, w_model_), ad::matmul(feats, w_features_));
    return ad::add(fused, b_fusion_);
}

void BilingualScorer::initialize(std::uint64_t seed) {
    store_.initialize(seed);
    w_features_.mutable_values()[0] = 1.0;
}

}  // namespace clir

#include "clir/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "clir/error.hpp"
#include "clir/log.hpp"
#include "clir/tensor_io.hpp"

namespace clir {

EmbeddingMatrix::EmbeddingMatrix(std::vector<Token> tokens, Matrix vectors)
    : tokens_(std::move(tokens)), vectors_(std::move(vectors)), zero_(vectors_.cols(), 0.0) {
    if (tokens_.size() != vectors_.rows()) throw DataError("embedding: token count does not match row count");
    for (double x : vectors_.data()) {
        if (!std::isfinite(x)) throw NumericError("embedding: non-finite vector entry");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], i).second) throw DataError("embedding: duplicate token " + tokens_[i]);
    }
}

std::optional<std::size_t> EmbeddingMatrix::index_of(const Token& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::span<const double> EmbeddingMatrix::lookup(const Token& token, bool* oov) const {
    auto idx = index_of(token);
    if (oov) *oov = !idx.has_value();
    if (!idx) return {zero_.data(), zero_.size()};
    return vectors_.row(*idx);
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

bool parse_double(std::string_view s, double& out) {
    // strtod handles the full textual float grammar; from_chars for doubles is
    // not available in every toolchain we build with.
    std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && !tmp.empty();
}

bool parse_size(std::string_view s, std::size_t& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

EmbeddingMatrix parse_embeddings(std::string_view text, const std::string& source) {
    std::size_t pos = 0, line_no = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) return false;
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        return true;
    };
    auto fail = [&](const std::string& why) { return DataError(source + ":" + std::to_string(line_no) + ": " + why); };

    std::string_view line;
    if (!next_line(line)) throw DataError(source + ": empty embedding file");
    auto header = split_ws(line);
    std::size_t count = 0, dim = 0;
    if (header.size() != 2 || !parse_size(header[0], count) || !parse_size(header[1], dim) || dim == 0) {
        throw fail("expected header \"count dim\"");
    }
    std::vector<Token> tokens;
    std::vector<double> values;
    tokens.reserve(count);
    values.reserve(count * dim);
    std::unordered_map<Token, bool> seen;
    while (next_line(line)) {
        auto fields = split_ws(line);
        if (fields.empty()) continue;
        if (fields.size() != dim + 1) {
            throw fail("expected " + std::to_string(dim) + " values, found " + std::to_string(fields.size() - 1));
        }
        Token tok(fields[0]);
        std::vector<double> row(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            if (!parse_double(fields[i + 1], row[i]) || !std::isfinite(row[i])) {
                throw fail("bad value \"" + std::string(fields[i + 1]) + "\"");
            }
        }
        if (!seen.emplace(tok, true).second) {
            warn(source + ":" + std::to_string(line_no) + ": duplicate token " + tok + ", keeping first occurrence");
            continue;
        }
        tokens.push_back(std::move(tok));
        values.insert(values.end(), row.begin(), row.end());
    }
    if (tokens.size() != count) {
        warn(source + ": header announces " + std::to_string(count) + " vectors, read " + std::to_string(tokens.size()));
    }
    const std::size_t n = tokens.size();
    return EmbeddingMatrix(std::move(tokens), Matrix(n, dim, std::move(values)));
}

EmbeddingMatrix load_embeddings(const std::string& path) { return parse_embeddings(read_file(path), path); }

void save_embeddings(const EmbeddingMatrix& emb, const std::string& path) {
    std::string out = std::to_string(emb.size()) + " " + std::to_string(emb.dim()) + "\n";
    for (std::size_t i = 0; i < emb.size(); ++i) {
        out += emb.tokens()[i];
        for (double x : emb.vectors().row(i)) {
            out.push_back(' ');
            out += format_double(x);
        }
        out.push_back('\n');
    }
    write_file(path, out);
}

Lexicon parse_lexicon(std::string_view text, const std::string& source) {
    Lexicon lex;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected \"source<TAB>target\"");
        }
        lex.emplace_back(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1)));
    }
    return lex;
}

Lexicon load_lexicon(const std::string& path) { return parse_lexicon(read_file(path), path); }

void save_lexicon(const Lexicon& lex, const std::string& path) {
    std::string out;
    for (const auto& [s, t] : lex) out += s + "\t" + t + "\n";
    write_file(path, out);
}

Lexicon filter_lexicon(const Lexicon& lex, const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                       std::size_t* dropped) {
    Lexicon out;
    std::size_t n_dropped = 0;
    for (const auto& p : lex) {
        if (source.contains(p.first) && target.contains(p.second)) {
            out.push_back(p);
        } else {
            ++n_dropped;
        }
    }
    if (dropped) *dropped = n_dropped;
    return out;
}

AlignmentMap procrustes(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw NumericError("procrustes: X and Y shapes differ");
    if (x.rows() == 0) throw DataError("procrustes: no lexicon pairs");
    const Svd svd = svd_small(x.transposed() * y);
    return AlignmentMap{svd.u * svd.v.transposed(), {}, {}};
}

namespace {

std::pair<Matrix, Matrix> lexicon_rows(const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                                       const Lexicon& lex) {
    const std::size_t d = source.dim();
    Matrix x(lex.size(), d), y(lex.size(), d);
    for (std::size_t i = 0; i < lex.size(); ++i) {
        auto xs = source.lookup(lex[i].first);
        auto ys = target.lookup(lex[i].second);
        std::copy(xs.begin(), xs.end(), x.row(i).begin());
        std::copy(ys.begin(), ys.end(), y.row(i).begin());
    }
    return {std::move(x), std::move(y)};
}

/// Rows scaled to unit length (zero rows stay zero).
Matrix normalized_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double n = norm2(row);
        if (n > 0.0)
            for (double& v : row) v /= n;
    }
    return out;
}

/// Cosine matrix (rows of a) x (rows of b).
Matrix cosine_matrix(const Matrix& a, const Matrix& b) { return normalized_rows(a) * normalized_rows(b).transposed(); }

/// Mean of the k largest entries per row.
std::vector<double> topk_row_means(const Matrix& s, std::size_t k) {
    std::vector<double> out(s.rows(), 0.0);
    std::vector<double> buf;
    for (std::size_t r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        buf.assign(row.begin(), row.end());
        const std::size_t kk = std::min(k, buf.size());
        if (kk == 0) continue;
        std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(kk), buf.end(), std::greater<>());
        double sum = 0.0;
        for (std::size_t i = 0; i < kk; ++i) sum += buf[i];
        out[r] = sum / static_cast<double>(kk);
    }
    return out;
}

}  // namespace

AlignmentMap procrustes(const EmbeddingMatrix& source, const EmbeddingMatrix& target, const Lexicon& lex) {
    if (source.dim() != target.dim()) throw DataError("procrustes: embedding dimensions differ");
    std::size_t dropped = 0;
    Lexicon kept = filter_lexicon(lex, source, target, &dropped);
    if (kept.empty()) throw DataError("procrustes: lexicon is empty after OOV filtering");
    auto [x, y] = lexicon_rows(source, target, kept);
    return procrustes(x, y);
}

double procrustes_loss(const Matrix& w, const Matrix& x, const Matrix& y) {
    return frobenius_norm(w * y.transposed() - x.transposed());
}

InductionMethod parse_induction_method(const std::string& name) {
    if (name == "nn") return InductionMethod::nn;
    if (name == "csls") return InductionMethod::csls;
    throw UsageError("unknown induction method \"" + name + "\" (expected nn or csls)");
}

Lexicon induce_dictionary(const EmbeddingMatrix& aligned_target, const EmbeddingMatrix& source,
                          InductionMethod method, std::size_t k_csls) {
    if (aligned_target.dim() != source.dim()) throw DataError("induce_dictionary: embedding dimensions differ");
    const std::size_t nt = aligned_target.size(), ns = source.size();
    if (nt == 0 || ns == 0) return {};
    Matrix score = cosine_matrix(aligned_target.vectors(), source.vectors());  // nt x ns
    if (method == InductionMethod::csls) {
        if (k_csls == 0) throw UsageError("csls neighbourhood must be >= 1");
        const std::vector<double> r_target = topk_row_means(score, k_csls);
        const std::vector<double> r_source = topk_row_means(score.transposed(), k_csls);
        for (std::size_t t = 0; t < nt; ++t)
            for (std::size_t s = 0; s < ns; ++s) score(t, s) = 2.0 * score(t, s) - r_target[t] - r_source[s];
    }
    std::vector<std::size_t> best_source(nt, 0), best_target(ns, 0);
    for (std::size_t t = 0; t < nt; ++t) {
        auto row = score.row(t);
        best_source[t] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    for (std::size_t s = 0; s < ns; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < nt; ++t) {
            if (score(t, s) > best) {
                best = score(t, s);
                best_target[s] = t;
            }
        }
    }
    Lexicon out;
    for (std::size_t t = 0; t < nt; ++t) {
        const std::size_t s = best_source[t];
        if (best_target[s] == t) out.emplace_back(source.tokens()[s], aligned_target.tokens()[t]);
    }
    return out;
}

double translation_accuracy(const EmbeddingMatrix& aligned_target, const EmbeddingMatrix& source,
                            const Lexicon& test) {
    const Lexicon kept = filter_lexicon(test, source, aligned_target);
    if (kept.empty()) return 0.0;
    // Several gold sources may share a target; any of them counts.
    std::unordered_map<Token, std::vector<std::size_t>> gold;
    for (const auto& [s, t] : kept) gold[t].push_back(*source.index_of(s));
    const Matrix src_n = normalized_rows(source.vectors());
    std::size_t hits = 0, total = 0;
    for (const auto& [t, golds] : gold) {
        auto tv = aligned_target.lookup(t);
        const double tn = norm2(tv);
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < source.size(); ++s) {
            const double c = tn > 0.0 ? dot(tv, src_n.row(s)) / tn : 0.0;
            if (c > best_score) {
                best_score = c;
                best = s;
            }
        }
        total += golds.size();
        if (std::find(golds.begin(), golds.end(), best) != golds.end()) hits += golds.size();
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

IterativeAlignment iterative_procrustes(const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                                        const Lexicon& seed, std::size_t iters, InductionMethod method,
                                        std::size_t k_csls, const Lexicon* test) {
    if (iters < 1) throw UsageError("iterative_procrustes: iters must be >= 1");
    if (source.dim() != target.dim()) throw DataError("iterative_procrustes: embedding dimensions differ");
    IterativeAlignment out;
    Lexicon lex = filter_lexicon(seed, source, target, &out.seed_pairs_dropped);
    out.seed_pairs_used = lex.size();
    if (lex.empty()) throw DataError("seed lexicon is empty after OOV filtering");
    if (out.seed_pairs_dropped > 0) {
        info("alignment: dropped " + std::to_string(out.seed_pairs_dropped) + " OOV seed lexicon pairs");
    }

    double best_acc = -1.0;
    for (std::size_t round = 1; round <= iters; ++round) {
        AlignmentMap map = procrustes(source, target, lex);
        EmbeddingMatrix aligned = apply_alignment(map, target);
        if (test) {
            const double acc = translation_accuracy(aligned, source, *test);
            out.round_accuracy.push_back(acc);
            if (acc > best_acc) {
                best_acc = acc;
                out.best_round = round;
                out.map = map;
            }
        } else {
            out.best_round = round;
            out.map = map;
        }
        if (round < iters) {
            Lexicon induced = induce_dictionary(aligned, source, method, k_csls);
            if (induced.empty()) {
                warn("alignment: induction produced no pairs in round " + std::to_string(round) + ", stopping");
                break;
            }
            lex = std::move(induced);
        }
    }
    return out;
}

EmbeddingMatrix apply_alignment(const AlignmentMap& map, const EmbeddingMatrix& emb) {
    if (map.w.rows() != emb.dim() || map.w.cols() != emb.dim()) {
        throw DataError("apply_alignment: map is " + std::to_string(map.w.rows()) + "x" + std::to_string(map.w.cols()) +
                        " but embeddings have dim " + std::to_string(emb.dim()));
    }
    // Rows are row vectors, so each becomes v W^T.
    return EmbeddingMatrix(emb.tokens(), emb.vectors() * map.w.transposed());
}

void save_alignment(const AlignmentMap& map, const std::string& path) {
    nlohmann::ordered_json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["kind"] = "alignment";
    j["tensors"] = nlohmann::ordered_json::array(
        {tensor_to_json({"alignment.W", {map.w.rows(), map.w.cols()}, map.w.data()})});
    j["meta"] = {{"source_lang", map.source_lang}, {"target_lang", map.target_lang}};
    write_file(path, dump_json(j));
}

AlignmentMap load_alignment(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path + ": malformed alignment file: " + e.what());
    }
    if (!j.contains("tensors") || !j["tensors"].is_array()) throw DataError(path + ": no tensors");
    for (const auto& tj : j["tensors"]) {
        NamedTensor t = tensor_from_json(tj);
        if (t.name != "alignment.W") continue;
        if (t.shape.size() != 2 || t.shape[0] != t.shape[1]) throw DataError(path + ": alignment.W must be square");
        AlignmentMap map{Matrix(t.shape[0], t.shape[1], std::move(t.values)), {}, {}};
        if (j.contains("meta")) {
            map.source_lang = j["meta"].value("source_lang", "");
            map.target_lang = j["meta"].value("target_lang", "");
        }
        return map;
    }
    throw DataError(path + ": missing tensor alignment.W");
}

}  // namespace clir

#include "clir/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "clir/error.hpp"
#include "clir/random.hpp"

namespace clir::ad {

namespace {

std::atomic<std::uint64_t> g_seq{0};
thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

std::string shape_of(const Tensor& t) { return t.shape_str(); }

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
    throw NumericError(std::string(op) + ": shape mismatch " + detail);
}

/// Creates an op result; records parents and the backward rule only when a parent needs grad.
Tensor make(const char* op, std::size_t rows, std::size_t cols, std::vector<double> value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_fn) {
    for (double x : value) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value");
    }
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    n->op = op;
    if (g_grad_enabled) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || p->requires_grad;
        if (needs) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward = std::move(backward_fn);
        }
    }
    return Tensor(std::move(n));
}

}  // namespace

Tensor Tensor::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw NumericError("constant: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return constant(rows, cols, std::vector<double>(rows * cols)); }

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    Tensor t = constant(rows, cols, std::move(values));
    t.node_->requires_grad = true;
    t.node_->op = "parameter";
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw NumericError("item() on a " + shape_str() + " tensor");
    return node_->value[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return std::vector<double>(node_->value.size(), 0.0);
}

std::string Tensor::shape_str() const {
    if (!node_) return "undefined";
    return std::to_string(node_->rows) + "x" + std::to_string(node_->cols);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw NumericError("backward: output must be scalar, got " + loss.shape_str());
    }
    if (!loss.requires_grad()) return;
    // Creation order is a topological order; walk it in reverse.
    std::vector<Node*> all;
    std::unordered_set<Node*> marked;
    std::vector<Node*> pending{loss.node().get()};
    while (!pending.empty()) {
        Node* n = pending.back();
        pending.pop_back();
        if (!marked.insert(n).second) continue;
        all.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad) pending.push_back(p.get());
        }
    }
    std::sort(all.begin(), all.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
    for (Node* n : all) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (Node* n : all) {
        if (n->backward) n->backward(*n);
    }
}

std::vector<std::vector<double>> gradients(const Tensor& loss, std::span<const Tensor> params) {
    for (const auto& p : params) p.node()->grad.clear();
    backward(loss);
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.grad());
    return out;
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", shape_of(a) + " * " + shape_of(b));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    NodePtr an = a.node(), bn = b.node();
    return make("matmul", m, n, std::move(out), {an, bn}, [an, bn, m, k, n](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            const auto& bv = bn->value;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            const auto& av = an->value;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                }
        }
    });
}

namespace {

enum class Broadcast { none, row, scalar };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::none;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
    shape_error(op, shape_of(a) + " vs " + shape_of(b));
}

inline std::size_t bindex(Broadcast kind, std::size_t i, std::size_t cols) {
    switch (kind) {
        case Broadcast::none: return i;
        case Broadcast::row: return i % cols;
        case Broadcast::scalar: return 0;
    }
    return 0;
}

Tensor add_sub(const char* op, const Tensor& a, const Tensor& b, double sign) {
    const Broadcast kind = broadcast_kind(op, a, b);
    const std::size_t cols = a.cols();
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[bindex(kind, i, cols)];
    NodePtr an = a.node(), bn = b.node();
    return make(op, a.rows(), a.cols(), std::move(out), {an, bn}, [an, bn, kind, cols, sign](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(kind, i, cols)] += sign * g[i];
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_sub("add", a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_sub("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const Broadcast kind = broadcast_kind("mul", a, b);
    if (kind == Broadcast::row) shape_error("mul", shape_of(a) + " vs " + shape_of(b));
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[bindex(kind, i, a.cols())];
    NodePtr an = a.node(), bn = b.node();
    const std::size_t cols = a.cols();
    return make("mul", a.rows(), a.cols(), std::move(out), {an, bn}, [an, bn, kind, cols](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[bindex(kind, i, cols)];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[bindex(kind, i, cols)] += g[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.values());
    for (double& x : out) x *= c;
    NodePtr an = a.node();
    return make("scale", a.rows(), a.cols(), std::move(out), {an}, [an, c](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw NumericError("concat_cols: no inputs");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) shape_error("concat_cols", shape_of(parts[0]) + " vs " + shape_of(p));
        cols += p.cols();
    }
    std::vector<double> out(rows * cols);
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(r * p.cols()), p.cols(),
                        out.begin() + static_cast<std::ptrdiff_t>(r * cols + off));
        nodes.push_back(p.node());
        offsets.push_back(off);
        off += p.cols();
    }
    return make("concat_cols", rows, cols, std::move(out), nodes, [nodes, offsets, rows, cols](Node& self) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            Node& p = *nodes[k];
            if (!p.requires_grad) continue;
            auto& gp = p.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < p.cols; ++c) gp[r * p.cols + c] += self.grad[r * cols + offsets[k] + c];
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: no inputs");
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) shape_error("concat_rows", shape_of(parts[0]) + " vs " + shape_of(p));
        rows += p.rows();
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        nodes.push_back(p.node());
    }
    return make("concat_rows", rows, cols, std::move(out), nodes, [nodes](Node& self) {
        std::size_t off = 0;
        for (const auto& p : nodes) {
            if (p->requires_grad) {
                auto& gp = p->grad_buffer();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[off + i];
            }
            off += p->value.size();
        }
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) {
        shape_error("slice_rows", shape_of(a) + " [" + std::to_string(begin) + "," + std::to_string(end) + ")");
    }
    const std::size_t cols = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                            a.values().begin() + static_cast<std::ptrdiff_t>(end * cols));
    NodePtr an = a.node();
    return make("slice_rows", end - begin, cols, std::move(out), {an}, [an, begin, cols](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * cols + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols()) {
        shape_error("slice_cols", shape_of(a) + " [" + std::to_string(begin) + "," + std::to_string(end) + ")");
    }
    const std::size_t rows = a.rows(), cols = a.cols(), w = end - begin;
    std::vector<double> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a.values()[r * cols + begin + c];
    NodePtr an = a.node();
    return make("slice_cols", rows, w, std::move(out), {an}, [an, begin, rows, cols, w](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += self.grad[r * w + c];
    });
}

Tensor transpose(const Tensor& a) {
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a.values()[r * cols + c];
    NodePtr an = a.node();
    return make("transpose", cols, rows, std::move(out), {an}, [an, rows, cols](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[c * rows + r];
    });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size()) shape_error("reshape", shape_of(a) + " -> " + std::to_string(rows) + "x" + std::to_string(cols));
    NodePtr an = a.node();
    return make("reshape", rows, cols, a.values(), {an}, [an](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

namespace {

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdy) {
    std::vector<double> out(a.values());
    for (double& x : out) x = f(x);
    NodePtr an = a.node();
    return make(op, a.rows(), a.cols(), std::move(out), {an}, [an, dfdy](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * dfdy(an->value[i], self.value[i]);
    });
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor tanh(const Tensor& a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& a) {
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(a.values());
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += (row[c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) row[c] /= s;
    }
    NodePtr an = a.node();
    return make("softmax_rows", rows, cols, std::move(out), {an}, [an, rows, cols](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double dotp = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dotp += g[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (g[c] - dotp);
        }
    });
}

Tensor dropout(const Tensor& a, double p, bool train, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw NumericError("dropout: rate must be in [0,1)");
    if (!train || p == 0.0) return a;
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(a.size());
    for (double& m : mask) m = uniform01(rng) >= p ? keep_scale : 0.0;
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    NodePtr an = a.node();
    return make("dropout", a.rows(), a.cols(), std::move(out), {an}, [an, mask = std::move(mask)](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * mask[i];
    });
}

namespace {

/// Column indices of each row's k largest values, descending; ties keep the lower index first.
std::vector<std::size_t> topk_indices(const double* row, std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t kk = std::min(k, n);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), [row](std::size_t x, std::size_t y) {
        if (row[x] != row[y]) return row[x] > row[y];
        return x < y;
    });
    idx.resize(kk);
    return idx;
}

}  // namespace

Tensor kmax_pool_row(const Tensor& a, std::size_t k) {
    if (k == 0) throw NumericError("kmax_pool_row: k must be >= 1");
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> out(rows * k, 0.0);
    // Source column per output slot; cols means padding.
    std::vector<std::size_t> src(rows * k, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.values().data() + r * cols;
        auto idx = topk_indices(row, cols, k);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out[r * k + j] = row[idx[j]];
            src[r * k + j] = idx[j];
        }
    }
    NodePtr an = a.node();
    return make("kmax_pool_row", rows, k, std::move(out), {an}, [an, src = std::move(src), k, cols](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i] == cols) continue;
            const std::size_t r = i / k;
            ga[r * cols + src[i]] += self.grad[i];
        }
    });
}

Tensor max_pool_row(const Tensor& a) {
    if (a.cols() == 0) shape_error("max_pool_row", shape_of(a));
    return kmax_pool_row(a, 1);
}

Tensor row_mean(const Tensor& a) {
    const std::size_t rows = a.rows(), cols = a.cols();
    if (cols == 0) shape_error("row_mean", shape_of(a));
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += a.values()[r * cols + c];
        out[r] = s / static_cast<double>(cols);
    }
    NodePtr an = a.node();
    return make("row_mean", rows, 1, std::move(out), {an}, [an, cols](Node& self) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i / cols] / static_cast<double>(cols);
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    NodePtr an = a.node();
    return make("sum", 1, 1, {s}, {an}, [an](Node& self) {
        auto& ga = an->grad_buffer();
        for (double& g : ga) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) shape_error("mean", shape_of(a));
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) shape_error("cosine_sim_matrix", shape_of(a) + " vs " + shape_of(b));
    const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
    auto norms = [d](const std::vector<double>& v, std::size_t rows) {
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += v[r * d + c] * v[r * d + c];
            out[r] = std::sqrt(s);
        }
        return out;
    };
    std::vector<double> na = norms(a.values(), m), nb = norms(b.values(), n);
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (na[i] == 0.0) continue;
        const double* ai = a.values().data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            if (nb[j] == 0.0) continue;
            const double* bj = b.values().data() + j * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += ai[c] * bj[c];
            out[i * n + j] = s / (na[i] * nb[j]);
        }
    }
    NodePtr an = a.node(), bn = b.node();
    return make("cosine_sim_matrix", m, n, std::move(out), {an, bn},
                [an, bn, m, n, d, na = std::move(na), nb = std::move(nb)](Node& self) {
                    const auto& g = self.grad;
                    const auto& s = self.value;
                    const auto& av = an->value;
                    const auto& bv = bn->value;
                    // dS_ij/da_i = (b_j/|b_j| - S_ij a_i/|a_i|) / |a_i|, symmetric for b_j.
                    if (an->requires_grad) {
                        auto& ga = an->grad_buffer();
                        for (std::size_t i = 0; i < m; ++i) {
                            if (na[i] == 0.0) continue;
                            for (std::size_t j = 0; j < n; ++j) {
                                if (nb[j] == 0.0) continue;
                                const double gij = g[i * n + j];
                                if (gij == 0.0) continue;
                                const double sij = s[i * n + j];
                                for (std::size_t c = 0; c < d; ++c) {
                                    ga[i * d + c] += gij * (bv[j * d + c] / nb[j] - sij * av[i * d + c] / na[i]) / na[i];
                                }
                            }
                        }
                    }
                    if (bn->requires_grad) {
                        auto& gb = bn->grad_buffer();
                        for (std::size_t j = 0; j < n; ++j) {
                            if (nb[j] == 0.0) continue;
                            for (std::size_t i = 0; i < m; ++i) {
                                if (na[i] == 0.0) continue;
                                const double gij = g[i * n + j];
                                if (gij == 0.0) continue;
                                const double sij = s[i * n + j];
                                for (std::size_t c = 0; c < d; ++c) {
                                    gb[j * d + c] += gij * (av[i * d + c] / na[i] - sij * bv[j * d + c] / nb[j]) / nb[j];
                                }
                            }
                        }
                    }
                });
}

std::pair<std::size_t, std::size_t> conv2d_output_shape(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                                       Padding padding) {
    if (padding == Padding::same) return {h, w};
    if (kh > h || kw > w) return {0, 0};
    return {h - kh + 1, w - kw + 1};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t kh, std::size_t kw,
              Padding padding) {
    const std::size_t h = input.rows(), w = input.cols(), f = weight.rows();
    if (kh == 0 || kw == 0 || weight.cols() != kh * kw) {
        shape_error("conv2d", "weight " + shape_of(weight) + " for kernel " + std::to_string(kh) + "x" + std::to_string(kw));
    }
    if (bias.rows() != 1 || bias.cols() != f) shape_error("conv2d", "bias " + shape_of(bias) + " for " + std::to_string(f) + " filters");
    if (padding == Padding::valid && (kh > h || kw > w)) {
        shape_error("conv2d", "input " + shape_of(input) + " smaller than kernel");
    }
    const auto [oh, ow] = conv2d_output_shape(h, w, kh, kw, padding);
    const std::ptrdiff_t pt = padding == Padding::same ? static_cast<std::ptrdiff_t>((kh - 1) / 2) : 0;
    const std::ptrdiff_t pl = padding == Padding::same ? static_cast<std::ptrdiff_t>((kw - 1) / 2) : 0;

    // For kernel offset (a, b) and output row i, the input position is (i + a - pt, j + b - pl);
    // valid output columns j satisfy 0 <= j + b - pl < w.
    struct Span {
        std::size_t j0, j1;
    };
    auto col_span = [pl, ow = ow, w](std::size_t b) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(b) - pl;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow), static_cast<std::ptrdiff_t>(w) - shift);
        return Span{static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
    };

    std::vector<double> out(f * oh * ow);
    const auto& in = input.values();
    const auto& wt = weight.values();
    for (std::size_t fi = 0; fi < f; ++fi) {
        double* o = out.data() + fi * oh * ow;
        std::fill(o, o + oh * ow, bias.values()[fi]);
        for (std::size_t a = 0; a < kh; ++a) {
            for (std::size_t b = 0; b < kw; ++b) {
                const double wv = wt[fi * kh * kw + a * kw + b];
                if (wv == 0.0) continue;
                const Span s = col_span(b);
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(b) - pl;
                for (std::size_t i = 0; i < oh; ++i) {
                    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + a) - pt;
                    if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
                    const double* irow = in.data() + static_cast<std::size_t>(r) * w;
                    double* orow = o + i * ow;
                    for (std::size_t j = s.j0; j < s.j1; ++j) {
                        orow[j] += wv * irow[static_cast<std::ptrdiff_t>(j) + shift];
                    }
                }
            }
        }
    }
    NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.node();
    return make("conv2d", f, oh * ow, std::move(out), {in_n, w_n, b_n},
                [in_n, w_n, b_n, h, w, f, kh, kw, oh = oh, ow = ow, pt, pl, col_span](Node& self) {
                    const auto& g = self.grad;
                    if (b_n->requires_grad) {
                        auto& gb = b_n->grad_buffer();
                        for (std::size_t fi = 0; fi < f; ++fi) {
                            double s = 0.0;
                            for (std::size_t p = 0; p < oh * ow; ++p) s += g[fi * oh * ow + p];
                            gb[fi] += s;
                        }
                    }
                    const bool need_w = w_n->requires_grad, need_in = in_n->requires_grad;
                    if (!need_w && !need_in) return;
                    const auto& in = in_n->value;
                    const auto& wt = w_n->value;
                    std::vector<double>* gw = need_w ? &w_n->grad_buffer() : nullptr;
                    std::vector<double>* gin = need_in ? &in_n->grad_buffer() : nullptr;
                    for (std::size_t fi = 0; fi < f; ++fi) {
                        const double* go = g.data() + fi * oh * ow;
                        for (std::size_t a = 0; a < kh; ++a) {
                            for (std::size_t b = 0; b < kw; ++b) {
                                const auto s = col_span(b);
                                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(b) - pl;
                                const std::size_t widx = fi * kh * kw + a * kw + b;
                                const double wv = wt[widx];
                                double acc = 0.0;
                                for (std::size_t i = 0; i < oh; ++i) {
                                    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + a) - pt;
                                    if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
                                    const std::size_t ibase = static_cast<std::size_t>(r) * w;
                                    const double* grow = go + i * ow;
                                    for (std::size_t j = s.j0; j < s.j1; ++j) {
                                        const std::size_t ii = ibase + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + shift);
                                        acc += grow[j] * in[ii];
                                        if (gin) (*gin)[ii] += grow[j] * wv;
                                    }
                                }
                                if (gw) (*gw)[widx] += acc;
                            }
                        }
                    }
                });
}

namespace {

struct LstmTape {
    std::vector<double> gates;  // L x 4h, post-activation i, f, g, o
    std::vector<double> cell;   // L x h
    std::vector<double> tanh_cell;
};

}  // namespace

Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse) {
    const std::size_t len = x.rows(), d = x.cols(), h = w_hh.rows(), h4 = 4 * h;
    if (w_ih.rows() != d || w_ih.cols() != h4 || w_hh.cols() != h4 || bias.rows() != 1 || bias.cols() != h4) {
        shape_error("lstm", "x " + shape_of(x) + ", w_ih " + shape_of(w_ih) + ", w_hh " + shape_of(w_hh) + ", bias " +
                                shape_of(bias));
    }
    const auto& xv = x.values();
    const auto& wi = w_ih.values();
    const auto& wh = w_hh.values();
    const auto& bv = bias.values();

    auto tape = std::make_shared<LstmTape>();
    tape->gates.assign(len * h4, 0.0);
    tape->cell.assign(len * h, 0.0);
    tape->tanh_cell.assign(len * h, 0.0);
    std::vector<double> out(len * h, 0.0);
    std::vector<double> z(h4);
    for (std::size_t s = 0; s < len; ++s) {
        const std::size_t t = reverse ? len - 1 - s : s;
        const bool first = s == 0;
        const std::size_t prev = reverse ? t + 1 : t - 1;
        std::copy(bv.begin(), bv.end(), z.begin());
        for (std::size_t k = 0; k < d; ++k) {
            const double xk = xv[t * d + k];
            if (xk == 0.0) continue;
            const double* wrow = wi.data() + k * h4;
            for (std::size_t j = 0; j < h4; ++j) z[j] += xk * wrow[j];
        }
        if (!first) {
            for (std::size_t k = 0; k < h; ++k) {
                const double hk = out[prev * h + k];
                if (hk == 0.0) continue;
                const double* wrow = wh.data() + k * h4;
                for (std::size_t j = 0; j < h4; ++j) z[j] += hk * wrow[j];
            }
        }
        double* gt = tape->gates.data() + t * h4;
        for (std::size_t j = 0; j < h; ++j) {
            gt[j] = stable_sigmoid(z[j]);
            gt[h + j] = stable_sigmoid(z[h + j]);
            gt[2 * h + j] = std::tanh(z[2 * h + j]);
            gt[3 * h + j] = stable_sigmoid(z[3 * h + j]);
            const double c_prev = first ? 0.0 : tape->cell[prev * h + j];
            const double c = gt[h + j] * c_prev + gt[j] * gt[2 * h + j];
            tape->cell[t * h + j] = c;
            tape->tanh_cell[t * h + j] = std::tanh(c);
            out[t * h + j] = gt[3 * h + j] * tape->tanh_cell[t * h + j];
        }
    }

    NodePtr xn = x.node(), wi_n = w_ih.node(), wh_n = w_hh.node(), b_n = bias.node();
    return make("lstm", len, h, std::move(out), {xn, wi_n, wh_n, b_n},
                [xn, wi_n, wh_n, b_n, tape, len, d, h, h4, reverse](Node& self) {
                    const auto& gh = self.grad;
                    const auto& hv = self.value;
                    const auto& xv = xn->value;
                    const auto& wi = wi_n->value;
                    const auto& wh = wh_n->value;
                    std::vector<double> dz_all(len * h4, 0.0);
                    std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0);
                    std::vector<double>* gwh = wh_n->requires_grad ? &wh_n->grad_buffer() : nullptr;
                    for (std::size_t s = len; s-- > 0;) {
                        const std::size_t t = reverse ? len - 1 - s : s;
                        const bool first = s == 0;
                        const std::size_t prev = reverse ? t + 1 : t - 1;
                        const double* gt = tape->gates.data() + t * h4;
                        double* dz = dz_all.data() + t * h4;
                        for (std::size_t j = 0; j < h; ++j) {
                            const double ig = gt[j], fg = gt[h + j], gg = gt[2 * h + j], og = gt[3 * h + j];
                            const double tc = tape->tanh_cell[t * h + j];
                            const double dh = gh[t * h + j] + dh_next[j];
                            const double dc = dc_next[j] + dh * og * (1.0 - tc * tc);
                            const double c_prev = first ? 0.0 : tape->cell[prev * h + j];
                            dz[j] = dc * gg * ig * (1.0 - ig);
                            dz[h + j] = dc * c_prev * fg * (1.0 - fg);
                            dz[2 * h + j] = dc * ig * (1.0 - gg * gg);
                            dz[3 * h + j] = dh * tc * og * (1.0 - og);
                            dc_next[j] = dc * fg;
                        }
                        std::fill(dh_next.begin(), dh_next.end(), 0.0);
                        if (!first) {
                            for (std::size_t k = 0; k < h; ++k) {
                                const double* wrow = wh.data() + k * h4;
                                double acc = 0.0;
                                for (std::size_t j = 0; j < h4; ++j) acc += dz[j] * wrow[j];
                                dh_next[k] = acc;
                                if (gwh) {
                                    const double hk = hv[prev * h + k];
                                    if (hk != 0.0) {
                                        double* grow = gwh->data() + k * h4;
                                        for (std::size_t j = 0; j < h4; ++j) grow[j] += hk * dz[j];
                                    }
                                }
                            }
                        }
                    }
                    if (b_n->requires_grad) {
                        auto& gb = b_n->grad_buffer();
                        for (std::size_t t = 0; t < len; ++t)
                            for (std::size_t j = 0; j < h4; ++j) gb[j] += dz_all[t * h4 + j];
                    }
                    if (wi_n->requires_grad) {
                        auto& gw = wi_n->grad_buffer();
                        for (std::size_t t = 0; t < len; ++t)
                            for (std::size_t k = 0; k < d; ++k) {
                                const double xk = xv[t * d + k];
                                if (xk == 0.0) continue;
                                double* grow = gw.data() + k * h4;
                                const double* dz = dz_all.data() + t * h4;
                                for (std::size_t j = 0; j < h4; ++j) grow[j] += xk * dz[j];
                            }
                    }
                    if (xn->requires_grad) {
                        auto& gx = xn->grad_buffer();
                        for (std::size_t t = 0; t < len; ++t)
                            for (std::size_t k = 0; k < d; ++k) {
                                const double* wrow = wi.data() + k * h4;
                                const double* dz = dz_all.data() + t * h4;
                                double acc = 0.0;
                                for (std::size_t j = 0; j < h4; ++j) acc += dz[j] * wrow[j];
                                gx[t * d + k] += acc;
                            }
                    }
                });
}

Tensor bce_with_logits(const Tensor& logit, double label) {
    if (logit.size() != 1) shape_error("bce_with_logits", shape_of(logit));
    const double s = logit.values()[0];
    // max(s, 0) - s*y + log(1 + exp(-|s|))
    const double loss = std::max(s, 0.0) - s * label + std::log1p(std::exp(-std::abs(s)));
    NodePtr ln = logit.node();
    return make("bce_with_logits", 1, 1, {loss}, {ln}, [ln, s, label](Node& self) {
        ln->grad_buffer()[0] += self.grad[0] * (stable_sigmoid(s) - label);
    });
}

std::vector<double> kmax_with_padding(std::span<const double> row, std::size_t k) {
    std::vector<double> out(k, 0.0);
    auto idx = topk_indices(row.data(), row.size(), k);
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = row[idx[j]];
    return out;
}

void adam_step(std::span<Tensor> params, const std::vector<std::vector<double>>& grads, AdamState& state) {
    if (grads.size() != params.size()) throw NumericError("adam_step: gradient count does not match parameters");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw NumericError("adam_step: optimizer state does not match parameters");
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].mutable_values();
        const auto& g = grads[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (g.size() != theta.size() || m.size() != theta.size()) throw NumericError("adam_step: shape mismatch");
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace clir::ad

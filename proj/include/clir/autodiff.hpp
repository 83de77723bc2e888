#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense row-major matrices
// of doubles. Every tensor is 2-D; vectors are 1 x n or n x 1.

namespace clir::ad {

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor zeros(std::size_t rows, std::size_t cols);
    /// Leaf that accumulates gradients.
    static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] std::size_t rows() const { return node_->rows; }
    [[nodiscard]] std::size_t cols() const { return node_->cols; }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

    [[nodiscard]] const std::vector<double>& values() const { return node_->value; }
    /// Mutable access for optimizers and finite-difference probes; invalidates any graph built from it.
    [[nodiscard]] std::vector<double>& mutable_values() { return node_->value; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    /// Value of a 1 x 1 tensor.
    [[nodiscard]] double item() const;

    /// Gradient accumulated by `backward`; zeros if none has reached this tensor.
    [[nodiscard]] std::vector<double> grad() const;
    void zero_grad() { node_->grad.clear(); }

    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }
    [[nodiscard]] std::string shape_str() const;

  private:
    std::shared_ptr<Node> node_;
};

/// While alive, new ops on this thread record no graph.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

/// Reverse pass from a 1 x 1 tensor. Parameter gradients accumulate across calls.
void backward(const Tensor& loss);

/// Gradients of a scalar with respect to `params` (their accumulators are reset first).
std::vector<std::vector<double>> gradients(const Tensor& loss, std::span<const Tensor> params);

// -- primitives --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Same shape, or `b` a 1 x cols row broadcast over rows, or `b` 1 x 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise; `b` may be 1 x 1.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);

/// Inverted dropout: identity unless `train`; survivors scaled by 1/(1-p). The mask is a
/// pure function of `seed`.
Tensor dropout(const Tensor& a, double p, bool train, std::uint64_t seed);

/// r x c -> r x 1 row maxima (first maximum on ties).
Tensor max_pool_row(const Tensor& a);
/// r x c -> r x k, each row's k largest values in descending order, zero-padded when c < k.
Tensor kmax_pool_row(const Tensor& a, std::size_t k);
/// r x c -> r x 1 row means.
Tensor row_mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// m x d, n x d -> m x n cosine similarities; rows with zero norm give 0.
Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b);

enum class Padding { valid, same };

/// Single-channel 2-D cross-correlation with F filters.
/// input H x W, weight F x (kh*kw) row-major kernels, bias 1 x F -> F x (H'*W').
/// `same` zero-pads (kh-1)/2 rows on top and (kw-1)/2 columns on the left.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t kh, std::size_t kw,
              Padding padding);
/// Output height/width of conv2d.
std::pair<std::size_t, std::size_t> conv2d_output_shape(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                                       Padding padding);

/// Single-layer unidirectional LSTM over the rows of x (L x d), gates ordered i, f, g, o.
/// w_ih d x 4h, w_hh h x 4h, bias 1 x 4h -> L x h; with `reverse` the sequence is read
/// back to front but row t of the output still belongs to input row t.
Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse);

/// -[y ln sigma(s) + (1-y) ln(1 - sigma(s))] for a 1 x 1 logit, computed in log space.
Tensor bce_with_logits(const Tensor& logit, double label);

/// Descending top-k of `row`, zero-padded to k entries.
std::vector<double> kmax_with_padding(std::span<const double> row, std::size_t k);

// -- optimizer ---------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<Tensor> params, const std::vector<std::vector<double>>& grads, AdamState& state);

}  // namespace clir::ad

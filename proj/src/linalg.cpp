#include "clir/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "clir/error.hpp"
#include "clir/random.hpp"

namespace clir {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw NumericError("matrix data size " + std::to_string(data_.size()) + " does not match " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw NumericError("matrix product shape mismatch " + std::to_string(a.rows()) + "x" +
                           std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw NumericError("matrix difference shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double x : m.data()) best = std::max(best, std::abs(x));
    return best;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

double orthogonality_error(const Matrix& a) {
    Matrix g = a.transposed() * a;
    return max_abs(g - Matrix::identity(g.rows()));
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

namespace {

// Fills columns of `u` flagged as missing with an orthonormal completion of the
// others (Gram-Schmidt against the standard basis).
void complete_basis(Matrix& u, const std::vector<bool>& have) {
    const std::size_t n = u.rows();
    std::vector<double> cand(n);
    std::size_t next_basis = 0;
    for (std::size_t c = 0; c < n; ++c) {
        if (have[c]) continue;
        for (;;) {
            if (next_basis >= n) throw NumericError("svd: failed to complete orthonormal basis");
            std::fill(cand.begin(), cand.end(), 0.0);
            cand[next_basis++] = 1.0;
            // Two passes of modified Gram-Schmidt for stability.
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t k = 0; k < n; ++k) {
                    if (!have[k] && k >= c) continue;
                    double p = 0.0;
                    for (std::size_t r = 0; r < n; ++r) p += u(r, k) * cand[r];
                    for (std::size_t r = 0; r < n; ++r) cand[r] -= p * u(r, k);
                }
            }
            double nrm = norm2(cand);
            if (nrm > 1e-6) {
                for (std::size_t r = 0; r < n; ++r) u(r, c) = cand[r] / nrm;
                break;
            }
        }
    }
}

}  // namespace

Svd svd_small(const Matrix& m) {
    const std::size_t n = m.rows();
    if (m.cols() != n) throw NumericError("svd_small expects a square matrix");
    if (n > 1024) throw NumericError("svd_small supports dimensions up to 1024");
    for (double x : m.data()) {
        if (!std::isfinite(x)) throw NumericError("svd_small: non-finite input");
    }

    // Work on columns of A = M; rotations accumulate in V so that A V = U S.
    Matrix a = m;
    Matrix v = Matrix::identity(n);
    constexpr double tol = 1e-13;
    constexpr int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    const double ap = a(r, p), aq = a(r, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < n; ++r) {
                    const double ap = a(r, p), aq = a(r, q);
                    a(r, p) = c * ap - s * aq;
                    a(r, q) = s * ap + c * aq;
                    const double vp = v(r, p), vq = v(r, q);
                    v(r, p) = c * vp - s * vq;
                    v(r, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(n);
    for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += a(r, c) * a(r, c);
        sv[c] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

    Svd out{Matrix(n, n), std::vector<double>(n), Matrix(n, n)};
    const double scale = sv.empty() ? 0.0 : sv[order[0]];
    std::vector<bool> have(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t c = order[k];
        out.s[k] = sv[c];
        for (std::size_t r = 0; r < n; ++r) out.v(r, k) = v(r, c);
        if (sv[c] > 1e-300 && sv[c] > scale * 1e-13) {
            for (std::size_t r = 0; r < n; ++r) out.u(r, k) = a(r, c) / sv[c];
            have[k] = true;
        }
    }
    complete_basis(out.u, have);
    return out;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
    Matrix g(n, n);
    for (double& x : g.data()) x = normal(rng);
    // Modified Gram-Schmidt on columns; sign follows R's diagonal being positive.
    Matrix q(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<double> col(n);
        for (std::size_t r = 0; r < n; ++r) col[r] = g(r, c);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < c; ++k) {
                double p = 0.0;
                for (std::size_t r = 0; r < n; ++r) p += q(r, k) * col[r];
                for (std::size_t r = 0; r < n; ++r) col[r] -= p * q(r, k);
            }
        }
        const double nrm = norm2(col);
        if (nrm < 1e-12) throw NumericError("random_orthogonal: degenerate draw");
        for (std::size_t r = 0; r < n; ++r) q(r, c) = col[r] / nrm;
    }
    return q;
}

}  // namespace clir

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "clir/error.hpp"
#include "clir/linalg.hpp"
#include "clir/random.hpp"

using namespace clir;

namespace {

Matrix reconstruct(const Svd& s) {
    Matrix us = s.u;
    for (std::size_t r = 0; r < us.rows(); ++r)
        for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s.s[c];
    return us * s.v.transposed();
}

void expect_valid_svd(const Matrix& m, const Svd& s) {
    const double tol = 1e-8 * std::max(1.0, max_abs(m));
    EXPECT_LT(max_abs(reconstruct(s) - m), tol);
    EXPECT_LT(orthogonality_error(s.u), 1e-8);
    EXPECT_LT(orthogonality_error(s.v), 1e-8);
    for (std::size_t i = 0; i < s.s.size(); ++i) {
        EXPECT_GE(s.s[i], 0.0);
        if (i > 0) EXPECT_GE(s.s[i - 1], s.s[i]);
    }
}

}  // namespace

TEST(Svd, Identity) {
    auto s = svd_small(Matrix::identity(3));
    for (double x : s.s) EXPECT_NEAR(x, 1.0, 1e-12);
    expect_valid_svd(Matrix::identity(3), s);
}

TEST(Svd, Diagonal) {
    Matrix m(3, 3);
    m(0, 0) = 1;
    m(1, 1) = 3;
    m(2, 2) = 2;
    auto s = svd_small(m);
    EXPECT_NEAR(s.s[0], 3.0, 1e-12);
    EXPECT_NEAR(s.s[1], 2.0, 1e-12);
    EXPECT_NEAR(s.s[2], 1.0, 1e-12);
    expect_valid_svd(m, s);
}

TEST(Svd, Random8x8) {
    Rng rng(3);
    Matrix m(8, 8);
    for (double& x : m.data()) x = normal(rng);
    expect_valid_svd(m, svd_small(m));
}

TEST(Svd, RankDeficientStillOrthogonal) {
    Rng rng(4);
    Matrix a(6, 2), b(2, 6);
    for (double& x : a.data()) x = normal(rng);
    for (double& x : b.data()) x = normal(rng);
    Matrix m = a * b;  // rank 2
    auto s = svd_small(m);
    expect_valid_svd(m, s);
    EXPECT_LT(s.s[2], 1e-10);
    expect_valid_svd(Matrix(4, 4), svd_small(Matrix(4, 4)));
}

TEST(Svd, PropertyOverManyRandomMatrices) {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 32);
        Matrix m(n, n);
        const double scale = std::pow(10.0, uniform(rng, -3.0, 3.0));
        for (double& x : m.data()) x = scale * normal(rng);
        auto s = svd_small(m);
        const double tol = 1e-8 * std::max(1.0, max_abs(m));
        ASSERT_LT(max_abs(reconstruct(s) - m), tol) << "trial " << trial << " n=" << n;
        ASSERT_LT(orthogonality_error(s.u), 1e-8) << "trial " << trial;
        ASSERT_LT(orthogonality_error(s.v), 1e-8) << "trial " << trial;
        ASSERT_TRUE(std::is_sorted(s.s.rbegin(), s.s.rend()));
    }
}

TEST(Svd, RejectsNonFinite) {
    Matrix m = Matrix::identity(2);
    m(0, 1) = std::nan("");
    EXPECT_THROW(svd_small(m), NumericError);
    EXPECT_THROW(svd_small(Matrix(2, 3)), NumericError);
}

TEST(RandomOrthogonal, IsOrthogonal) {
    Rng rng(9);
    for (std::size_t n : {1u, 2u, 10u, 50u}) EXPECT_LT(orthogonality_error(random_orthogonal(n, rng)), 1e-12);
}

TEST(Cosine, ZeroVectorGivesZero) {
    std::vector<double> a{1, 0}, z{0, 0};
    EXPECT_EQ(cosine(a, z), 0.0);
    EXPECT_DOUBLE_EQ(cosine(a, a), 1.0);
}

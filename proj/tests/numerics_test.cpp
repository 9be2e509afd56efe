#include <gtest/gtest.h>

#include <random>

#include "vsparta/numerics.hpp"

using namespace vsparta;

namespace {

// Plain triple loop, written independently of matmul's loop order.
Matrix<double> reference_product(const Matrix<double>& a, const Matrix<double>& b)
{
    Matrix<double> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += a(i, k) * b(k, j);
            }
            out(i, j) = s;
        }
    }
    return out;
}

Matrix<float> random_matrix(std::size_t r, std::size_t c, std::mt19937& rng, float bound)
{
    std::uniform_real_distribution<float> u(-bound, bound);
    Matrix<float> m(r, c);
    for (auto& v : m.data()) {
        v = u(rng);
    }
    return m;
}

}  // namespace

TEST(Matrix, RejectsDataOfWrongLength)
{
    EXPECT_THROW(Matrix<float>(2, 3, std::vector<float>(5)), DimensionError);
    EXPECT_NO_THROW(Matrix<float>(2, 3, std::vector<float>(6)));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged)
{
    const auto id = Matrix<float>::from_rows({{1, 0}, {0, 1}});
    const auto m = Matrix<float>::from_rows({{2.5F, -1}, {7, 0.25F}});
    EXPECT_EQ(matmul(id, m), m);
}

TEST(Matmul, HandComputed)
{
    const auto a = Matrix<float>::from_rows({{1, 2}, {3, 4}});
    const auto b = Matrix<float>::from_rows({{1}, {1}});
    EXPECT_EQ(matmul(a, b), Matrix<float>::from_rows({{3}, {7}}));
}

TEST(Matmul, DimensionMismatchThrows)
{
    EXPECT_THROW(matmul(Matrix<float>(2, 3), Matrix<float>(2, 3)), DimensionError);
}

TEST(Matmul, MatchesTripleLoopOracle)
{
    std::mt19937 rng(11);
    const auto a = random_matrix(5, 7, rng, 1.0F);
    const auto b = random_matrix(7, 3, rng, 1.0F);
    const auto got = matmul(a, b);
    const auto want = reference_product(a.cast<double>(), b.cast<double>());
    for (std::size_t i = 0; i < got.rows(); ++i) {
        for (std::size_t j = 0; j < got.cols(); ++j) {
            EXPECT_NEAR(got(i, j), want(i, j), 1e-6);
        }
    }
}

// Property: sizes up to 32, values bounded by 10. Compared in double so the
// tolerance is about the summation order, not about float rounding.
TEST(Matmul, OracleAgreementOverRandomShapes)
{
    std::mt19937 rng(5);
    std::uniform_int_distribution<std::size_t> dim(1, 32);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t r = dim(rng);
        const std::size_t n = dim(rng);
        const std::size_t c = dim(rng);
        Matrix<double> a(r, n);
        Matrix<double> b(n, c);
        for (auto& v : a.data()) v = u(rng);
        for (auto& v : b.data()) v = u(rng);
        const auto got = matmul(a, b);
        const auto want = reference_product(a, b);
        for (std::size_t i = 0; i < got.size(); ++i) {
            ASSERT_NEAR(got.data()[i], want.data()[i], 1e-6) << "trial " << trial;
        }
    }
}

TEST(Matmul, TransposedVariantsAgreeWithPlainProduct)
{
    std::mt19937 rng(3);
    const auto a = random_matrix(4, 6, rng, 2.0F).cast<double>();
    const auto b = random_matrix(4, 5, rng, 2.0F).cast<double>();
    const auto c = random_matrix(3, 6, rng, 2.0F).cast<double>();

    Matrix<double> at(6, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) at(j, i) = a(i, j);
    Matrix<double> ct(6, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 6; ++j) ct(j, i) = c(i, j);

    const auto atb = matmul_at_b(a, b);
    const auto atb_ref = reference_product(at, b);
    const auto act = matmul_a_bt(a, c);
    const auto act_ref = reference_product(a, ct);
    for (std::size_t i = 0; i < atb.size(); ++i) EXPECT_NEAR(atb.data()[i], atb_ref.data()[i], 1e-9);
    for (std::size_t i = 0; i < act.size(); ++i) EXPECT_NEAR(act.data()[i], act_ref.data()[i], 1e-9);
}

TEST(Affine, BackwardMatchesFiniteDifferences)
{
    std::mt19937 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix<double> x(3, 4);
    for (auto& v : x.data()) v = g(rng);
    ParamTensor<double> w({4, 5});
    ParamTensor<double> b({5});
    for (auto& v : w.values) v = g(rng);
    for (auto& v : b.values) v = g(rng);
    Matrix<double> upstream(3, 5);
    for (auto& v : upstream.data()) v = g(rng);

    auto loss = [&](const ParamTensor<double>& ww, const ParamTensor<double>& bb, const Matrix<double>& xx) {
        const auto y = affine(xx, ww, bb);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * upstream.data()[i];
        return s;
    };
    const auto dx = affine_backward(x, upstream, w, b);

    auto rw = check_gradient([&](const ParamTensor<double>& p) { return loss(p, b, x); }, w, 1e-5, 1e-6);
    auto rb = check_gradient([&](const ParamTensor<double>& p) { return loss(w, p, x); }, b, 1e-5, 1e-6);
    EXPECT_TRUE(rw.passed) << rw.max_relative_error;
    EXPECT_TRUE(rb.passed) << rb.max_relative_error;

    for (std::size_t i = 0; i < x.size(); ++i) {
        auto xp = x;
        auto xm = x;
        xp.data()[i] += 1e-5;
        xm.data()[i] -= 1e-5;
        const double numeric = (loss(w, b, xp) - loss(w, b, xm)) / 2e-5;
        EXPECT_NEAR(dx.data()[i], numeric, 1e-6);
    }
}

TEST(Relu, Examples)
{
    EXPECT_EQ(relu(3.5F), 3.5F);
    EXPECT_EQ(relu(-2.0F), 0.0F);
    EXPECT_EQ(relu(0.0F), 0.0F);
}

TEST(Relu, NonNegativeAndIdentityOnPositives)
{
    std::mt19937 rng(17);
    std::uniform_real_distribution<float> u(-1e6F, 1e6F);
    for (int i = 0; i < 10000; ++i) {
        const float x = u(rng);
        ASSERT_GE(relu(x), 0.0F);
        if (x >= 0.0F) {
            ASSERT_EQ(relu(x), x);
        }
    }
}

TEST(Gelu, DerivativeMatchesDifferenceQuotient)
{
    for (double x = -4.0; x <= 4.0; x += 0.25) {
        const double numeric = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        EXPECT_NEAR(gelu_grad(x), numeric, 1e-7) << x;
    }
    EXPECT_DOUBLE_EQ(gelu(0.0), 0.0);
}

TEST(LayerNorm, ConstantRowCollapsesToShift)
{
    const auto out = layer_norm<float>({1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1e-5F);
    for (float v : out) EXPECT_EQ(v, 0.0F);
}

TEST(LayerNorm, UnitVarianceRowIsUnchanged)
{
    const auto out = layer_norm<float>({1, -1}, {1, 1}, {0, 0}, 0.0F);
    EXPECT_FLOAT_EQ(out[0], 1.0F);
    EXPECT_FLOAT_EQ(out[1], -1.0F);
}

TEST(LayerNorm, LengthMismatchThrows)
{
    EXPECT_THROW(layer_norm<float>({1, 2, 3}, {1, 1}, {0, 0, 0}, 1e-5F), DimensionError);
    EXPECT_THROW(layer_norm(std::vector<float>{}, std::vector<float>{}, std::vector<float>{}, 1e-5F), DimensionError);
}

TEST(LayerNorm, OutputMeanTracksShiftMean)
{
    std::mt19937 rng(8);
    std::normal_distribution<float> g(3.0F, 2.0F);
    std::vector<float> row(8), shift(8), gain(8, 1.0F);
    for (auto& v : row) v = g(rng);
    for (auto& v : shift) v = g(rng);
    const auto out = layer_norm(row, gain, shift, 1e-5F);
    double got = 0.0, want = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
        got += out[i];
        want += shift[i];
    }
    EXPECT_NEAR(got / 8.0, want / 8.0, 1e-5);
}

TEST(LayerNorm, UnitVarianceProperty)
{
    std::mt19937 rng(21);
    std::uniform_int_distribution<std::size_t> len(2, 64);
    std::uniform_real_distribution<float> scale(0.05F, 20.0F);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = len(rng);
        std::normal_distribution<float> g(0.0F, scale(rng));
        std::vector<float> row(n);
        for (auto& v : row) v = g(rng);
        double mean = 0.0, var = 0.0;
        for (float v : row) mean += v;
        mean /= static_cast<double>(n);
        for (float v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        if (var <= 1e-3) continue;

        const auto out = layer_norm(row, std::vector<float>(n, 1.0F), std::vector<float>(n, 0.0F), 1e-5F);
        double om = 0.0, ov = 0.0;
        for (float v : out) om += v;
        om /= static_cast<double>(n);
        for (float v : out) ov += (v - om) * (v - om);
        ov /= static_cast<double>(n);
        ASSERT_NEAR(ov, 1.0, 1e-4 + 1e-5 / var) << "trial " << trial;
    }
}

TEST(Softmax, StableForLargeInputs)
{
    std::vector<double> v{1000.0, 1000.0};
    softmax_inplace<double>(v);
    EXPECT_DOUBLE_EQ(v[0], 0.5);
    const std::vector<double> w{1000.0, 1000.0, 1000.0};
    EXPECT_NEAR(log_sum_exp<double>(w), 1000.0 + std::log(3.0), 1e-9);
}

TEST(CheckGradient, QuadraticIsExact)
{
    ParamTensor<double> p({1});
    p.values[0] = 3.0;
    p.grad[0] = 6.0;
    const auto r = check_gradient([](const ParamTensor<double>& q) { return q.values[0] * q.values[0]; },
                                  p, 1e-3, 1e-6);
    EXPECT_LT(r.max_relative_error, 1e-6);
    EXPECT_TRUE(r.passed);
    EXPECT_EQ(p.values[0], 3.0);
}

TEST(CheckGradient, ConstantFunctionPasses)
{
    ParamTensor<double> p({3});
    const auto r = check_gradient([](const ParamTensor<double>&) { return 4.0; }, p, 1e-4, 0.0);
    EXPECT_TRUE(r.passed);
    EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(CheckGradient, ReportsOffendingCoordinate)
{
    ParamTensor<double> p({3});
    p.values = {1.0, 2.0, 3.0};
    p.grad = {2.0, 4.0, 0.0};  // last entry wrong, should be 6
    const auto r = check_gradient(
        [](const ParamTensor<double>& q) {
            double s = 0.0;
            for (double v : q.values) s += v * v;
            return s;
        },
        p, 1e-4, 1e-3);
    EXPECT_FALSE(r.passed);
    EXPECT_EQ(r.worst_index, 2U);
    EXPECT_NEAR(r.numeric, 6.0, 1e-6);
}

TEST(CheckGradient, RandomQuadraticsBelowOneInAMillion)
{
    std::mt19937 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 5;
        Matrix<double> a(n, n);
        for (auto& v : a.data()) v = g(rng);
        std::vector<double> lin(n);
        for (auto& v : lin) v = g(rng);
        ParamTensor<double> p({n});
        for (auto& v : p.values) v = g(rng);
        auto f = [&](const ParamTensor<double>& q) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                s += lin[i] * q.values[i];
                for (std::size_t j = 0; j < n; ++j) s += q.values[i] * a(i, j) * q.values[j];
            }
            return s;
        };
        for (std::size_t i = 0; i < n; ++i) {
            double d = lin[i];
            for (std::size_t j = 0; j < n; ++j) d += (a(i, j) + a(j, i)) * p.values[j];
            p.grad[i] = d;
        }
        const auto r = check_gradient(f, p, 1e-3, 1e-6);
        ASSERT_LT(r.max_relative_error, 1e-6) << "trial " << trial;
    }
}

TEST(CheckGradient, Errors)
{
    ParamTensor<double> p({1});
    auto f = [](const ParamTensor<double>& q) { return q.values[0]; };
    EXPECT_THROW(check_gradient(f, p, 0.0, 1e-3), ConfigError);
    auto bad = [](const ParamTensor<double>& q) { return q.values[0] > 0 ? std::log(-1.0) : 0.0; };
    EXPECT_THROW(check_gradient(bad, p, 1e-3, 1e-3), NumericalError);
}

TEST(ParamTensor, ZeroGradClearsGradient)
{
    ParamTensor<float> p({2, 3});
    EXPECT_EQ(p.grad.size(), p.values.size());
    std::fill(p.grad.begin(), p.grad.end(), 1.5F);
    p.zero_grad();
    for (float v : p.grad) EXPECT_EQ(v, 0.0F);
}

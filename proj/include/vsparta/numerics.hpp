#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vsparta/error.hpp"

namespace vsparta {

/// Dense row-major matrix.
template <typename T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill)
    {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data))
    {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("matrix data length " + std::to_string(data_.size())
                                 + " does not match " + std::to_string(rows_) + "x"
                                 + std::to_string(cols_));
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows)
    {
        std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
        Matrix m(rows.size(), cols);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != cols) {
                throw DimensionError("ragged matrix literal");
            }
            std::copy(row.begin(), row.end(), m.row(r).begin());
            ++r;
        }
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    /// Appends the rows of `other` below this matrix.
    void append_rows(const Matrix& other)
    {
        if (empty() && rows_ == 0) {
            cols_ = other.cols_;
        }
        if (other.cols_ != cols_) {
            throw DimensionError("append_rows: column mismatch");
        }
        data_.insert(data_.end(), other.data_.begin(), other.data_.end());
        rows_ += other.rows_;
    }

    template <typename U>
    [[nodiscard]] Matrix<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Matrix<U>(rows_, cols_, std::move(out));
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Trainable tensor: values plus a same-sized gradient buffer.
/// Shapes are one- or two-dimensional; a vector of length d is treated as 1 x d.
template <typename T>
struct ParamTensor {
    std::vector<std::size_t> shape;
    std::vector<T> values;
    std::vector<T> grad;

    ParamTensor() = default;

    explicit ParamTensor(std::vector<std::size_t> dims)
        : shape(std::move(dims))
    {
        std::size_t n = 1;
        for (auto d : shape) {
            n *= d;
        }
        values.assign(n, T{0});
        grad.assign(n, T{0});
    }

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] std::size_t rows() const noexcept { return shape.size() == 2 ? shape[0] : 1; }
    [[nodiscard]] std::size_t cols() const noexcept { return shape.empty() ? 1 : shape.back(); }

    std::span<T> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
    std::span<T> grad_row(std::size_t r) { return {grad.data() + r * cols(), cols()}; }

    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }

    template <typename U>
    [[nodiscard]] ParamTensor<U> cast() const
    {
        ParamTensor<U> out(shape);
        std::copy(values.begin(), values.end(), out.values.begin());
        return out;
    }
};

/// Left-to-right dot product; the fixed order keeps results bit-reproducible.
template <typename T>
T dot(std::span<const T> a, std::span<const T> b)
{
    T acc{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

/// a (r x n) * b (n x c).
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b)
{
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols())
                             + " times " + std::to_string(b.rows()) + "x"
                             + std::to_string(b.cols()));
    }
    Matrix<T> out(a.rows(), b.cols());
    const std::size_t n = a.cols();
    const std::size_t c = b.cols();
    // i-k-j loop: each output element still sums over k in ascending order.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T* dst = out.row(i).data();
        for (std::size_t k = 0; k < n; ++k) {
            const T aik = a(i, k);
            const T* src = b.row(k).data();
            for (std::size_t j = 0; j < c; ++j) {
                dst[j] += aik * src[j];
            }
        }
    }
    return out;
}

/// a^T (n x r)^T * b (n x c) -> r x c.
template <typename T>
Matrix<T> matmul_at_b(const Matrix<T>& a, const Matrix<T>& b)
{
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_at_b: row mismatch");
    }
    Matrix<T> out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const T aki = a(k, i);
            T* dst = out.row(i).data();
            const T* src = b.row(k).data();
            for (std::size_t j = 0; j < b.cols(); ++j) {
                dst[j] += aki * src[j];
            }
        }
    }
    return out;
}

/// a (r x n) * b^T where b is (c x n) -> r x c.
template <typename T>
Matrix<T> matmul_a_bt(const Matrix<T>& a, const Matrix<T>& b)
{
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_a_bt: column mismatch");
    }
    Matrix<T> out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            out(i, j) = dot(a.row(i), b.row(j));
        }
    }
    return out;
}

/// View of a 2-D parameter tensor as a matrix (copy).
template <typename T>
Matrix<T> as_matrix(const ParamTensor<T>& p)
{
    return Matrix<T>(p.rows(), p.cols(), p.values);
}

/// x * W + b with W, b taken from parameter tensors.
template <typename T>
Matrix<T> affine(const Matrix<T>& x, const ParamTensor<T>& w, const ParamTensor<T>& b)
{
    if (x.cols() != w.rows() || b.size() != w.cols()) {
        throw DimensionError("affine: shape mismatch");
    }
    Matrix<T> out(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        T* dst = out.row(i).data();
        std::copy(b.values.begin(), b.values.end(), dst);
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const T xik = x(i, k);
            const T* src = w.values.data() + k * w.cols();
            for (std::size_t j = 0; j < w.cols(); ++j) {
                dst[j] += xik * src[j];
            }
        }
    }
    return out;
}

/// x * W without a bias.
template <typename T>
Matrix<T> linear(const Matrix<T>& x, const ParamTensor<T>& w)
{
    if (x.cols() != w.rows()) {
        throw DimensionError("linear: shape mismatch");
    }
    return matmul(x, as_matrix(w));
}

/// Backward of linear: accumulates into w.grad and returns dL/dx.
template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& dout, ParamTensor<T>& w)
{
    const auto dw = matmul_at_b(x, dout);
    for (std::size_t i = 0; i < dw.size(); ++i) {
        w.grad[i] += dw.data()[i];
    }
    return matmul_a_bt(dout, as_matrix(w));
}

/// Backward of affine: accumulates into w.grad / b.grad and returns dL/dx.
template <typename T>
Matrix<T> affine_backward(const Matrix<T>& x, const Matrix<T>& dout, ParamTensor<T>& w,
                          ParamTensor<T>& b)
{
    const std::size_t in = w.rows();
    const std::size_t out_dim = w.cols();
    Matrix<T> dx(x.rows(), in);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const T* g = dout.row(i).data();
        for (std::size_t j = 0; j < out_dim; ++j) {
            b.grad[j] += g[j];
        }
        for (std::size_t k = 0; k < in; ++k) {
            const T xik = x(i, k);
            T* wg = w.grad.data() + k * out_dim;
            const T* wv = w.values.data() + k * out_dim;
            T acc{0};
            for (std::size_t j = 0; j < out_dim; ++j) {
                wg[j] += xik * g[j];
                acc += wv[j] * g[j];
            }
            dx(i, k) = acc;
        }
    }
    return dx;
}

template <typename T>
constexpr T relu(T x) noexcept
{
    return x > T{0} ? x : T{0};
}

/// Exact (erf-based) GELU.
template <typename T>
T gelu(T x)
{
    return T{0.5} * x * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <typename T>
T gelu_grad(T x)
{
    const T cdf = T{0.5} * (T{1} + std::erf(x / std::sqrt(T{2})));
    const T pdf = std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * T{3.14159265358979323846});
    return cdf + x * pdf;
}

/// Per-row statistics kept by the layer-norm forward pass.
template <typename T>
struct NormStats {
    T mean{0};
    T inv_std{0};
};

/// (row - mean) / sqrt(var + eps) * gain + shift, population variance.
/// Writes the normalized-but-unscaled values into `normalized` when given.
template <typename T>
NormStats<T> layer_norm_into(std::span<const T> row, std::span<const T> gain,
                             std::span<const T> shift, T epsilon, std::span<T> out,
                             std::span<T> normalized = {})
{
    if (row.empty() || gain.size() != row.size() || shift.size() != row.size()
        || out.size() != row.size()) {
        throw DimensionError("layer_norm: length mismatch");
    }
    const auto n = static_cast<T>(row.size());
    T mean{0};
    for (T v : row) {
        mean += v;
    }
    mean /= n;
    T var{0};
    for (T v : row) {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    const T inv_std = T{1} / std::sqrt(var + epsilon);
    for (std::size_t i = 0; i < row.size(); ++i) {
        const T xhat = (row[i] - mean) * inv_std;
        if (!normalized.empty()) {
            normalized[i] = xhat;
        }
        out[i] = xhat * gain[i] + shift[i];
    }
    return {mean, inv_std};
}

template <typename T>
std::vector<T> layer_norm(std::span<const T> row, std::span<const T> gain,
                          std::span<const T> shift, T epsilon)
{
    std::vector<T> out(row.size());
    layer_norm_into<T>(row, gain, shift, epsilon, out);
    return out;
}

template <typename T>
std::vector<T> layer_norm(const std::vector<T>& row, const std::vector<T>& gain,
                          const std::vector<T>& shift, T epsilon)
{
    return layer_norm<T>(std::span<const T>(row), std::span<const T>(gain),
                         std::span<const T>(shift), epsilon);
}

/// Numerically stable in-place softmax.
template <typename T>
void softmax_inplace(std::span<T> v)
{
    if (v.empty()) {
        return;
    }
    const T hi = *std::max_element(v.begin(), v.end());
    T total{0};
    for (T& x : v) {
        x = std::exp(x - hi);
        total += x;
    }
    for (T& x : v) {
        x /= total;
    }
}

/// ln(sum(exp(v))) with max subtraction.
template <typename T>
T log_sum_exp(std::span<const T> v)
{
    const T hi = *std::max_element(v.begin(), v.end());
    T total{0};
    for (T x : v) {
        total += std::exp(x - hi);
    }
    return hi + std::log(total);
}

template <typename T>
bool all_finite(std::span<const T> v)
{
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

struct GradientReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool passed = true;
};

/// Compares p.grad against central differences of `f`, one coordinate at a time.
/// `f` is evaluated with p perturbed in place; p.values is restored afterwards.
template <typename T, typename F>
GradientReport check_gradient(F&& f, ParamTensor<T>& p, T h, T tol)
{
    if (!(h > T{0})) {
        throw ConfigError("check_gradient: step must be positive");
    }
    GradientReport report;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T saved = p.values[i];
        p.values[i] = saved + h;
        const T up = f(std::as_const(p));
        p.values[i] = saved - h;
        const T down = f(std::as_const(p));
        p.values[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericalError("check_gradient: non-finite objective at coordinate "
                                 + std::to_string(i));
        }
        const double numeric = (static_cast<double>(up) - static_cast<double>(down))
                               / (2.0 * static_cast<double>(h));
        const double analytic = static_cast<double>(p.grad[i]);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        if (i == 0 || rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_index = i;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_relative_error <= static_cast<double>(tol);
    return report;
}

}  // namespace vsparta

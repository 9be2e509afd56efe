#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vsparta/numerics.hpp"

namespace vsparta {

inline constexpr double kLayerNormEpsilon = 1e-5;

/// One pre-norm encoder block. Keys carry no bias: softmax is invariant to a
/// per-query constant, so a key bias would never receive gradient.
///   x1 = x  + Attn(LN1(x))
///   x2 = x1 + W2 gelu(W1 LN2(x1) + b1) + b2
template <typename T>
struct LayerParams {
    ParamTensor<T> ln1_gain, ln1_shift;
    ParamTensor<T> query_w, query_b, key_w, value_w, value_b, out_w, out_b;
    ParamTensor<T> ln2_gain, ln2_shift;
    ParamTensor<T> ff1_w, ff1_b, ff2_w, ff2_b;

    LayerParams() = default;

    explicit LayerParams(std::size_t d)
        : ln1_gain({d}), ln1_shift({d}),
          query_w({d, d}), query_b({d}), key_w({d, d}),
          value_w({d, d}), value_b({d}), out_w({d, d}), out_b({d}),
          ln2_gain({d}), ln2_shift({d}),
          ff1_w({d, 4 * d}), ff1_b({4 * d}), ff2_w({4 * d, d}), ff2_b({d})
    {
        std::fill(ln1_gain.values.begin(), ln1_gain.values.end(), T{1});
        std::fill(ln2_gain.values.begin(), ln2_gain.values.end(), T{1});
    }

    /// Fixed tensor order used by optimizers and checkpoints.
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn)
    {
        fn("ln1_gain", self.ln1_gain);
        fn("ln1_shift", self.ln1_shift);
        fn("query_w", self.query_w);
        fn("query_b", self.query_b);
        fn("key_w", self.key_w);
        fn("value_w", self.value_w);
        fn("value_b", self.value_b);
        fn("out_w", self.out_w);
        fn("out_b", self.out_b);
        fn("ln2_gain", self.ln2_gain);
        fn("ln2_shift", self.ln2_shift);
        fn("ff1_w", self.ff1_w);
        fn("ff1_b", self.ff1_b);
        fn("ff2_w", self.ff2_w);
        fn("ff2_b", self.ff2_b);
    }
};

/// Activations kept by the forward pass for the backward pass.
template <typename T>
struct LayerCache {
    Matrix<T> xhat1, ln1_out;
    std::vector<T> inv_std1;
    Matrix<T> q, k, v;
    std::vector<Matrix<T>> attn;  ///< per head, rows x rows softmax weights
    Matrix<T> context;
    Matrix<T> xhat2, ln2_out;
    std::vector<T> inv_std2;
    Matrix<T> pre_act, act;
};

namespace detail {

template <typename T>
Matrix<T> layer_norm_rows(const Matrix<T>& x, const ParamTensor<T>& gain,
                          const ParamTensor<T>& shift, Matrix<T>& xhat, std::vector<T>& inv_std)
{
    Matrix<T> out(x.rows(), x.cols());
    xhat = Matrix<T>(x.rows(), x.cols());
    inv_std.assign(x.rows(), T{0});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto stats = layer_norm_into<T>(x.row(r), gain.values, shift.values,
                                        static_cast<T>(kLayerNormEpsilon), out.row(r),
                                        xhat.row(r));
        inv_std[r] = stats.inv_std;
    }
    return out;
}

template <typename T>
Matrix<T> layer_norm_rows_backward(const Matrix<T>& dout, const Matrix<T>& xhat,
                                   const std::vector<T>& inv_std, ParamTensor<T>& gain,
                                   ParamTensor<T>& shift)
{
    const std::size_t d = dout.cols();
    Matrix<T> dx(dout.rows(), d);
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < dout.rows(); ++r) {
        T mean_d{0};
        T mean_dx{0};
        for (std::size_t j = 0; j < d; ++j) {
            const T g = dout(r, j);
            gain.grad[j] += g * xhat(r, j);
            shift.grad[j] += g;
            dxhat[j] = g * gain.values[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat(r, j);
        }
        mean_d /= static_cast<T>(d);
        mean_dx /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
            dx(r, j) = inv_std[r] * (dxhat[j] - mean_d - xhat(r, j) * mean_dx);
        }
    }
    return dx;
}

}  // namespace detail

/// Forward pass of one block; `cache` may be null when no backward is needed.
template <typename T>
Matrix<T> encoder_layer_forward(const LayerParams<T>& p, const Matrix<T>& x, std::size_t heads,
                                LayerCache<T>* cache)
{
    const std::size_t rows = x.rows();
    const std::size_t d = x.cols();
    const std::size_t dh = d / heads;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));

    LayerCache<T> local;
    LayerCache<T>& c = cache != nullptr ? *cache : local;

    c.ln1_out = detail::layer_norm_rows(x, p.ln1_gain, p.ln1_shift, c.xhat1, c.inv_std1);
    c.q = affine(c.ln1_out, p.query_w, p.query_b);
    c.k = linear(c.ln1_out, p.key_w);
    c.v = affine(c.ln1_out, p.value_w, p.value_b);

    c.context = Matrix<T>(rows, d);
    c.attn.assign(heads, Matrix<T>(rows, rows));
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        auto& a = c.attn[h];
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < rows; ++j) {
                T s{0};
                for (std::size_t e = 0; e < dh; ++e) {
                    s += c.q(i, off + e) * c.k(j, off + e);
                }
                a(i, j) = s * scale;
            }
            softmax_inplace(a.row(i));
            for (std::size_t j = 0; j < rows; ++j) {
                const T w = a(i, j);
                for (std::size_t e = 0; e < dh; ++e) {
                    c.context(i, off + e) += w * c.v(j, off + e);
                }
            }
        }
    }

    Matrix<T> x1 = affine(c.context, p.out_w, p.out_b);
    for (std::size_t i = 0; i < x1.size(); ++i) {
        x1.data()[i] += x.data()[i];
    }

    c.ln2_out = detail::layer_norm_rows(x1, p.ln2_gain, p.ln2_shift, c.xhat2, c.inv_std2);
    c.pre_act = affine(c.ln2_out, p.ff1_w, p.ff1_b);
    c.act = Matrix<T>(c.pre_act.rows(), c.pre_act.cols());
    for (std::size_t i = 0; i < c.pre_act.size(); ++i) {
        c.act.data()[i] = gelu(c.pre_act.data()[i]);
    }
    Matrix<T> out = affine(c.act, p.ff2_w, p.ff2_b);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += x1.data()[i];
    }
    return out;
}

/// Backward pass of one block. Accumulates parameter gradients into `p` and
/// returns the gradient with respect to the block input.
template <typename T>
Matrix<T> encoder_layer_backward(LayerParams<T>& p, const LayerCache<T>& c, const Matrix<T>& dout,
                                 std::size_t heads)
{
    const std::size_t rows = dout.rows();
    const std::size_t d = dout.cols();
    const std::size_t dh = d / heads;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));

    // Feed-forward branch; the residual passes dout straight through.
    Matrix<T> dact = affine_backward(c.act, dout, p.ff2_w, p.ff2_b);
    for (std::size_t i = 0; i < dact.size(); ++i) {
        dact.data()[i] *= gelu_grad(c.pre_act.data()[i]);
    }
    Matrix<T> dln2 = affine_backward(c.ln2_out, dact, p.ff1_w, p.ff1_b);
    Matrix<T> dx1 = detail::layer_norm_rows_backward(dln2, c.xhat2, c.inv_std2, p.ln2_gain,
                                                     p.ln2_shift);
    for (std::size_t i = 0; i < dx1.size(); ++i) {
        dx1.data()[i] += dout.data()[i];
    }

    // Attention branch.
    Matrix<T> dcontext = affine_backward(c.context, dx1, p.out_w, p.out_b);
    Matrix<T> dq(rows, d);
    Matrix<T> dk(rows, d);
    Matrix<T> dv(rows, d);
    std::vector<T> dattn(rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const auto& a = c.attn[h];
        for (std::size_t i = 0; i < rows; ++i) {
            T weighted{0};
            for (std::size_t j = 0; j < rows; ++j) {
                T g{0};
                for (std::size_t e = 0; e < dh; ++e) {
                    g += dcontext(i, off + e) * c.v(j, off + e);
                    dv(j, off + e) += a(i, j) * dcontext(i, off + e);
                }
                dattn[j] = g;
                weighted += g * a(i, j);
            }
            for (std::size_t j = 0; j < rows; ++j) {
                const T ds = a(i, j) * (dattn[j] - weighted) * scale;
                for (std::size_t e = 0; e < dh; ++e) {
                    dq(i, off + e) += ds * c.k(j, off + e);
                    dk(j, off + e) += ds * c.q(i, off + e);
                }
            }
        }
    }
    Matrix<T> dln1 = affine_backward(c.ln1_out, dq, p.query_w, p.query_b);
    Matrix<T> dln1_k = linear_backward(c.ln1_out, dk, p.key_w);
    Matrix<T> dln1_v = affine_backward(c.ln1_out, dv, p.value_w, p.value_b);
    for (std::size_t i = 0; i < dln1.size(); ++i) {
        dln1.data()[i] += dln1_k.data()[i] + dln1_v.data()[i];
    }
    Matrix<T> dx = detail::layer_norm_rows_backward(dln1, c.xhat1, c.inv_std1, p.ln1_gain,
                                                    p.ln1_shift);
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx.data()[i] += dx1.data()[i];
    }
    return dx;
}

}  // namespace vsparta

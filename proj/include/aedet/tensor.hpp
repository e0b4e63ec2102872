#pragma once

// Dense n-d tensors with reverse-mode autodiff on a define-by-run tape.
// The scalar type is a template parameter: the library computes in float,
// a double instantiation exists for finite-difference test oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "aedet/common.hpp"

namespace aedet {

template <typename T>
class BasicTape;

template <typename T>
struct BasicTensor {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    int node = -1;  // tape handle, -1 when not recorded

    BasicTensor() = default;
    BasicTensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw dimension_error("tensor: shape/data size mismatch");
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int e : s) {
            if (e <= 0) throw dimension_error("tensor: nonpositive extent");
            n *= static_cast<size_t>(e);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }
    bool is_scalar() const { return data.size() == 1; }
    T scalar() const {
        if (!is_scalar()) throw contract_error("tensor: scalar() on non-scalar");
        return data[0];
    }

    static BasicTensor zeros(std::vector<int> s) {
        size_t n = numel_of(s);
        return BasicTensor(std::move(s), std::vector<T>(n, T(0)));
    }
    static BasicTensor full(std::vector<int> s, T v) {
        size_t n = numel_of(s);
        return BasicTensor(std::move(s), std::vector<T>(n, v));
    }
    template <typename Rng>
    static BasicTensor randu(std::vector<int> s, T lo, T hi, Rng& rng) {
        BasicTensor t = zeros(std::move(s));
        std::uniform_real_distribution<double> d(lo, hi);
        for (auto& v : t.data) v = static_cast<T>(d(rng));
        return t;
    }
    template <typename Rng>
    static BasicTensor randn(std::vector<int> s, T mean, T stddev, Rng& rng) {
        BasicTensor t = zeros(std::move(s));
        std::normal_distribution<double> d(mean, stddev);
        for (auto& v : t.data) v = static_cast<T>(d(rng));
        return t;
    }
};

namespace detail {

template <typename T>
inline void check_finite(const BasicTensor<T>& t, const char* op) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw contract_error(std::string(op) + ": non-finite value in output");
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

}  // namespace detail

// Records one backward closure per produced tensor. Creation order is a
// topological order, so the backward pass is a single reverse sweep.
template <typename T>
class BasicTape {
 public:
    using Fn = std::function<void(BasicTape<T>&, const std::vector<T>&)>;

    // Registers a leaf (input or parameter) for gradient tracking.
    int watch(BasicTensor<T>& t) {
        t.requires_grad = true;
        t.node = add_node(t.numel(), Fn{});
        return t.node;
    }

    int record(size_t out_numel, Fn fn) { return add_node(out_numel, std::move(fn)); }

    // Accumulation buffer for a node; allocated on first touch.
    std::vector<T>& acc(int node) {
        auto& g = grads_.at(static_cast<size_t>(node));
        if (g.empty()) g.assign(numel_.at(static_cast<size_t>(node)), T(0));
        return g;
    }

    void backward(const BasicTensor<T>& loss) {
        if (!loss.is_scalar()) throw contract_error("backward: loss must be scalar");
        if (loss.node < 0) throw contract_error("backward: loss is not on the tape");
        grads_.assign(fns_.size(), {});
        acc(loss.node)[0] = T(1);
        for (int i = loss.node; i >= 0; --i) {
            auto& g = grads_[static_cast<size_t>(i)];
            if (g.empty()) continue;
            auto& fn = fns_[static_cast<size_t>(i)];
            if (fn) fn(*this, g);
        }
    }

    bool has_grad(const BasicTensor<T>& t) const {
        return t.node >= 0 && static_cast<size_t>(t.node) < grads_.size() &&
               !grads_[static_cast<size_t>(t.node)].empty();
    }

    const std::vector<T>& grad(const BasicTensor<T>& t) const {
        if (t.node < 0) throw contract_error("grad: tensor not on tape");
        const auto& g = grads_.at(static_cast<size_t>(t.node));
        if (g.empty()) throw contract_error("grad: no gradient reached this tensor");
        return g;
    }

    size_t size() const { return fns_.size(); }

 private:
    int add_node(size_t numel, Fn fn) {
        fns_.push_back(std::move(fn));
        numel_.push_back(numel);
        grads_.emplace_back();
        return static_cast<int>(fns_.size()) - 1;
    }

    std::vector<Fn> fns_;
    std::vector<size_t> numel_;
    std::vector<std::vector<T>> grads_;
};

// ---------------------------------------------------------------------------
// Operators. Each takes an optional tape; passing nullptr (or inputs without
// tape nodes) gives a pure forward evaluation.
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> dense(BasicTape<T>* tape, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     const BasicTensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw dimension_error("dense: expected x[B,I], w[I,O], b[O]");
    const int B = x.dim(0), I = x.dim(1), O = w.dim(1);
    if (w.dim(0) != I || b.dim(0) != O)
        throw dimension_error("dense: shape mismatch x" + detail::shape_str(x.shape) + " w" +
                              detail::shape_str(w.shape) + " b" + detail::shape_str(b.shape));
    auto out = BasicTensor<T>::zeros({B, O});
    for (int bi = 0; bi < B; ++bi) {
        for (int o = 0; o < O; ++o) out.data[bi * O + o] = b.data[o];
        for (int i = 0; i < I; ++i) {
            const T xv = x.data[bi * I + i];
            const T* wr = &w.data[i * O];
            T* orow = &out.data[bi * O];
            for (int o = 0; o < O; ++o) orow[o] += xv * wr[o];
        }
    }
    detail::check_finite(out, "dense");
    if (tape && (x.node >= 0 || w.node >= 0 || b.node >= 0)) {
        out.requires_grad = true;
        out.node = tape->record(out.numel(), [x, w, b, B, I, O](BasicTape<T>& tp,
                                                                const std::vector<T>& g) {
            if (x.node >= 0) {
                auto& gx = tp.acc(x.node);
                for (int bi = 0; bi < B; ++bi)
                    for (int i = 0; i < I; ++i) {
                        T s = 0;
                        const T* wr = &w.data[i * O];
                        const T* gr = &g[bi * O];
                        for (int o = 0; o < O; ++o) s += gr[o] * wr[o];
                        gx[bi * I + i] += s;
                    }
            }
            if (w.node >= 0) {
                auto& gw = tp.acc(w.node);
                for (int bi = 0; bi < B; ++bi)
                    for (int i = 0; i < I; ++i) {
                        const T xv = x.data[bi * I + i];
                        const T* gr = &g[bi * O];
                        T* gwr = &gw[i * O];
                        for (int o = 0; o < O; ++o) gwr[o] += xv * gr[o];
                    }
            }
            if (b.node >= 0) {
                auto& gb = tp.acc(b.node);
                for (int bi = 0; bi < B; ++bi)
                    for (int o = 0; o < O; ++o) gb[o] += g[bi * O + o];
            }
        });
    }
    return out;
}

// Cross-correlation with zero padding. Output extents use floor division,
// discarding a trailing partial window; extents below 1 are an error.
template <typename T>
BasicTensor<T> conv2d(BasicTape<T>* tape, const BasicTensor<T>& x, const BasicTensor<T>& k,
                      const BasicTensor<T>& bias, int stride, int padding) {
    if (x.rank() != 4 || k.rank() != 4) throw dimension_error("conv2d: expected x[B,C,H,W], k[F,C,Kh,Kw]");
    if (stride < 1) throw parameter_error("conv2d: stride must be positive");
    if (padding < 0) throw parameter_error("conv2d: padding must be nonnegative");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = k.dim(0), Kh = k.dim(2), Kw = k.dim(3);
    if (k.dim(1) != C) throw dimension_error("conv2d: channel mismatch");
    const bool has_bias = !bias.data.empty();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != F))
        throw dimension_error("conv2d: bias must be [F]");
    const int Ho = (H + 2 * padding - Kh) / stride + 1;
    const int Wo = (W + 2 * padding - Kw) / stride + 1;
    if (H + 2 * padding - Kh < 0 || W + 2 * padding - Kw < 0 || Ho < 1 || Wo < 1)
        throw dimension_error("conv2d: kernel larger than padded input");
    auto out = BasicTensor<T>::zeros({B, F, Ho, Wo});
    for (int bi = 0; bi < B; ++bi)
        for (int f = 0; f < F; ++f) {
            T* oplane = &out.data[(static_cast<size_t>(bi) * F + f) * Ho * Wo];
            if (has_bias)
                for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bias.data[f];
            for (int c = 0; c < C; ++c) {
                const T* xplane = &x.data[(static_cast<size_t>(bi) * C + c) * H * W];
                for (int kh = 0; kh < Kh; ++kh)
                    for (int kw = 0; kw < Kw; ++kw) {
                        const T wv = k.data[((static_cast<size_t>(f) * C + c) * Kh + kh) * Kw + kw];
                        for (int oh = 0; oh < Ho; ++oh) {
                            const int ih = oh * stride - padding + kh;
                            if (ih < 0 || ih >= H) continue;
                            const T* xrow = &xplane[ih * W];
                            T* orow = &oplane[oh * Wo];
                            for (int ow = 0; ow < Wo; ++ow) {
                                const int iw = ow * stride - padding + kw;
                                if (iw < 0 || iw >= W) continue;
                                orow[ow] += wv * xrow[iw];
                            }
                        }
                    }
            }
        }
    detail::check_finite(out, "conv2d");
    if (tape && (x.node >= 0 || k.node >= 0 || bias.node >= 0)) {
        out.requires_grad = true;
        out.node = tape->record(
            out.numel(), [x, k, bias, stride, padding, B, C, H, W, F, Kh, Kw, Ho,
                          Wo](BasicTape<T>& tp, const std::vector<T>& g) {
                std::vector<T>* gx = x.node >= 0 ? &tp.acc(x.node) : nullptr;
                std::vector<T>* gk = k.node >= 0 ? &tp.acc(k.node) : nullptr;
                for (int bi = 0; bi < B; ++bi)
                    for (int f = 0; f < F; ++f) {
                        const T* gplane = &g[(static_cast<size_t>(bi) * F + f) * Ho * Wo];
                        for (int c = 0; c < C; ++c) {
                            const size_t xoff = (static_cast<size_t>(bi) * C + c) * H * W;
                            for (int kh = 0; kh < Kh; ++kh)
                                for (int kw = 0; kw < Kw; ++kw) {
                                    const size_t kidx =
                                        ((static_cast<size_t>(f) * C + c) * Kh + kh) * Kw + kw;
                                    const T wv = k.data[kidx];
                                    T gkacc = 0;
                                    for (int oh = 0; oh < Ho; ++oh) {
                                        const int ih = oh * stride - padding + kh;
                                        if (ih < 0 || ih >= H) continue;
                                        const T* grow = &gplane[oh * Wo];
                                        for (int ow = 0; ow < Wo; ++ow) {
                                            const int iw = ow * stride - padding + kw;
                                            if (iw < 0 || iw >= W) continue;
                                            const size_t xi = xoff + ih * W + iw;
                                            if (gx) (*gx)[xi] += wv * grow[ow];
                                            if (gk) gkacc += x.data[xi] * grow[ow];
                                        }
                                    }
                                    if (gk) (*gk)[kidx] += gkacc;
                                }
                        }
                    }
                if (bias.node >= 0) {
                    auto& gb = tp.acc(bias.node);
                    for (int bi = 0; bi < B; ++bi)
                        for (int f = 0; f < F; ++f) {
                            const T* gplane = &g[(static_cast<size_t>(bi) * F + f) * Ho * Wo];
                            T s = 0;
                            for (int i = 0; i < Ho * Wo; ++i) s += gplane[i];
                            gb[f] += s;
                        }
                }
            });
    }
    return out;
}

// Transposed convolution; the adjoint of conv2d. output_padding grows the
// output on the bottom/right to hit a specific target extent.
template <typename T>
BasicTensor<T> conv_transpose2d(BasicTape<T>* tape, const BasicTensor<T>& x,
                                const BasicTensor<T>& k, const BasicTensor<T>& bias, int stride,
                                int padding, int output_padding) {
    if (x.rank() != 4 || k.rank() != 4)
        throw dimension_error("conv_transpose2d: expected x[B,F,H,W], k[F,C,Kh,Kw]");
    if (stride < 1) throw parameter_error("conv_transpose2d: stride must be positive");
    if (output_padding < 0 || output_padding >= stride)
        throw parameter_error("conv_transpose2d: output_padding must be in [0, stride)");
    const int B = x.dim(0), F = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
    const int C = k.dim(1), Kh = k.dim(2), Kw = k.dim(3);
    if (k.dim(0) != F) throw dimension_error("conv_transpose2d: channel mismatch");
    const bool has_bias = !bias.data.empty();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != C))
        throw dimension_error("conv_transpose2d: bias must be [C]");
    const int Ho = (Hi - 1) * stride - 2 * padding + Kh + output_padding;
    const int Wo = (Wi - 1) * stride - 2 * padding + Kw + output_padding;
    if (Ho < 1 || Wo < 1) throw dimension_error("conv_transpose2d: nonpositive output extent");
    auto out = BasicTensor<T>::zeros({B, C, Ho, Wo});
    if (has_bias)
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < C; ++c) {
                T* oplane = &out.data[(static_cast<size_t>(bi) * C + c) * Ho * Wo];
                for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bias.data[c];
            }
    for (int bi = 0; bi < B; ++bi)
        for (int f = 0; f < F; ++f) {
            const T* xplane = &x.data[(static_cast<size_t>(bi) * F + f) * Hi * Wi];
            for (int c = 0; c < C; ++c) {
                T* oplane = &out.data[(static_cast<size_t>(bi) * C + c) * Ho * Wo];
                for (int kh = 0; kh < Kh; ++kh)
                    for (int kw = 0; kw < Kw; ++kw) {
                        const T wv = k.data[((static_cast<size_t>(f) * C + c) * Kh + kh) * Kw + kw];
                        for (int i = 0; i < Hi; ++i) {
                            const int oh = i * stride - padding + kh;
                            if (oh < 0 || oh >= Ho) continue;
                            const T* xrow = &xplane[i * Wi];
                            T* orow = &oplane[oh * Wo];
                            for (int j = 0; j < Wi; ++j) {
                                const int ow = j * stride - padding + kw;
                                if (ow < 0 || ow >= Wo) continue;
                                orow[ow] += wv * xrow[j];
                            }
                        }
                    }
            }
        }
    detail::check_finite(out, "conv_transpose2d");
    if (tape && (x.node >= 0 || k.node >= 0 || bias.node >= 0)) {
        out.requires_grad = true;
        out.node = tape->record(
            out.numel(), [x, k, bias, stride, padding, B, F, Hi, Wi, C, Kh, Kw, Ho,
                          Wo](BasicTape<T>& tp, const std::vector<T>& g) {
                std::vector<T>* gx = x.node >= 0 ? &tp.acc(x.node) : nullptr;
                std::vector<T>* gk = k.node >= 0 ? &tp.acc(k.node) : nullptr;
                for (int bi = 0; bi < B; ++bi)
                    for (int f = 0; f < F; ++f) {
                        const size_t xoff = (static_cast<size_t>(bi) * F + f) * Hi * Wi;
                        for (int c = 0; c < C; ++c) {
                            const T* gplane = &g[(static_cast<size_t>(bi) * C + c) * Ho * Wo];
                            for (int kh = 0; kh < Kh; ++kh)
                                for (int kw = 0; kw < Kw; ++kw) {
                                    const size_t kidx =
                                        ((static_cast<size_t>(f) * C + c) * Kh + kh) * Kw + kw;
                                    const T wv = k.data[kidx];
                                    T gkacc = 0;
                                    for (int i = 0; i < Hi; ++i) {
                                        const int oh = i * stride - padding + kh;
                                        if (oh < 0 || oh >= Ho) continue;
                                        const T* grow = &gplane[oh * Wo];
                                        for (int j = 0; j < Wi; ++j) {
                                            const int ow = j * stride - padding + kw;
                                            if (ow < 0 || ow >= Wo) continue;
                                            const size_t xi = xoff + i * Wi + j;
                                            if (gx) (*gx)[xi] += wv * grow[ow];
                                            if (gk) gkacc += x.data[xi] * grow[ow];
                                        }
                                    }
                                    if (gk) (*gk)[kidx] += gkacc;
                                }
                        }
                    }
                if (bias.node >= 0) {
                    auto& gb = tp.acc(bias.node);
                    for (int bi = 0; bi < B; ++bi)
                        for (int c = 0; c < C; ++c) {
                            const T* gplane = &g[(static_cast<size_t>(bi) * C + c) * Ho * Wo];
                            T s = 0;
                            for (int i = 0; i < Ho * Wo; ++i) s += gplane[i];
                            gb[c] += s;
                        }
                }
            });
    }
    return out;
}

template <typename T>
BasicTensor<T> relu(BasicTape<T>* tape, const BasicTensor<T>& x) {
    BasicTensor<T> out = x;
    out.node = -1;
    out.requires_grad = false;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    if (tape && x.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(out.numel(), [x](BasicTape<T>& tp, const std::vector<T>& g) {
            auto& gx = tp.acc(x.node);
            for (size_t i = 0; i < g.size(); ++i)
                if (x.data[i] > T(0)) gx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> tanh_op(BasicTape<T>* tape, const BasicTensor<T>& x) {
    BasicTensor<T> out = x;
    out.node = -1;
    out.requires_grad = false;
    for (auto& v : out.data) v = std::tanh(v);
    if (tape && x.node >= 0) {
        out.requires_grad = true;
        const auto y = out.data;
        out.node = tape->record(out.numel(), [x, y](BasicTape<T>& tp, const std::vector<T>& g) {
            auto& gx = tp.acc(x.node);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> softmax(BasicTape<T>* tape, const BasicTensor<T>& x) {
    if (x.rank() != 2) throw dimension_error("softmax: expected [B,K]");
    const int B = x.dim(0), K = x.dim(1);
    auto out = BasicTensor<T>::zeros({B, K});
    for (int b = 0; b < B; ++b) {
        const T* xr = &x.data[b * K];
        T* yr = &out.data[b * K];
        T mx = *std::max_element(xr, xr + K);
        T s = 0;
        for (int k = 0; k < K; ++k) {
            yr[k] = std::exp(xr[k] - mx);
            s += yr[k];
        }
        for (int k = 0; k < K; ++k) yr[k] /= s;
    }
    detail::check_finite(out, "softmax");
    if (tape && x.node >= 0) {
        out.requires_grad = true;
        const auto y = out.data;
        out.node = tape->record(out.numel(), [x, y, B, K](BasicTape<T>& tp, const std::vector<T>& g) {
            auto& gx = tp.acc(x.node);
            for (int b = 0; b < B; ++b) {
                T dot = 0;
                for (int k = 0; k < K; ++k) dot += g[b * K + k] * y[b * K + k];
                for (int k = 0; k < K; ++k)
                    gx[b * K + k] += y[b * K + k] * (g[b * K + k] - dot);
            }
        });
    }
    return out;
}

// Mean over the batch of -log softmax(logits)[label]. Numerically fused.
template <typename T>
BasicTensor<T> cross_entropy(BasicTape<T>* tape, const BasicTensor<T>& logits,
                             const std::vector<int>& labels) {
    if (logits.rank() != 2) throw dimension_error("cross_entropy: expected logits[B,K]");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw dimension_error("cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= K) throw index_error("cross_entropy: label out of range");
    T total = 0;
    std::vector<T> probs(static_cast<size_t>(B) * K);
    for (int b = 0; b < B; ++b) {
        const T* zr = &logits.data[b * K];
        T mx = *std::max_element(zr, zr + K);
        T s = 0;
        for (int k = 0; k < K; ++k) {
            probs[b * K + k] = std::exp(zr[k] - mx);
            s += probs[b * K + k];
        }
        for (int k = 0; k < K; ++k) probs[b * K + k] /= s;
        total += std::log(s) + mx - zr[labels[b]];
    }
    auto out = BasicTensor<T>({1}, {total / static_cast<T>(B)});
    detail::check_finite(out, "cross_entropy");
    if (tape && logits.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(1, [logits, labels, probs, B, K](BasicTape<T>& tp,
                                                                 const std::vector<T>& g) {
            auto& gx = tp.acc(logits.node);
            const T go = g[0] / static_cast<T>(B);
            for (int b = 0; b < B; ++b)
                for (int k = 0; k < K; ++k)
                    gx[b * K + k] += go * (probs[b * K + k] - (k == labels[b] ? T(1) : T(0)));
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mse(BasicTape<T>* tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape != b.shape) throw dimension_error("mse: shape mismatch");
    const size_t n = a.numel();
    T total = 0;
    for (size_t i = 0; i < n; ++i) {
        const T d = a.data[i] - b.data[i];
        total += d * d;
    }
    auto out = BasicTensor<T>({1}, {total / static_cast<T>(n)});
    detail::check_finite(out, "mse");
    if (tape && (a.node >= 0 || b.node >= 0)) {
        out.requires_grad = true;
        out.node = tape->record(1, [a, b, n](BasicTape<T>& tp, const std::vector<T>& g) {
            const T c = T(2) * g[0] / static_cast<T>(n);
            if (a.node >= 0) {
                auto& ga = tp.acc(a.node);
                for (size_t i = 0; i < n; ++i) ga[i] += c * (a.data[i] - b.data[i]);
            }
            if (b.node >= 0) {
                auto& gb = tp.acc(b.node);
                for (size_t i = 0; i < n; ++i) gb[i] -= c * (a.data[i] - b.data[i]);
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sum_squares(BasicTape<T>* tape, const BasicTensor<T>& a) {
    T total = 0;
    for (T v : a.data) total += v * v;
    auto out = BasicTensor<T>({1}, {total});
    detail::check_finite(out, "sum_squares");
    if (tape && a.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(1, [a](BasicTape<T>& tp, const std::vector<T>& g) {
            auto& ga = tp.acc(a.node);
            for (size_t i = 0; i < a.numel(); ++i) ga[i] += T(2) * g[0] * a.data[i];
        });
    }
    return out;
}

enum class KernelKind { Rbf, Imq };

// Pairwise kernel matrix; rbf: exp(-d2/scale), imq: scale/(scale+d2).
template <typename T>
BasicTensor<T> kernel_gram(BasicTape<T>* tape, const BasicTensor<T>& a, const BasicTensor<T>& b,
                           KernelKind kind, T scale) {
    if (a.rank() != 2 || b.rank() != 2) throw dimension_error("kernel_gram: expected [N,Z], [M,Z]");
    if (a.dim(1) != b.dim(1)) throw dimension_error("kernel_gram: feature extent mismatch");
    if (!(scale > T(0))) throw parameter_error("kernel_gram: scale must be positive");
    const int N = a.dim(0), M = b.dim(0), Z = a.dim(1);
    auto out = BasicTensor<T>::zeros({N, M});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j) {
            T d2 = 0;
            for (int z = 0; z < Z; ++z) {
                const T d = a.data[i * Z + z] - b.data[j * Z + z];
                d2 += d * d;
            }
            out.data[i * M + j] =
                kind == KernelKind::Rbf ? std::exp(-d2 / scale) : scale / (scale + d2);
        }
    detail::check_finite(out, "kernel_gram");
    if (tape && (a.node >= 0 || b.node >= 0)) {
        out.requires_grad = true;
        const auto kv = out.data;
        out.node = tape->record(out.numel(), [a, b, kind, scale, kv, N, M, Z](
                                                 BasicTape<T>& tp, const std::vector<T>& g) {
            std::vector<T>* ga = a.node >= 0 ? &tp.acc(a.node) : nullptr;
            std::vector<T>* gb = b.node >= 0 ? &tp.acc(b.node) : nullptr;
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) {
                    const T kij = kv[i * M + j];
                    // dK/d(d2): rbf -> -K/scale; imq -> -K^2/scale
                    const T dkd2 = kind == KernelKind::Rbf ? -kij / scale : -kij * kij / scale;
                    const T c = g[i * M + j] * dkd2 * T(2);
                    for (int z = 0; z < Z; ++z) {
                        const T diff = a.data[i * Z + z] - b.data[j * Z + z];
                        if (ga) (*ga)[i * Z + z] += c * diff;
                        if (gb) (*gb)[j * Z + z] -= c * diff;
                    }
                }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> add(BasicTape<T>* tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape != b.shape) throw dimension_error("add: shape mismatch");
    BasicTensor<T> out = a;
    out.node = -1;
    out.requires_grad = false;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
    detail::check_finite(out, "add");
    if (tape && (a.node >= 0 || b.node >= 0)) {
        out.requires_grad = true;
        out.node = tape->record(out.numel(), [an = a.node, bn = b.node](BasicTape<T>& tp,
                                                                        const std::vector<T>& g) {
            if (an >= 0) {
                auto& ga = tp.acc(an);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                auto& gb = tp.acc(bn);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sub(BasicTape<T>* tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape != b.shape) throw dimension_error("sub: shape mismatch");
    BasicTensor<T> out = a;
    out.node = -1;
    out.requires_grad = false;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.data[i];
    detail::check_finite(out, "sub");
    if (tape && (a.node >= 0 || b.node >= 0)) {
        out.requires_grad = true;
        out.node = tape->record(out.numel(), [an = a.node, bn = b.node](BasicTape<T>& tp,
                                                                        const std::vector<T>& g) {
            if (an >= 0) {
                auto& ga = tp.acc(an);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                auto& gb = tp.acc(bn);
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> scale(BasicTape<T>* tape, const BasicTensor<T>& a, T c) {
    BasicTensor<T> out = a;
    out.node = -1;
    out.requires_grad = false;
    for (auto& v : out.data) v *= c;
    detail::check_finite(out, "scale");
    if (tape && a.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(out.numel(), [an = a.node, c](BasicTape<T>& tp,
                                                              const std::vector<T>& g) {
            auto& ga = tp.acc(an);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sum(BasicTape<T>* tape, const BasicTensor<T>& a) {
    T total = 0;
    for (T v : a.data) total += v;
    auto out = BasicTensor<T>({1}, {total});
    detail::check_finite(out, "sum");
    if (tape && a.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(1, [an = a.node, n = a.numel()](BasicTape<T>& tp,
                                                                const std::vector<T>& g) {
            auto& ga = tp.acc(an);
            for (size_t i = 0; i < n; ++i) ga[i] += g[0];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mean(BasicTape<T>* tape, const BasicTensor<T>& a) {
    auto s = sum(tape, a);
    return scale(tape, s, T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> reshape(BasicTape<T>* tape, const BasicTensor<T>& a, std::vector<int> new_shape) {
    if (BasicTensor<T>::numel_of(new_shape) != a.numel())
        throw dimension_error("reshape: element count mismatch");
    BasicTensor<T> out = a;
    out.shape = std::move(new_shape);
    out.node = -1;
    out.requires_grad = false;
    if (tape && a.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(out.numel(), [an = a.node](BasicTape<T>& tp,
                                                           const std::vector<T>& g) {
            auto& ga = tp.acc(an);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

// Single element as a scalar; gradient is an indicator at that position.
template <typename T>
BasicTensor<T> pick(BasicTape<T>* tape, const BasicTensor<T>& a, size_t flat_index) {
    if (flat_index >= a.numel()) throw index_error("pick: index out of range");
    auto out = BasicTensor<T>({1}, {a.data[flat_index]});
    if (tape && a.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(1, [an = a.node, flat_index](BasicTape<T>& tp,
                                                             const std::vector<T>& g) {
            tp.acc(an)[flat_index] += g[0];
        });
    }
    return out;
}

// Sum over the batch of max(z_y - max_{i != y} z_i + kappa, 0). The hinge
// used by the CW L2 objective.
template <typename T>
BasicTensor<T> cw_margin(BasicTape<T>* tape, const BasicTensor<T>& logits,
                         const std::vector<int>& labels, T kappa) {
    if (logits.rank() != 2) throw dimension_error("cw_margin: expected logits[B,K]");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B) throw dimension_error("cw_margin: label count mismatch");
    if (K < 2) throw dimension_error("cw_margin: need at least two classes");
    T total = 0;
    std::vector<int> best_other(B);
    std::vector<char> active(B);
    for (int b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || y >= K) throw index_error("cw_margin: label out of range");
        int io = y == 0 ? 1 : 0;
        for (int k = 0; k < K; ++k)
            if (k != y && logits.data[b * K + k] > logits.data[b * K + io]) io = k;
        best_other[b] = io;
        const T m = logits.data[b * K + y] - logits.data[b * K + io] + kappa;
        active[b] = m > T(0);
        if (active[b]) total += m;
    }
    auto out = BasicTensor<T>({1}, {total});
    if (tape && logits.node >= 0) {
        out.requires_grad = true;
        out.node = tape->record(1, [ln = logits.node, labels, best_other, active, B,
                                    K](BasicTape<T>& tp, const std::vector<T>& g) {
            auto& gx = tp.acc(ln);
            for (int b = 0; b < B; ++b)
                if (active[b]) {
                    gx[b * K + labels[b]] += g[0];
                    gx[b * K + best_other[b]] -= g[0];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };

template <typename T>
class Optimizer {
 public:
    Optimizer(OptimizerKind kind, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(lr > T(0))) throw parameter_error("optimizer: learning rate must be positive");
    }

    // One update over an aligned (params, grads) list. Adam keeps per-slot
    // moment buffers sized on first use and shape-checked afterwards.
    void step(const std::vector<BasicTensor<T>*>& params,
              const std::vector<const std::vector<T>*>& grads) {
        if (params.size() != grads.size())
            throw contract_error("optimizer: params/grads count mismatch");
        for (size_t i = 0; i < params.size(); ++i) {
            if (!grads[i]) throw contract_error("optimizer: missing gradient for parameter");
            if (grads[i]->size() != params[i]->numel())
                throw contract_error("optimizer: gradient shape mismatch");
        }
        ++step_count_;
        if (kind_ == OptimizerKind::Sgd) {
            for (size_t i = 0; i < params.size(); ++i) {
                auto& p = params[i]->data;
                const auto& g = *grads[i];
                for (size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
            }
            return;
        }
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->numel(), T(0));
                v_[i].assign(params[i]->numel(), T(0));
            }
        }
        if (m_.size() != params.size()) throw contract_error("optimizer: parameter set changed");
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_count_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_count_));
        for (size_t i = 0; i < params.size(); ++i) {
            if (m_[i].size() != params[i]->numel())
                throw contract_error("optimizer: moment buffer shape mismatch");
            auto& p = params[i]->data;
            const auto& g = *grads[i];
            for (size_t j = 0; j < p.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g[j] * g[j];
                const T mhat = m_[i][j] / bc1;
                const T vhat = v_[i][j] / bc2;
                p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int step_count() const { return step_count_; }
    OptimizerKind kind() const { return kind_; }

 private:
    OptimizerKind kind_;
    T lr_, beta1_, beta2_, eps_;
    int step_count_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

}  // namespace aedet

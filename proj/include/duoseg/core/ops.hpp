#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "duoseg/core/tensor.hpp"

namespace duoseg {

// Integer label maps (class indices), the target side of the segmentation
// losses and metrics. Not part of the autodiff graph.
struct LabelMap {
    Shape shape;
    std::vector<std::int32_t> v;

    static LabelMap zeros(const Shape& s) {
        LabelMap m;
        m.shape = s;
        m.v.assign(static_cast<size_t>(s.numel()), 0);
        return m;
    }
};

namespace detail {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Splits a shape at `axis` into (outer, extent, inner) for strided traversal.
struct AxisSplit {
    Index outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
    check(axis >= 0 && axis < s.rank(), "axis out of range for shape " + s.str());
    AxisSplit a{1, s[axis], 1};
    for (int i = 0; i < axis; ++i) a.outer *= s[i];
    for (int i = axis + 1; i < s.rank(); ++i) a.inner *= s[i];
    return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check(a.shape() == b.shape(),
                  "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor<S> out = Tensor<S>::uninit(a.shape());
    out.values() = a.values() + b.values();
    if (grad_track({a, b})) {
        out.mark_op({a, b}, [an = a.node(), bn = b.node()](TensorNode<S>& o) {
            accum_grad(*an, o.grad);
            accum_grad(*bn, o.grad);
        });
    }
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S k) {
    Tensor<S> out = Tensor<S>::uninit(a.shape());
    out.values() = a.values() * k;
    if (grad_track(a)) {
        out.mark_op({a}, [an = a.node(), k](TensorNode<S>& o) { accum_grad(*an, o.grad * k); });
    }
    return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::uninit(x.shape());
    out.values() = x.values().max(S(0));
    if (grad_track(x)) {
        // Subgradient at exactly zero is zero.
        out.mark_op({x}, [xn = x.node()](TensorNode<S>& o) {
            accum_grad(*xn, (xn->values > S(0)).template cast<S>() * o.grad);
        });
    }
    return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::uninit(x.shape());
    const S* xv = x.data();
    S* ov = out.data();
    for (Index i = 0; i < x.numel(); ++i) {
        S v = xv[i];
        if (v >= S(0)) {
            S e = std::exp(-v);
            ov[i] = S(1) / (S(1) + e);
        } else {
            S e = std::exp(v);
            ov[i] = e / (S(1) + e);
        }
    }
    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node()](TensorNode<S>& o) {
            accum_grad(*xn, o.grad * o.values * (S(1) - o.values));
        });
    }
    return out;
}

// Elementwise product with broadcasting over 1-extent axes; ranks must match.
template <class S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check(a.rank() == b.rank(), "hadamard: rank mismatch");
    const int rank = a.rank();
    int od[4] = {1, 1, 1, 1}, ad[4] = {1, 1, 1, 1}, bd[4] = {1, 1, 1, 1};
    const int pad = 4 - rank;
    std::vector<int> out_dims;
    for (int i = 0; i < rank; ++i) {
        ad[pad + i] = a.shape()[i];
        bd[pad + i] = b.shape()[i];
        detail::check(ad[pad + i] == bd[pad + i] || ad[pad + i] == 1 || bd[pad + i] == 1,
                      "hadamard: incompatible shapes " + a.shape().str() + " vs " + b.shape().str());
        od[pad + i] = std::max(ad[pad + i], bd[pad + i]);
        out_dims.push_back(od[pad + i]);
    }
    Tensor<S> out = Tensor<S>::uninit(Shape(out_dims));

    Index as[4], bs[4];
    Index astride = 1, bstride = 1;
    for (int i = 3; i >= 0; --i) {
        as[i] = (ad[i] == 1) ? 0 : astride;
        bs[i] = (bd[i] == 1) ? 0 : bstride;
        astride *= ad[i];
        bstride *= bd[i];
    }

    const S* av = a.data();
    const S* bv = b.data();
    S* ov = out.data();
    Index o = 0;
    for (int i0 = 0; i0 < od[0]; ++i0)
        for (int i1 = 0; i1 < od[1]; ++i1)
            for (int i2 = 0; i2 < od[2]; ++i2) {
                Index abase = i0 * as[0] + i1 * as[1] + i2 * as[2];
                Index bbase = i0 * bs[0] + i1 * bs[1] + i2 * bs[2];
                for (int i3 = 0; i3 < od[3]; ++i3)
                    ov[o++] = av[abase + i3 * as[3]] * bv[bbase + i3 * bs[3]];
            }

    if (grad_track({a, b})) {
        std::array<Index, 4> asv{as[0], as[1], as[2], as[3]}, bsv{bs[0], bs[1], bs[2], bs[3]};
        std::array<int, 4> odv{od[0], od[1], od[2], od[3]};
        out.mark_op({a, b}, [an = a.node(), bn = b.node(), asv, bsv, odv](TensorNode<S>& o2) {
            const S* g = o2.grad.data();
            const S* av2 = an->values.data();
            const S* bv2 = bn->values.data();
            S* ga = nullptr;
            S* gb = nullptr;
            if (an->requires_grad) {
                an->ensure_grad();
                ga = an->grad.data();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gb = bn->grad.data();
            }
            Index o = 0;
            for (int i0 = 0; i0 < odv[0]; ++i0)
                for (int i1 = 0; i1 < odv[1]; ++i1)
                    for (int i2 = 0; i2 < odv[2]; ++i2) {
                        Index ab = i0 * asv[0] + i1 * asv[1] + i2 * asv[2];
                        Index bb = i0 * bsv[0] + i1 * bsv[1] + i2 * bsv[2];
                        for (int i3 = 0; i3 < odv[3]; ++i3, ++o) {
                            Index ia = ab + i3 * asv[3];
                            Index ib = bb + i3 * bsv[3];
                            if (ga) ga[ia] += g[o] * bv2[ib];
                            if (gb) gb[ib] += g[o] * av2[ia];
                        }
                    }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra (rank-2)
// ---------------------------------------------------------------------------

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using MapCM = Eigen::Map<const MatRM<S>>;

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
    const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    detail::check(k == k2, "matmul: inner extents differ (" + a.shape().str() + " * " + b.shape().str() + ")");
    Tensor<S> out = Tensor<S>::uninit(Shape{m, n});
    MapM<S>(out.data(), m, n).noalias() = MapCM<S>(a.data(), m, k) * MapCM<S>(b.data(), k, n);
    if (grad_track({a, b})) {
        out.mark_op({a, b}, [an = a.node(), bn = b.node(), m, k, n](TensorNode<S>& o) {
            MapCM<S> g(o.grad.data(), m, n);
            if (an->requires_grad) {
                an->ensure_grad();
                MapM<S>(an->grad.data(), m, k).noalias() += g * MapCM<S>(bn->values.data(), k, n).transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MapM<S>(bn->grad.data(), k, n).noalias() += MapCM<S>(an->values.data(), m, k).transpose() * g;
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    detail::check(a.rank() == 2, "transpose: operand must be rank-2");
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor<S> out = Tensor<S>::uninit(Shape{n, m});
    MapM<S>(out.data(), n, m) = MapCM<S>(a.data(), m, n).transpose();
    if (grad_track(a)) {
        out.mark_op({a}, [an = a.node(), m, n](TensorNode<S>& o) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            MapM<S>(an->grad.data(), m, n) += MapCM<S>(o.grad.data(), n, m).transpose();
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& s) {
    detail::check(s.numel() == x.numel(),
                  "reshape: element count mismatch " + x.shape().str() + " -> " + s.str());
    Tensor<S> out = Tensor<S>::uninit(s);
    out.values() = x.values();
    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node()](TensorNode<S>& o) { accum_grad(*xn, o.grad); });
    }
    return out;
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& ts, int axis) {
    detail::check(!ts.empty(), "concat: no inputs");
    const Shape& s0 = ts[0].shape();
    detail::check(axis >= 0 && axis < s0.rank(), "concat: axis out of range");
    int total = 0;
    for (const auto& t : ts) {
        detail::check(t.rank() == s0.rank(), "concat: rank mismatch");
        for (int i = 0; i < s0.rank(); ++i)
            if (i != axis)
                detail::check(t.shape()[i] == s0[i], "concat: off-axis extent mismatch at axis " +
                                                         std::to_string(i));
        total += t.shape()[axis];
    }
    std::vector<int> dims;
    for (int i = 0; i < s0.rank(); ++i) dims.push_back(i == axis ? total : s0[i]);
    Tensor<S> out = Tensor<S>::uninit(Shape(dims));

    auto sp = detail::split_axis(out.shape(), axis);
    S* ov = out.data();
    for (Index o = 0; o < sp.outer; ++o) {
        Index dst = o * sp.len * sp.inner;
        for (const auto& t : ts) {
            const Index chunk = t.shape()[axis] * sp.inner;
            std::memcpy(ov + dst, t.data() + o * chunk, static_cast<size_t>(chunk) * sizeof(S));
            dst += chunk;
        }
    }

    bool track = false;
    for (const auto& t : ts) track = track || grad_track(t);
    if (track) {
        std::vector<std::shared_ptr<TensorNode<S>>> pn;
        std::vector<Index> chunks;
        for (const auto& t : ts) {
            pn.push_back(t.node());
            chunks.push_back(t.shape()[axis] * sp.inner);
        }
        out.mark_op(ts, [pn, chunks, sp](TensorNode<S>& o2) {
            const S* g = o2.grad.data();
            for (Index o = 0; o < sp.outer; ++o) {
                Index src = o * sp.len * sp.inner;
                for (size_t t = 0; t < pn.size(); ++t) {
                    if (pn[t]->requires_grad) {
                        pn[t]->ensure_grad();
                        S* gp = pn[t]->grad.data();
                        for (Index i = 0; i < chunks[t]; ++i) gp[o * chunks[t] + i] += g[src + i];
                    }
                    src += chunks[t];
                }
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len) {
    const Shape& s = x.shape();
    detail::check(axis >= 0 && axis < s.rank(), "slice: axis out of range");
    detail::check(start >= 0 && len >= 1 && start + len <= s[axis], "slice: window out of range");
    std::vector<int> dims;
    for (int i = 0; i < s.rank(); ++i) dims.push_back(i == axis ? len : s[i]);
    Tensor<S> out = Tensor<S>::uninit(Shape(dims));

    auto sp = detail::split_axis(s, axis);
    const Index chunk = static_cast<Index>(len) * sp.inner;
    const S* xv = x.data();
    S* ov = out.data();
    for (Index o = 0; o < sp.outer; ++o)
        std::memcpy(ov + o * chunk, xv + (o * sp.len + start) * sp.inner,
                    static_cast<size_t>(chunk) * sizeof(S));

    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node(), sp, start, chunk](TensorNode<S>& o2) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = o2.grad.data();
            S* gx = xn->grad.data();
            for (Index o = 0; o < sp.outer; ++o) {
                Index dst = (o * sp.len + start) * sp.inner;
                for (Index i = 0; i < chunk; ++i) gx[dst + i] += g[o * chunk + i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and normalizations along an axis
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    auto sp = detail::split_axis(x.shape(), axis);
    Tensor<S> out = Tensor<S>::uninit(x.shape());
    const S* xv = x.data();
    S* ov = out.data();
    for (Index o = 0; o < sp.outer; ++o)
        for (Index in = 0; in < sp.inner; ++in) {
            const Index base = o * sp.len * sp.inner + in;
            S m = xv[base];
            for (Index l = 1; l < sp.len; ++l) m = std::max(m, xv[base + l * sp.inner]);
            S sum = S(0);
            for (Index l = 0; l < sp.len; ++l) {
                S e = std::exp(xv[base + l * sp.inner] - m);
                ov[base + l * sp.inner] = e;
                sum += e;
            }
            for (Index l = 0; l < sp.len; ++l) ov[base + l * sp.inner] /= sum;
        }

    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node(), sp](TensorNode<S>& o2) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* y = o2.values.data();
            const S* g = o2.grad.data();
            S* gx = xn->grad.data();
            for (Index o = 0; o < sp.outer; ++o)
                for (Index in = 0; in < sp.inner; ++in) {
                    const Index base = o * sp.len * sp.inner + in;
                    S dot = S(0);
                    for (Index l = 0; l < sp.len; ++l) {
                        const Index i = base + l * sp.inner;
                        dot += g[i] * y[i];
                    }
                    for (Index l = 0; l < sp.len; ++l) {
                        const Index i = base + l * sp.inner;
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
        });
    }
    return out;
}

// Divides each vector along `axis` by sqrt(sum of squares + eps). Zero
// vectors map near zero instead of dividing by zero.
template <class S>
Tensor<S> l2_normalize(const Tensor<S>& x, int axis, S eps = S(1e-8)) {
    detail::check(eps > S(0), "l2_normalize: eps must be positive");
    auto sp = detail::split_axis(x.shape(), axis);
    Tensor<S> out = Tensor<S>::uninit(x.shape());
    std::vector<S> rinv(static_cast<size_t>(sp.outer * sp.inner));
    const S* xv = x.data();
    S* ov = out.data();
    for (Index o = 0; o < sp.outer; ++o)
        for (Index in = 0; in < sp.inner; ++in) {
            const Index base = o * sp.len * sp.inner + in;
            S ss = S(0);
            for (Index l = 0; l < sp.len; ++l) {
                S v = xv[base + l * sp.inner];
                ss += v * v;
            }
            S r = S(1) / std::sqrt(ss + eps);
            rinv[static_cast<size_t>(o * sp.inner + in)] = r;
            for (Index l = 0; l < sp.len; ++l) ov[base + l * sp.inner] = xv[base + l * sp.inner] * r;
        }

    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node(), sp, rinv = std::move(rinv)](TensorNode<S>& o2) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* xv2 = xn->values.data();
            const S* g = o2.grad.data();
            S* gx = xn->grad.data();
            for (Index o = 0; o < sp.outer; ++o)
                for (Index in = 0; in < sp.inner; ++in) {
                    const Index base = o * sp.len * sp.inner + in;
                    const S r = rinv[static_cast<size_t>(o * sp.inner + in)];
                    S dot = S(0);
                    for (Index l = 0; l < sp.len; ++l) {
                        const Index i = base + l * sp.inner;
                        dot += xv2[i] * g[i];
                    }
                    const S r3dot = r * r * r * dot;
                    for (Index l = 0; l < sp.len; ++l) {
                        const Index i = base + l * sp.inner;
                        gx[i] += r * g[i] - xv2[i] * r3dot;
                    }
                }
        });
    }
    return out;
}

// Maximum along `axis`, keeping the axis with extent 1. Ties route the
// gradient to the lowest index.
template <class S>
Tensor<S> reduce_max(const Tensor<S>& x, int axis) {
    auto sp = detail::split_axis(x.shape(), axis);
    std::vector<int> dims;
    for (int i = 0; i < x.rank(); ++i) dims.push_back(i == axis ? 1 : x.shape()[i]);
    Tensor<S> out = Tensor<S>::uninit(Shape(dims));
    std::vector<std::int32_t> arg(static_cast<size_t>(sp.outer * sp.inner));
    const S* xv = x.data();
    S* ov = out.data();
    for (Index o = 0; o < sp.outer; ++o)
        for (Index in = 0; in < sp.inner; ++in) {
            const Index base = o * sp.len * sp.inner + in;
            S m = xv[base];
            std::int32_t mi = 0;
            for (Index l = 1; l < sp.len; ++l) {
                S v = xv[base + l * sp.inner];
                if (v > m) {
                    m = v;
                    mi = static_cast<std::int32_t>(l);
                }
            }
            ov[o * sp.inner + in] = m;
            arg[static_cast<size_t>(o * sp.inner + in)] = mi;
        }

    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node(), sp, arg = std::move(arg)](TensorNode<S>& o2) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = o2.grad.data();
            S* gx = xn->grad.data();
            for (Index o = 0; o < sp.outer; ++o)
                for (Index in = 0; in < sp.inner; ++in) {
                    const Index j = o * sp.inner + in;
                    gx[o * sp.len * sp.inner + arg[static_cast<size_t>(j)] * sp.inner + in] += g[j];
                }
        });
    }
    return out;
}

// Global average pool: BxCxHxW -> BxCx1x1.
template <class S>
Tensor<S> mean_spatial(const Tensor<S>& x) {
    detail::check(x.rank() == 4, "mean_spatial: input must be BxCxHxW");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const Index hw = static_cast<Index>(H) * W;
    Tensor<S> out = Tensor<S>::uninit(Shape{B, C, 1, 1});
    const S* xv = x.data();
    S* ov = out.data();
    for (Index bc = 0; bc < static_cast<Index>(B) * C; ++bc) {
        S sum = S(0);
        for (Index i = 0; i < hw; ++i) sum += xv[bc * hw + i];
        ov[bc] = sum / static_cast<S>(hw);
    }
    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node(), B, C, hw](TensorNode<S>& o2) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = o2.grad.data();
            S* gx = xn->grad.data();
            for (Index bc = 0; bc < static_cast<Index>(B) * C; ++bc) {
                const S d = g[bc] / static_cast<S>(hw);
                for (Index i = 0; i < hw; ++i) gx[bc * hw + i] += d;
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::uninit(Shape{1});
    out.values()[0] = x.values().sum();
    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node()](TensorNode<S>& o) { accum_grad(*xn, o.grad[0]); });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with stride/padding/dilation, via im2col + GEMM
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void im2col(const S* x, int B, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
            int OH, int OW, S* col) {
    const Index cols = static_cast<Index>(B) * OH * OW;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                S* row = col + (static_cast<Index>(c) * kh * kw + ki * kw + kj) * cols;
                Index idx = 0;
                for (int b = 0; b < B; ++b) {
                    const S* xc = x + (static_cast<Index>(b) * C + c) * H * W;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride - pad + ki * dil;
                        if (iy < 0 || iy >= H) {
                            for (int ox = 0; ox < OW; ++ox) row[idx++] = S(0);
                            continue;
                        }
                        for (int ox = 0; ox < OW; ++ox) {
                            const int ix = ox * stride - pad + kj * dil;
                            row[idx++] = (ix >= 0 && ix < W) ? xc[static_cast<Index>(iy) * W + ix] : S(0);
                        }
                    }
                }
            }
}

template <class S>
void col2im_add(const S* col, int B, int C, int H, int W, int kh, int kw, int stride, int pad,
                int dil, int OH, int OW, S* dx) {
    const Index cols = static_cast<Index>(B) * OH * OW;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const S* row = col + (static_cast<Index>(c) * kh * kw + ki * kw + kj) * cols;
                Index idx = 0;
                for (int b = 0; b < B; ++b) {
                    S* xc = dx + (static_cast<Index>(b) * C + c) * H * W;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride - pad + ki * dil;
                        if (iy < 0 || iy >= H) {
                            idx += OW;
                            continue;
                        }
                        for (int ox = 0; ox < OW; ++ox) {
                            const int ix = ox * stride - pad + kj * dil;
                            if (ix >= 0 && ix < W) xc[static_cast<Index>(iy) * W + ix] += row[idx];
                            ++idx;
                        }
                    }
                }
            }
}

}  // namespace detail

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride = 1,
                 int padding = 0, int dilation = 1) {
    detail::check(x.rank() == 4, "conv2d: input must be BxCxHxW, got " + x.shape().str());
    detail::check(w.rank() == 4, "conv2d: weight must be CoutxCinxKhxKw, got " + w.shape().str());
    detail::check(bias.rank() == 1, "conv2d: bias must be rank-1");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Cout = w.shape()[0], Cin = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    detail::check(Cin == C, "conv2d: channel mismatch, input " + x.shape().str() + " vs weight " +
                                w.shape().str());
    detail::check(bias.shape()[0] == Cout, "conv2d: bias extent != Cout");
    detail::check(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd");
    detail::check(stride >= 1 && padding >= 0 && dilation >= 1, "conv2d: bad stride/padding/dilation");
    const int OH = (H + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    const int OW = (W + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    detail::check(H + 2 * padding - dilation * (kh - 1) - 1 >= 0 &&
                      W + 2 * padding - dilation * (kw - 1) - 1 >= 0 && OH >= 1 && OW >= 1,
                  "conv2d: non-positive output extent");

    const Index ck = static_cast<Index>(C) * kh * kw;
    const Index cols = static_cast<Index>(B) * OH * OW;
    std::vector<S> col(static_cast<size_t>(ck * cols));
    detail::im2col(x.data(), B, C, H, W, kh, kw, stride, padding, dilation, OH, OW, col.data());

    MatRM<S> y(Cout, cols);
    y.noalias() = MapCM<S>(w.data(), Cout, ck) * MapCM<S>(col.data(), ck, cols);

    Tensor<S> out = Tensor<S>::uninit(Shape{B, Cout, OH, OW});
    const Index ohw = static_cast<Index>(OH) * OW;
    S* ov = out.data();
    const S* bv = bias.data();
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co) {
            const S* src = y.data() + static_cast<Index>(co) * cols + static_cast<Index>(b) * ohw;
            S* dst = ov + (static_cast<Index>(b) * Cout + co) * ohw;
            const S bb = bv[co];
            for (Index i = 0; i < ohw; ++i) dst[i] = src[i] + bb;
        }

    if (grad_track({x, w, bias})) {
        out.mark_op({x, w, bias}, [xn = x.node(), wn = w.node(), bn = bias.node(), B, C, H, W, Cout,
                                   kh, kw, stride, padding, dilation, OH, OW](TensorNode<S>& o) {
            const Index ck2 = static_cast<Index>(C) * kh * kw;
            const Index cols2 = static_cast<Index>(B) * OH * OW;
            const Index ohw2 = static_cast<Index>(OH) * OW;

            // Reassemble dY in GEMM layout (Cout x B*OH*OW).
            MatRM<S> dy(Cout, cols2);
            const S* g = o.grad.data();
            for (int b = 0; b < B; ++b)
                for (int co = 0; co < Cout; ++co)
                    std::memcpy(dy.data() + static_cast<Index>(co) * cols2 + static_cast<Index>(b) * ohw2,
                                g + (static_cast<Index>(b) * Cout + co) * ohw2,
                                static_cast<size_t>(ohw2) * sizeof(S));

            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int co = 0; co < Cout; ++co) bn->grad[co] += dy.row(co).sum();
            }
            if (wn->requires_grad) {
                std::vector<S> col2(static_cast<size_t>(ck2 * cols2));
                detail::im2col(xn->values.data(), B, C, H, W, kh, kw, stride, padding, dilation, OH,
                               OW, col2.data());
                wn->ensure_grad();
                MapM<S>(wn->grad.data(), Cout, ck2).noalias() +=
                    dy * MapCM<S>(col2.data(), ck2, cols2).transpose();
            }
            if (xn->requires_grad) {
                std::vector<S> dcol(static_cast<size_t>(ck2 * cols2));
                MapM<S>(dcol.data(), ck2, cols2).noalias() =
                    MapCM<S>(wn->values.data(), Cout, ck2).transpose() * dy;
                xn->ensure_grad();
                detail::col2im_add(dcol.data(), B, C, H, W, kh, kw, stride, padding, dilation, OH, OW,
                                   xn->grad.data());
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// group_norm
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> group_norm(const Tensor<S>& x, int groups, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-8)) {
    detail::check(x.rank() == 4, "group_norm: input must be BxCxHxW");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    detail::check(groups >= 1 && C % groups == 0, "group_norm: C not divisible by groups");
    detail::check(gamma.rank() == 1 && gamma.shape()[0] == C, "group_norm: gamma must have C extents");
    detail::check(beta.rank() == 1 && beta.shape()[0] == C, "group_norm: beta must have C extents");
    detail::check(eps > S(0), "group_norm: eps must be positive");

    const int cg = C / groups;
    const Index hw = static_cast<Index>(H) * W;
    const Index glen = cg * hw;
    Tensor<S> out = Tensor<S>::uninit(x.shape());
    std::vector<S> means(static_cast<size_t>(B) * groups), invs(static_cast<size_t>(B) * groups);

    const S* xv = x.data();
    const S* gv = gamma.data();
    const S* bv = beta.data();
    S* ov = out.data();
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < groups; ++g) {
            const Index base = (static_cast<Index>(b) * C + static_cast<Index>(g) * cg) * hw;
            S mean = S(0);
            for (Index i = 0; i < glen; ++i) mean += xv[base + i];
            mean /= static_cast<S>(glen);
            S var = S(0);
            for (Index i = 0; i < glen; ++i) {
                S d = xv[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<S>(glen);
            const S inv = S(1) / std::sqrt(var + eps);
            means[static_cast<size_t>(b) * groups + g] = mean;
            invs[static_cast<size_t>(b) * groups + g] = inv;
            for (int c = 0; c < cg; ++c) {
                const S ga = gv[g * cg + c], be = bv[g * cg + c];
                const Index cbase = base + static_cast<Index>(c) * hw;
                for (Index i = 0; i < hw; ++i)
                    ov[cbase + i] = ga * ((xv[cbase + i] - mean) * inv) + be;
            }
        }

    if (grad_track({x, gamma, beta})) {
        out.mark_op({x, gamma, beta},
                    [xn = x.node(), gn = gamma.node(), bn = beta.node(), B, C, groups, cg, hw, glen,
                     means = std::move(means), invs = std::move(invs)](TensorNode<S>& o) {
                        const S* xv2 = xn->values.data();
                        const S* gv2 = gn->values.data();
                        const S* g = o.grad.data();
                        if (gn->requires_grad) gn->ensure_grad();
                        if (bn->requires_grad) bn->ensure_grad();
                        if (xn->requires_grad) xn->ensure_grad();
                        for (int b = 0; b < B; ++b)
                            for (int gr = 0; gr < groups; ++gr) {
                                const Index base =
                                    (static_cast<Index>(b) * C + static_cast<Index>(gr) * cg) * hw;
                                const S mean = means[static_cast<size_t>(b) * groups + gr];
                                const S inv = invs[static_cast<size_t>(b) * groups + gr];
                                // Per-channel affine grads.
                                if (gn->requires_grad || bn->requires_grad) {
                                    for (int c = 0; c < cg; ++c) {
                                        const Index cbase = base + static_cast<Index>(c) * hw;
                                        S dg = S(0), db = S(0);
                                        for (Index i = 0; i < hw; ++i) {
                                            const S xh = (xv2[cbase + i] - mean) * inv;
                                            dg += g[cbase + i] * xh;
                                            db += g[cbase + i];
                                        }
                                        if (gn->requires_grad) gn->grad[gr * cg + c] += dg;
                                        if (bn->requires_grad) bn->grad[gr * cg + c] += db;
                                    }
                                }
                                if (!xn->requires_grad) continue;
                                S s1 = S(0), s2 = S(0);
                                for (int c = 0; c < cg; ++c) {
                                    const S ga = gv2[gr * cg + c];
                                    const Index cbase = base + static_cast<Index>(c) * hw;
                                    for (Index i = 0; i < hw; ++i) {
                                        const S dyh = g[cbase + i] * ga;
                                        s1 += dyh;
                                        s2 += dyh * ((xv2[cbase + i] - mean) * inv);
                                    }
                                }
                                const S n = static_cast<S>(glen);
                                for (int c = 0; c < cg; ++c) {
                                    const S ga = gv2[gr * cg + c];
                                    const Index cbase = base + static_cast<Index>(c) * hw;
                                    for (Index i = 0; i < hw; ++i) {
                                        const S xh = (xv2[cbase + i] - mean) * inv;
                                        const S dyh = g[cbase + i] * ga;
                                        xn->grad[cbase + i] += inv * (dyh - s1 / n - xh * s2 / n);
                                    }
                                }
                            }
                    });
    }
    return out;
}

// ---------------------------------------------------------------------------
// bilinear_resize: half-pixel centers, edges clamped
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
struct LerpTable {
    std::vector<int> i0, i1;
    std::vector<S> f;
};

template <class S>
LerpTable<S> lerp_table(int in, int out) {
    LerpTable<S> t;
    t.i0.resize(static_cast<size_t>(out));
    t.i1.resize(static_cast<size_t>(out));
    t.f.resize(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        if (s > in - 1) s = in - 1;
        int i0 = static_cast<int>(s);
        if (i0 > in - 1) i0 = in - 1;
        t.i0[static_cast<size_t>(d)] = i0;
        t.i1[static_cast<size_t>(d)] = std::min(i0 + 1, in - 1);
        t.f[static_cast<size_t>(d)] = static_cast<S>(s - i0);
    }
    return t;
}

}  // namespace detail

template <class S>
Tensor<S> bilinear_resize(const Tensor<S>& x, int out_h, int out_w) {
    detail::check(x.rank() == 4, "bilinear_resize: input must be BxCxHxW");
    detail::check(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents must be positive");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];

    if (out_h == H && out_w == W) {
        Tensor<S> out = Tensor<S>::uninit(x.shape());
        out.values() = x.values();
        if (grad_track(x))
            out.mark_op({x}, [xn = x.node()](TensorNode<S>& o) { accum_grad(*xn, o.grad); });
        return out;
    }

    auto ty = detail::lerp_table<S>(H, out_h);
    auto tx = detail::lerp_table<S>(W, out_w);
    Tensor<S> out = Tensor<S>::uninit(Shape{B, C, out_h, out_w});
    const S* xv = x.data();
    S* ov = out.data();
    const Index hw = static_cast<Index>(H) * W;
    const Index ohw = static_cast<Index>(out_h) * out_w;
    for (Index bc = 0; bc < static_cast<Index>(B) * C; ++bc) {
        const S* src = xv + bc * hw;
        S* dst = ov + bc * ohw;
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ty.i0[static_cast<size_t>(oy)], y1 = ty.i1[static_cast<size_t>(oy)];
            const S fy = ty.f[static_cast<size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = tx.i0[static_cast<size_t>(ox)], x1 = tx.i1[static_cast<size_t>(ox)];
                const S fx = tx.f[static_cast<size_t>(ox)];
                const S v00 = src[static_cast<Index>(y0) * W + x0];
                const S v01 = src[static_cast<Index>(y0) * W + x1];
                const S v10 = src[static_cast<Index>(y1) * W + x0];
                const S v11 = src[static_cast<Index>(y1) * W + x1];
                const S top = v00 + fx * (v01 - v00);
                const S bot = v10 + fx * (v11 - v10);
                dst[static_cast<Index>(oy) * out_w + ox] = top + fy * (bot - top);
            }
        }
    }

    if (grad_track(x)) {
        out.mark_op({x}, [xn = x.node(), ty, tx, B, C, H, W, out_h, out_w](TensorNode<S>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = o.grad.data();
            S* gx = xn->grad.data();
            const Index hw2 = static_cast<Index>(H) * W;
            const Index ohw2 = static_cast<Index>(out_h) * out_w;
            for (Index bc = 0; bc < static_cast<Index>(B) * C; ++bc) {
                S* dsrc = gx + bc * hw2;
                const S* dg = g + bc * ohw2;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ty.i0[static_cast<size_t>(oy)], y1 = ty.i1[static_cast<size_t>(oy)];
                    const S fy = ty.f[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int x0 = tx.i0[static_cast<size_t>(ox)],
                                  x1 = tx.i1[static_cast<size_t>(ox)];
                        const S fx = tx.f[static_cast<size_t>(ox)];
                        const S gv = dg[static_cast<Index>(oy) * out_w + ox];
                        dsrc[static_cast<Index>(y0) * W + x0] += (S(1) - fy) * (S(1) - fx) * gv;
                        dsrc[static_cast<Index>(y0) * W + x1] += (S(1) - fy) * fx * gv;
                        dsrc[static_cast<Index>(y1) * W + x0] += fy * (S(1) - fx) * gv;
                        dsrc[static_cast<Index>(y1) * W + x1] += fy * fx * gv;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// cross_entropy: mean over all pixels of -log softmax(logits)[target]
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const LabelMap& targets) {
    detail::check(logits.rank() == 4, "cross_entropy: logits must be BxKxHxW");
    const int B = logits.shape()[0], K = logits.shape()[1], H = logits.shape()[2],
              W = logits.shape()[3];
    detail::check(targets.shape == Shape({B, H, W}),
                  "cross_entropy: targets must be BxHxW matching logits");
    const Index hw = static_cast<Index>(H) * W;
    const Index npix = static_cast<Index>(B) * hw;

    std::vector<S> lse(static_cast<size_t>(npix));
    const S* zv = logits.data();
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const S* zb = zv + static_cast<Index>(b) * K * hw;
        for (Index p = 0; p < hw; ++p) {
            const std::int32_t t = targets.v[static_cast<size_t>(b * hw + p)];
            if (t < 0 || t >= K)
                throw std::invalid_argument("cross_entropy: target index out of range [0," +
                                            std::to_string(K) + ")");
            S m = zb[p];
            for (int k = 1; k < K; ++k) m = std::max(m, zb[k * hw + p]);
            S sum = S(0);
            for (int k = 0; k < K; ++k) sum += std::exp(zb[k * hw + p] - m);
            const S l = m + std::log(sum);
            lse[static_cast<size_t>(b * hw + p)] = l;
            total += static_cast<double>(l - zb[t * hw + p]);
        }
    }
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(npix)));

    if (grad_track(logits)) {
        out.mark_op({logits}, [zn = logits.node(), targets, B, K, hw, npix,
                               lse = std::move(lse)](TensorNode<S>& o) {
            if (!zn->requires_grad) return;
            zn->ensure_grad();
            const S go = o.grad[0] / static_cast<S>(npix);
            const S* zv2 = zn->values.data();
            S* gz = zn->grad.data();
            for (int b = 0; b < B; ++b) {
                const Index zb = static_cast<Index>(b) * K * hw;
                for (Index p = 0; p < hw; ++p) {
                    const std::int32_t t = targets.v[static_cast<size_t>(b * hw + p)];
                    const S l = lse[static_cast<size_t>(b * hw + p)];
                    for (int k = 0; k < K; ++k) {
                        const Index i = zb + k * hw + p;
                        S d = std::exp(zv2[i] - l);
                        if (k == t) d -= S(1);
                        gz[i] += d * go;
                    }
                }
            }
        });
    }
    return out;
}

// Argmax over the class axis of BxKxHxW logits; ties break to the lowest
// class index. Produces a BxHxW label map (not differentiable).
template <class S>
LabelMap argmax_channels(const Tensor<S>& logits) {
    detail::check(logits.rank() == 4, "argmax_channels: logits must be BxKxHxW");
    const int B = logits.shape()[0], K = logits.shape()[1], H = logits.shape()[2],
              W = logits.shape()[3];
    const Index hw = static_cast<Index>(H) * W;
    LabelMap m = LabelMap::zeros(Shape{B, H, W});
    const S* zv = logits.data();
    for (int b = 0; b < B; ++b) {
        const S* zb = zv + static_cast<Index>(b) * K * hw;
        for (Index p = 0; p < hw; ++p) {
            S best = zb[p];
            std::int32_t bi = 0;
            for (int k = 1; k < K; ++k) {
                const S v = zb[k * hw + p];
                if (v > best) {
                    best = v;
                    bi = static_cast<std::int32_t>(k);
                }
            }
            m.v[static_cast<size_t>(b * hw + p)] = bi;
        }
    }
    return m;
}

}  // namespace duoseg

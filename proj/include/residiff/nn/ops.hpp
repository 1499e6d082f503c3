#pragma once

#include "residiff/nn/tensor.hpp"

#include <Eigen/Core>

#include <memory>

namespace residiff::nn {

template <class S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

namespace detail {

template <class S>
void im2col(const S* x, long n_batch, long ci, long h, long w, long kh, long kw, long stride,
            long pad, long ho, long wo, S* cols) {
    const long col_w = n_batch * ho * wo;
#pragma omp parallel for schedule(static)
    for (long c = 0; c < ci; ++c) {
        for (long ky = 0; ky < kh; ++ky) {
            for (long kx = 0; kx < kw; ++kx) {
                S* dst = cols + ((c * kh + ky) * kw + kx) * col_w;
                for (long n = 0; n < n_batch; ++n) {
                    const S* src = x + (n * ci + c) * h * w;
                    for (long oy = 0; oy < ho; ++oy) {
                        const long iy = oy * stride - pad + ky;
                        S* drow = dst + n * ho * wo + oy * wo;
                        if (iy < 0 || iy >= h) {
                            for (long ox = 0; ox < wo; ++ox) drow[ox] = S(0);
                            continue;
                        }
                        const S* srow = src + iy * w;
                        for (long ox = 0; ox < wo; ++ox) {
                            const long ix = ox * stride - pad + kx;
                            drow[ox] = (ix < 0 || ix >= w) ? S(0) : srow[ix];
                        }
                    }
                }
            }
        }
    }
}

template <class S>
void col2im_add(const S* cols, long n_batch, long ci, long h, long w, long kh, long kw,
                long stride, long pad, long ho, long wo, S* dx) {
    const long col_w = n_batch * ho * wo;
#pragma omp parallel for schedule(static) // channels write disjoint planes
    for (long c = 0; c < ci; ++c) {
        for (long ky = 0; ky < kh; ++ky) {
            for (long kx = 0; kx < kw; ++kx) {
                const S* src = cols + ((c * kh + ky) * kw + kx) * col_w;
                for (long n = 0; n < n_batch; ++n) {
                    S* dst = dx + (n * ci + c) * h * w;
                    for (long oy = 0; oy < ho; ++oy) {
                        const long iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const S* srow = src + n * ho * wo + oy * wo;
                        S* drow = dst + iy * w;
                        for (long ox = 0; ox < wo; ++ox) {
                            const long ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

// 2-D convolution, NCHW layout, square kernel taken from the weight shape
// (co, ci, k, k). The im2col buffer is retained for the weight gradient.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, long stride, long pad) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: expects 4-D x and w");
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xs) + " vs " +
                                    shape_str(ws));
    const long n = xs[0], ci = xs[1], h = xs[2], w = xs[3];
    const long co = ws[0], kh = ws[2], kw = ws[3];
    const long ho = (h + 2 * pad - kh) / stride + 1;
    const long wo = (w + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");

    const long ck = ci * kh * kw;
    const long col_w = n * ho * wo;
    auto cols = std::make_shared<std::vector<S>>(static_cast<std::size_t>(ck) * col_w);
    detail::im2col(x.value().ptr(), n, ci, h, w, kh, kw, stride, pad, ho, wo, cols->data());

    std::vector<S> gemm(static_cast<std::size_t>(co) * col_w);
    {
        ConstMatMap<S> wm(weight.value().ptr(), co, ck);
        ConstMatMap<S> cm(cols->data(), ck, col_w);
        MatMap<S> om(gemm.data(), co, col_w);
        om.noalias() = wm * cm;
    }

    Tensor<S> out(Shape{n, co, ho, wo});
    const bool has_bias = bias.defined();
    const S* bp = has_bias ? bias.value().ptr() : nullptr;
    {
        S* po = out.ptr();
        const long plane = ho * wo;
        for (long nb = 0; nb < n; ++nb)
            for (long c = 0; c < co; ++c) {
                const S* g = gemm.data() + c * col_w + nb * plane;
                S* dst = po + (nb * co + c) * plane;
                const S b = has_bias ? bp[c] : S(0);
                for (long i = 0; i < plane; ++i) dst[i] = g[i] + b;
            }
    }

    std::vector<Var<S>> parents = {x, weight};
    if (has_bias) parents.push_back(bias);
    return make_op_node<S>(
        std::move(out), parents,
        [x, weight, bias, cols, n, ci, h, w, co, kh, kw, stride, pad, ho, wo, ck,
         col_w, has_bias](Node<S>& nd) {
            const long plane = ho * wo;
            // regroup incoming grad to (co, n*ho*wo)
            std::vector<S> dg(static_cast<std::size_t>(co) * col_w);
            {
                const S* gp = nd.grad.ptr();
                for (long nb = 0; nb < n; ++nb)
                    for (long c = 0; c < co; ++c) {
                        const S* src = gp + (nb * co + c) * plane;
                        S* dst = dg.data() + c * col_w + nb * plane;
                        for (long i = 0; i < plane; ++i) dst[i] = src[i];
                    }
            }
            if (has_bias && bias.requires_grad()) {
                bias.node().ensure_grad();
                S* gb = bias.node().grad.ptr();
                for (long c = 0; c < co; ++c) {
                    S acc = S(0);
                    const S* row = dg.data() + c * col_w;
                    for (long i = 0; i < col_w; ++i) acc += row[i];
                    gb[c] += acc;
                }
            }
            if (weight.requires_grad()) {
                weight.node().ensure_grad();
                ConstMatMap<S> dgm(dg.data(), co, col_w);
                ConstMatMap<S> cm(cols->data(), ck, col_w);
                MatMap<S> gw(weight.node().grad.ptr(), co, ck);
                gw.noalias() += dgm * cm.transpose();
            }
            if (x.requires_grad()) {
                x.node().ensure_grad();
                std::vector<S> dcols(static_cast<std::size_t>(ck) * col_w);
                ConstMatMap<S> wm(weight.value().ptr(), co, ck);
                ConstMatMap<S> dgm(dg.data(), co, col_w);
                MatMap<S> dcm(dcols.data(), ck, col_w);
                dcm.noalias() = wm.transpose() * dgm;
                detail::col2im_add(dcols.data(), n, ci, h, w, kh, kw, stride, pad, ho, wo,
                                   x.node().grad.ptr());
            }
        });
}

// Transposed convolution with kernel 2, stride 2 (exact 2x upsample, no
// overlap). Weight layout (ci, co, 2, 2).
template <class S>
Var<S> conv_transpose2x(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[2] != 2 || ws[3] != 2)
        throw std::invalid_argument("conv_transpose2x: bad shapes");
    if (xs[1] != ws[0]) throw std::invalid_argument("conv_transpose2x: channel mismatch");
    const long n = xs[0], ci = xs[1], h = xs[2], w = xs[3];
    const long co = ws[1];
    const long hw = h * w;

    // gather x to (ci, n*h*w)
    auto xg = std::make_shared<std::vector<S>>(static_cast<std::size_t>(ci) * n * hw);
    {
        const S* px = x.value().ptr();
        for (long c = 0; c < ci; ++c)
            for (long nb = 0; nb < n; ++nb)
                std::copy(px + (nb * ci + c) * hw, px + (nb * ci + c + 1) * hw,
                          xg->data() + c * n * hw + nb * hw);
    }
    // wmat (co*4, ci): row = co*4 + (dy*2+dx)
    std::vector<S> wmat(static_cast<std::size_t>(co) * 4 * ci);
    {
        const S* pw = weight.value().ptr();
        for (long c = 0; c < ci; ++c)
            for (long o = 0; o < co; ++o)
                for (long k = 0; k < 4; ++k)
                    wmat[(o * 4 + k) * ci + c] = pw[(c * co + o) * 4 + k];
    }
    std::vector<S> gemm(static_cast<std::size_t>(co) * 4 * n * hw);
    {
        ConstMatMap<S> wm(wmat.data(), co * 4, ci);
        ConstMatMap<S> xm(xg->data(), ci, n * hw);
        MatMap<S> om(gemm.data(), co * 4, n * hw);
        om.noalias() = wm * xm;
    }
    Tensor<S> out(Shape{n, co, 2 * h, 2 * w});
    const bool has_bias = bias.defined();
    {
        S* po = out.ptr();
        const S* bp = has_bias ? bias.value().ptr() : nullptr;
        if (has_bias) {
            const long plane = 4 * hw;
            for (long nb = 0; nb < n; ++nb)
                for (long o = 0; o < co; ++o) {
                    S* dst = po + (nb * co + o) * plane;
                    const S b = bp[o];
                    for (long i = 0; i < plane; ++i) dst[i] = b;
                }
        }
        for (long o = 0; o < co; ++o)
            for (long dy = 0; dy < 2; ++dy)
                for (long dx = 0; dx < 2; ++dx) {
                    const S* g = gemm.data() + (o * 4 + dy * 2 + dx) * n * hw;
                    for (long nb = 0; nb < n; ++nb) {
                        S* dst = po + ((nb * co + o) * 2 * h + dy) * 2 * w + dx;
                        const S* src = g + nb * hw;
                        for (long y = 0; y < h; ++y)
                            for (long xx = 0; xx < w; ++xx)
                                dst[(y * 2) * 2 * w + xx * 2] += src[y * w + xx];
                    }
                }
    }

    std::vector<Var<S>> parents = {x, weight};
    if (has_bias) parents.push_back(bias);
    return make_op_node<S>(
        std::move(out), parents, [x, weight, bias, xg, n, ci, h, w, co, has_bias](Node<S>& nd) {
            const long hw = h * w;
            // gather grad to (co*4, n*h*w)
            std::vector<S> dg(static_cast<std::size_t>(co) * 4 * n * hw);
            {
                const S* gp = nd.grad.ptr();
                for (long o = 0; o < co; ++o)
                    for (long dy = 0; dy < 2; ++dy)
                        for (long dx = 0; dx < 2; ++dx) {
                            S* dst = dg.data() + (o * 4 + dy * 2 + dx) * n * hw;
                            for (long nb = 0; nb < n; ++nb) {
                                const S* src = gp + ((nb * co + o) * 2 * h + dy) * 2 * w + dx;
                                for (long y = 0; y < h; ++y)
                                    for (long xx = 0; xx < w; ++xx)
                                        dst[nb * hw + y * w + xx] = src[(y * 2) * 2 * w + xx * 2];
                            }
                        }
            }
            if (has_bias && bias.requires_grad()) {
                bias.node().ensure_grad();
                S* gb = bias.node().grad.ptr();
                for (long o = 0; o < co; ++o) {
                    S acc = S(0);
                    for (long k = 0; k < 4; ++k) {
                        const S* row = dg.data() + (o * 4 + k) * n * hw;
                        for (long i = 0; i < n * hw; ++i) acc += row[i];
                    }
                    gb[o] += acc;
                }
            }
            if (weight.requires_grad()) {
                weight.node().ensure_grad();
                std::vector<S> dwmat(static_cast<std::size_t>(co) * 4 * ci);
                ConstMatMap<S> dgm(dg.data(), co * 4, n * hw);
                ConstMatMap<S> xm(xg->data(), ci, n * hw);
                MatMap<S> dwm(dwmat.data(), co * 4, ci);
                dwm.noalias() = dgm * xm.transpose();
                S* gw = weight.node().grad.ptr();
                for (long c = 0; c < ci; ++c)
                    for (long o = 0; o < co; ++o)
                        for (long k = 0; k < 4; ++k)
                            gw[(c * co + o) * 4 + k] += dwmat[(o * 4 + k) * ci + c];
            }
            if (x.requires_grad()) {
                x.node().ensure_grad();
                std::vector<S> wmat(static_cast<std::size_t>(co) * 4 * ci);
                const S* pw = weight.value().ptr();
                for (long c = 0; c < ci; ++c)
                    for (long o = 0; o < co; ++o)
                        for (long k = 0; k < 4; ++k)
                            wmat[(o * 4 + k) * ci + c] = pw[(c * co + o) * 4 + k];
                std::vector<S> dxg(static_cast<std::size_t>(ci) * n * hw);
                ConstMatMap<S> wm(wmat.data(), co * 4, ci);
                ConstMatMap<S> dgm(dg.data(), co * 4, n * hw);
                MatMap<S> dxm(dxg.data(), ci, n * hw);
                dxm.noalias() = wm.transpose() * dgm;
                S* gx = x.node().grad.ptr();
                for (long c = 0; c < ci; ++c)
                    for (long nb = 0; nb < n; ++nb) {
                        const S* src = dxg.data() + c * n * hw + nb * hw;
                        S* dst = gx + (nb * ci + c) * hw;
                        for (long i = 0; i < hw; ++i) dst[i] += src[i];
                    }
            }
        });
}

// Same-size box mean filter (odd k, zero padding, divisor k*k). Separable; its
// adjoint is itself.
template <class S>
Var<S> box_mean_same(const Var<S>& x, long k) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || k % 2 == 0) throw std::invalid_argument("box_mean_same: bad input");
    const long n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const long r = k / 2;
    auto run = [n, c, h, w, r, k](const S* src, S* dst) {
        std::vector<S> tmp(static_cast<std::size_t>(h) * w);
        const S inv = S(1) / static_cast<S>(k * k);
        for (long img = 0; img < n * c; ++img) {
            const S* in = src + img * h * w;
            S* out = dst + img * h * w;
            // horizontal pass
            for (long y = 0; y < h; ++y)
                for (long x2 = 0; x2 < w; ++x2) {
                    S acc = S(0);
                    const long lo = std::max<long>(0, x2 - r), hi2 = std::min<long>(w - 1, x2 + r);
                    for (long xx = lo; xx <= hi2; ++xx) acc += in[y * w + xx];
                    tmp[y * w + x2] = acc;
                }
            // vertical pass
            for (long y = 0; y < h; ++y)
                for (long x2 = 0; x2 < w; ++x2) {
                    S acc = S(0);
                    const long lo = std::max<long>(0, y - r), hi2 = std::min<long>(h - 1, y + r);
                    for (long yy = lo; yy <= hi2; ++yy) acc += tmp[yy * w + x2];
                    out[y * w + x2] = acc * inv;
                }
        }
    };
    Tensor<S> out(xs);
    run(x.value().ptr(), out.ptr());
    return make_op_node<S>(std::move(out), {x}, [x, run](Node<S>& nd) {
        if (!x.requires_grad()) return;
        x.node().ensure_grad();
        Tensor<S> tmp(nd.grad.shape);
        run(nd.grad.ptr(), tmp.ptr());
        S* gx = x.node().grad.ptr();
        const long cnt = tmp.size();
        for (long i = 0; i < cnt; ++i) gx[i] += tmp.data[i];
    });
}

// Bilinear resize with half-pixel centers.
template <class S>
Var<S> bilinear_resize(const Var<S>& x, long out_h, long out_w) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("bilinear_resize: expects 4-D");
    const long n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    if (out_h == h && out_w == w) return x;

    struct Tap {
        long i0, i1;
        S w0, w1;
    };
    auto make_taps = [](long in, long out) {
        std::vector<Tap> taps(out);
        const double scale = static_cast<double>(in) / out;
        for (long o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            const long i0 = static_cast<long>(src);
            const long i1 = std::min(i0 + 1, in - 1);
            const S f = static_cast<S>(src - i0);
            taps[o] = {i0, i1, S(1) - f, f};
        }
        return taps;
    };
    auto ty = std::make_shared<std::vector<Tap>>(make_taps(h, out_h));
    auto tx = std::make_shared<std::vector<Tap>>(make_taps(w, out_w));

    Tensor<S> out(Shape{n, c, out_h, out_w});
    {
        const S* px = x.value().ptr();
        S* po = out.ptr();
        for (long img = 0; img < n * c; ++img) {
            const S* in = px + img * h * w;
            S* dst = po + img * out_h * out_w;
            for (long oy = 0; oy < out_h; ++oy) {
                const Tap& yt = (*ty)[oy];
                for (long ox = 0; ox < out_w; ++ox) {
                    const Tap& xt = (*tx)[ox];
                    dst[oy * out_w + ox] = yt.w0 * (xt.w0 * in[yt.i0 * w + xt.i0] +
                                                    xt.w1 * in[yt.i0 * w + xt.i1]) +
                                           yt.w1 * (xt.w0 * in[yt.i1 * w + xt.i0] +
                                                    xt.w1 * in[yt.i1 * w + xt.i1]);
                }
            }
        }
    }
    return make_op_node<S>(std::move(out), {x}, [x, ty, tx, n, c, h, w, out_h, out_w](Node<S>& nd) {
        if (!x.requires_grad()) return;
        x.node().ensure_grad();
        S* gx = x.node().grad.ptr();
        const S* go = nd.grad.ptr();
        for (long img = 0; img < n * c; ++img) {
            S* dst = gx + img * h * w;
            const S* src = go + img * out_h * out_w;
            for (long oy = 0; oy < out_h; ++oy) {
                const auto& yt = (*ty)[oy];
                for (long ox = 0; ox < out_w; ++ox) {
                    const auto& xt = (*tx)[ox];
                    const S g = src[oy * out_w + ox];
                    dst[yt.i0 * w + xt.i0] += yt.w0 * xt.w0 * g;
                    dst[yt.i0 * w + xt.i1] += yt.w0 * xt.w1 * g;
                    dst[yt.i1 * w + xt.i0] += yt.w1 * xt.w0 * g;
                    dst[yt.i1 * w + xt.i1] += yt.w1 * xt.w1 * g;
                }
            }
        }
    });
}

// Zero padding on the bottom/right of the spatial dims.
template <class S>
Var<S> pad_bottom_right(const Var<S>& x, long pad_h, long pad_w) {
    if (pad_h == 0 && pad_w == 0) return x;
    const Shape& xs = x.shape();
    const long n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const long oh = h + pad_h, ow = w + pad_w;
    Tensor<S> out(Shape{n, c, oh, ow});
    const S* px = x.value().ptr();
    S* po = out.ptr();
    for (long img = 0; img < n * c; ++img)
        for (long y = 0; y < h; ++y)
            std::copy(px + (img * h + y) * w, px + (img * h + y + 1) * w,
                      po + (img * oh + y) * ow);
    return make_op_node<S>(std::move(out), {x}, [x, n, c, h, w, oh, ow](Node<S>& nd) {
        if (!x.requires_grad()) return;
        x.node().ensure_grad();
        S* gx = x.node().grad.ptr();
        const S* go = nd.grad.ptr();
        for (long img = 0; img < n * c; ++img)
            for (long y = 0; y < h; ++y) {
                const S* src = go + (img * oh + y) * ow;
                S* dst = gx + (img * h + y) * w;
                for (long i = 0; i < w; ++i) dst[i] += src[i];
            }
    });
}

// Crop to the top-left h x w region (inverse of pad_bottom_right).
template <class S>
Var<S> crop_top_left(const Var<S>& x, long out_h, long out_w) {
    const Shape& xs = x.shape();
    if (xs[2] == out_h && xs[3] == out_w) return x;
    const long n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    Tensor<S> out(Shape{n, c, out_h, out_w});
    const S* px = x.value().ptr();
    S* po = out.ptr();
    for (long img = 0; img < n * c; ++img)
        for (long y = 0; y < out_h; ++y)
            std::copy(px + (img * h + y) * w, px + (img * h + y) * w + out_w,
                      po + (img * out_h + y) * out_w);
    return make_op_node<S>(std::move(out), {x}, [x, n, c, h, w, out_h, out_w](Node<S>& nd) {
        if (!x.requires_grad()) return;
        x.node().ensure_grad();
        S* gx = x.node().grad.ptr();
        const S* go = nd.grad.ptr();
        for (long img = 0; img < n * c; ++img)
            for (long y = 0; y < out_h; ++y) {
                const S* src = go + (img * out_h + y) * out_w;
                S* dst = gx + (img * h + y) * w;
                for (long i = 0; i < out_w; ++i) dst[i] += src[i];
            }
    });
}

namespace detail {

// (m,k) x (k,n) += / = with a tight axpy loop; beats the general GEMM when
// the inner dimension is tiny (attention with small head dims).
template <class S, bool Accumulate>
void smallk_matmul(const S* a, const S* b, S* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        ArrMap<S> crow(c + i * n, n);
        if constexpr (!Accumulate) crow.setZero();
        for (long kk = 0; kk < k; ++kk) {
            const S aik = a[i * k + kk];
            ConstArrMap<S> brow(b + kk * n, n);
            crow += aik * brow;
        }
    }
}

} // namespace detail

// Batched matrix multiply: (b, m, k) x (b, k, n) -> (b, m, n).
template <class S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1])
        throw std::invalid_argument("bmm: bad shapes " + shape_str(as) + " x " + shape_str(bs));
    const long nb = as[0], m = as[1], k = as[2], n = bs[2];
    Tensor<S> out(Shape{nb, m, n});
#pragma omp parallel for schedule(static)
    for (long i = 0; i < nb; ++i) {
        if (k <= 8) {
            detail::smallk_matmul<S, false>(a.value().ptr() + i * m * k,
                                            b.value().ptr() + i * k * n, out.ptr() + i * m * n, m,
                                            k, n);
            continue;
        }
        ConstMatMap<S> am(a.value().ptr() + i * m * k, m, k);
        ConstMatMap<S> bm(b.value().ptr() + i * k * n, k, n);
        MatMap<S> om(out.ptr() + i * m * n, m, n);
        om.noalias() = am * bm;
    }
    return make_op_node<S>(std::move(out), {a, b}, [a, b, nb, m, k, n](Node<S>& nd) {
        const bool need_a = a.requires_grad();
        const bool need_b = b.requires_grad();
        if (need_a) a.node().ensure_grad();
        if (need_b) b.node().ensure_grad();
#pragma omp parallel for schedule(static) // per-batch slices are disjoint
        for (long i = 0; i < nb; ++i) {
            ConstMatMap<S> gm(nd.grad.ptr() + i * m * n, m, n);
            if (need_a) {
                ConstMatMap<S> bm(b.node().value.ptr() + i * k * n, k, n);
                MatMap<S> ga(a.node().grad.ptr() + i * m * k, m, k);
                ga.noalias() += gm * bm.transpose();
            }
            if (need_b) {
                ConstMatMap<S> am(a.node().value.ptr() + i * m * k, m, k);
                MatMap<S> gb(b.node().grad.ptr() + i * k * n, k, n);
                gb.noalias() += am.transpose() * gm;
            }
        }
    });
}

// Dense layer on (n, d_in): y = x W^T + b with W (d_out, d_in).
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw std::invalid_argument("linear: bad shapes");
    const long n = xs[0], din = xs[1], dout = ws[0];
    Tensor<S> out(Shape{n, dout});
    {
        ConstMatMap<S> xm(x.value().ptr(), n, din);
        ConstMatMap<S> wm(weight.value().ptr(), dout, din);
        MatMap<S> om(out.ptr(), n, dout);
        om.noalias() = xm * wm.transpose();
        if (bias.defined()) {
            const S* bp = bias.value().ptr();
            for (long r = 0; r < n; ++r)
                for (long c2 = 0; c2 < dout; ++c2) om(r, c2) += bp[c2];
        }
    }
    std::vector<Var<S>> parents = {x, weight};
    const bool has_bias = bias.defined();
    if (has_bias) parents.push_back(bias);
    return make_op_node<S>(std::move(out), parents, [x, weight, bias, n, din, dout, has_bias](Node<S>& nd) {
        ConstMatMap<S> gm(nd.grad.ptr(), n, dout);
        if (x.requires_grad()) {
            x.node().ensure_grad();
            ConstMatMap<S> wm(weight.node().value.ptr(), dout, din);
            MatMap<S> gx(x.node().grad.ptr(), n, din);
            gx.noalias() += gm * wm;
        }
        if (weight.requires_grad()) {
            weight.node().ensure_grad();
            ConstMatMap<S> xm(x.node().value.ptr(), n, din);
            MatMap<S> gw(weight.node().grad.ptr(), dout, din);
            gw.noalias() += gm.transpose() * xm;
        }
        if (has_bias && bias.requires_grad()) {
            bias.node().ensure_grad();
            S* gb = bias.node().grad.ptr();
            for (long r = 0; r < n; ++r)
                for (long c2 = 0; c2 < dout; ++c2) gb[c2] += gm(r, c2);
        }
    });
}

// (n, c, h, w) -> (n*nh*nw, c, win, win); h and w must be multiples of win.
template <class S>
Var<S> window_partition(const Var<S>& x, long win) {
    const Shape& xs = x.shape();
    const long n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    if (h % win != 0 || w % win != 0)
        throw std::invalid_argument("window_partition: size not divisible by window");
    const long nh = h / win, nw = w / win;
    auto r1 = reshape(x, Shape{n, c, nh, win, nw, win});
    auto p = permute(r1, {0, 2, 4, 1, 3, 5});
    return reshape(p, Shape{n * nh * nw, c, win, win});
}

// Inverse of window_partition.
template <class S>
Var<S> window_merge(const Var<S>& x, long win, long n, long h, long w) {
    const long nh = h / win, nw = w / win;
    const Shape& xs = x.shape();
    const long c = xs[1];
    auto r1 = reshape(x, Shape{n, nh, nw, c, win, win});
    auto p = permute(r1, {0, 3, 1, 4, 2, 5});
    return reshape(p, Shape{n, c, h, w});
}

} // namespace residiff::nn

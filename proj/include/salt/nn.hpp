#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "core.hpp"

namespace salt {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
void silu_forward(const Tensor<S>& x, Tensor<S>& y) {
    y = x;
    for (auto& e : y.v) e = e * sigmoid(e);
}

template <typename S>
void silu_backward(const Tensor<S>& x, const Tensor<S>& dy, Tensor<S>& dx) {
    dx = dy;
    for (size_t i = 0; i < x.numel(); ++i) {
        S s = sigmoid(x.v[i]);
        dx.v[i] = dy.v[i] * s * (S(1) + x.v[i] * (S(1) - s));
    }
}

// FiLM: y[c] = x[c] * (1 + scale[c]) + shift[c], per channel over (C,H,W)
template <typename S>
void film_forward(const Tensor<S>& x, const S* scale, const S* shift, Tensor<S>& y) {
    int C = x.shape[0];
    size_t hw = size_t(x.shape[1]) * x.shape[2];
    y = Tensor<S>(x.shape);
    for (int c = 0; c < C; ++c) {
        S a = S(1) + scale[c], b = shift[c];
        const S* xi = x.data() + c * hw;
        S* yi = y.data() + c * hw;
        for (size_t i = 0; i < hw; ++i) yi[i] = a * xi[i] + b;
    }
}

template <typename S>
void film_backward(const Tensor<S>& x, const S* scale, const Tensor<S>& dy, Tensor<S>& dx,
                   S* dscale, S* dshift) {
    int C = x.shape[0];
    size_t hw = size_t(x.shape[1]) * x.shape[2];
    dx = Tensor<S>(x.shape);
    for (int c = 0; c < C; ++c) {
        S a = S(1) + scale[c], ds = 0, db = 0;
        const S* xi = x.data() + c * hw;
        const S* dyi = dy.data() + c * hw;
        S* dxi = dx.data() + c * hw;
        for (size_t i = 0; i < hw; ++i) {
            dxi[i] = a * dyi[i];
            ds += dyi[i] * xi[i];
            db += dyi[i];
        }
        dscale[c] += ds;
        dshift[c] += db;
    }
}

// ---------------------------------------------------------------------------
// linear: y = W x + b, W is (out, in)
// ---------------------------------------------------------------------------

template <typename S>
void linear_forward(const Tensor<S>& w, const Tensor<S>& b, const S* x, S* y) {
    int out = w.shape[0], in = w.shape[1];
    Eigen::Map<const RowMat<S>> W(w.data(), out, in);
    Eigen::Map<const VecX<S>> X(x, in);
    Eigen::Map<VecX<S>> Y(y, out);
    Y = W * X;
    for (int i = 0; i < out; ++i) y[i] += b.v[i];
}

template <typename S>
void linear_backward(const Tensor<S>& w, const S* x, const S* dy, S* dx, S* dw, S* db) {
    int out = w.shape[0], in = w.shape[1];
    Eigen::Map<const RowMat<S>> W(w.data(), out, in);
    Eigen::Map<const VecX<S>> X(x, in);
    Eigen::Map<const VecX<S>> DY(dy, out);
    if (dx) {
        Eigen::Map<VecX<S>> DX(dx, in);
        DX += W.transpose() * DY;
    }
    Eigen::Map<RowMat<S>> DW(dw, out, in);
    DW += DY * X.transpose();
    Eigen::Map<VecX<S>> DB(db, out);
    DB += DY;
}

// ---------------------------------------------------------------------------
// 3x3 same-padding convolution via im2col + gemm
// x: (Cin,H,W), w: (Cout,Cin,3,3), b: (Cout), y: (Cout,H,W)
// ---------------------------------------------------------------------------

template <typename S>
void im2col3(const Tensor<S>& x, RowMat<S>& cols) {
    int Cin = x.shape[0], H = x.shape[1], W = x.shape[2];
    cols.resize(H * W, Cin * 9);
    cols.setZero();
    for (int ci = 0; ci < Cin; ++ci)
        for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
                int col = (ci * 3 + kr) * 3 + kc;
                for (int r = 0; r < H; ++r) {
                    int sr = r + kr - 1;
                    if (sr < 0 || sr >= H) continue;
                    const S* src = x.data() + (size_t(ci) * H + sr) * W;
                    for (int c = 0; c < W; ++c) {
                        int sc = c + kc - 1;
                        if (sc < 0 || sc >= W) continue;
                        cols(r * W + c, col) = src[sc];
                    }
                }
            }
}

template <typename S>
void col2im3(const RowMat<S>& dcols, Tensor<S>& dx) {
    int Cin = dx.shape[0], H = dx.shape[1], W = dx.shape[2];
    for (int ci = 0; ci < Cin; ++ci)
        for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
                int col = (ci * 3 + kr) * 3 + kc;
                for (int r = 0; r < H; ++r) {
                    int sr = r + kr - 1;
                    if (sr < 0 || sr >= H) continue;
                    S* dst = dx.data() + (size_t(ci) * H + sr) * W;
                    for (int c = 0; c < W; ++c) {
                        int sc = c + kc - 1;
                        if (sc < 0 || sc >= W) continue;
                        dst[sc] += dcols(r * W + c, col);
                    }
                }
            }
}

template <typename S>
struct ConvCache {
    RowMat<S> cols;  // (H*W, Cin*9)
};

template <typename S>
void conv3_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Tensor<S>& y,
                   ConvCache<S>& cache) {
    int Cout = w.shape[0], Cin = w.shape[1];
    int H = x.shape[1], W = x.shape[2];
    if (x.shape[0] != Cin) throw contract_error("conv3: channel mismatch");
    im2col3(x, cache.cols);
    Eigen::Map<const RowMat<S>> Wm(w.data(), Cout, Cin * 9);
    y = Tensor<S>({Cout, H, W});
    // Y (P, Cout) scattered back channel-major
    RowMat<S> Y = cache.cols * Wm.transpose();
    for (int co = 0; co < Cout; ++co) {
        S* yi = y.data() + size_t(co) * H * W;
        for (int p = 0; p < H * W; ++p) yi[p] = Y(p, co) + b.v[co];
    }
}

template <typename S>
void conv3_backward(const Tensor<S>& w, const ConvCache<S>& cache, const Tensor<S>& dy,
                    Tensor<S>& dx, S* dw, S* db) {
    int Cout = w.shape[0], Cin = w.shape[1];
    int H = dy.shape[1], W = dy.shape[2];
    RowMat<S> DY(H * W, Cout);
    for (int co = 0; co < Cout; ++co) {
        const S* d = dy.data() + size_t(co) * H * W;
        S s = 0;
        for (int p = 0; p < H * W; ++p) {
            DY(p, co) = d[p];
            s += d[p];
        }
        db[co] += s;
    }
    Eigen::Map<const RowMat<S>> Wm(w.data(), Cout, Cin * 9);
    Eigen::Map<RowMat<S>> DW(dw, Cout, Cin * 9);
    DW += DY.transpose() * cache.cols;
    RowMat<S> dcols = DY * Wm;
    dx = Tensor<S>({Cin, H, W});
    col2im3(dcols, dx);
}

// ---------------------------------------------------------------------------
// 2x2 average pool and nearest-neighbor upsample
// ---------------------------------------------------------------------------

template <typename S>
void avgpool2_forward(const Tensor<S>& x, Tensor<S>& y) {
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    y = Tensor<S>({C, H / 2, W / 2});
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < H / 2; ++r)
            for (int col = 0; col < W / 2; ++col)
                y.at(c, r, col) = S(0.25) * (x.at(c, 2 * r, 2 * col) + x.at(c, 2 * r, 2 * col + 1) +
                                             x.at(c, 2 * r + 1, 2 * col) +
                                             x.at(c, 2 * r + 1, 2 * col + 1));
}

template <typename S>
void avgpool2_backward(const Tensor<S>& dy, Tensor<S>& dx, int H, int W) {
    int C = dy.shape[0];
    dx = Tensor<S>({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < H / 2; ++r)
            for (int col = 0; col < W / 2; ++col) {
                S g = S(0.25) * dy.at(c, r, col);
                dx.at(c, 2 * r, 2 * col) = g;
                dx.at(c, 2 * r, 2 * col + 1) = g;
                dx.at(c, 2 * r + 1, 2 * col) = g;
                dx.at(c, 2 * r + 1, 2 * col + 1) = g;
            }
}

template <typename S>
void upsample2_forward(const Tensor<S>& x, Tensor<S>& y) {
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    y = Tensor<S>({C, H * 2, W * 2});
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < 2 * H; ++r)
            for (int col = 0; col < 2 * W; ++col) y.at(c, r, col) = x.at(c, r / 2, col / 2);
}

template <typename S>
void upsample2_backward(const Tensor<S>& dy, Tensor<S>& dx) {
    int C = dy.shape[0], H = dy.shape[1] / 2, W = dy.shape[2] / 2;
    dx = Tensor<S>({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < 2 * H; ++r)
            for (int col = 0; col < 2 * W; ++col) dx.at(c, r / 2, col / 2) += dy.at(c, r, col);
}

// ---------------------------------------------------------------------------
// cross-attention block over a (C,H,W) feature map and an (N,d) embedding.
// Q = X Wq, K = E Wk, V = E Wv, per head A = softmax(Q K^T / sqrt(hd)),
// out = X + (A V stacked) Wo. A is captured per head as (P,N).
// ---------------------------------------------------------------------------

template <typename S>
struct AttnCache {
    RowMat<S> X;  // (P, C)
    RowMat<S> E;  // (N, d)
    RowMat<S> Q, K, V;
    std::vector<RowMat<S>> A;  // per head (P, N)
    RowMat<S> O;               // (P, heads*hd)
};

template <typename S>
void feat_to_mat(const Tensor<S>& f, RowMat<S>& m) {
    int C = f.shape[0], P = f.shape[1] * f.shape[2];
    m.resize(P, C);
    for (int c = 0; c < C; ++c) {
        const S* src = f.data() + size_t(c) * P;
        for (int p = 0; p < P; ++p) m(p, c) = src[p];
    }
}

template <typename S>
void mat_to_feat(const RowMat<S>& m, Tensor<S>& f, int C, int H, int W) {
    f = Tensor<S>({C, H, W});
    int P = H * W;
    for (int c = 0; c < C; ++c) {
        S* dst = f.data() + size_t(c) * P;
        for (int p = 0; p < P; ++p) dst[p] = m(p, c);
    }
}

template <typename S>
void softmax_rows(RowMat<S>& m) {
    for (int r = 0; r < m.rows(); ++r) {
        S mx = m.row(r).maxCoeff();
        S sum = 0;
        for (int c = 0; c < m.cols(); ++c) {
            m(r, c) = std::exp(m(r, c) - mx);
            sum += m(r, c);
        }
        m.row(r) /= sum;
    }
}

template <typename S>
void cross_attention_forward(const Tensor<S>& feat, const RowMat<S>& emb, const Tensor<S>& wq,
                             const Tensor<S>& wk, const Tensor<S>& wv, const Tensor<S>& wo,
                             int heads, Tensor<S>& out, AttnCache<S>& cache) {
    int C = feat.shape[0], H = feat.shape[1], W = feat.shape[2];
    int inner = wq.shape[1];
    int hd = inner / heads;
    int P = H * W;
    feat_to_mat(feat, cache.X);
    cache.E = emb;
    Eigen::Map<const RowMat<S>> Wq(wq.data(), wq.shape[0], wq.shape[1]);
    Eigen::Map<const RowMat<S>> Wk(wk.data(), wk.shape[0], wk.shape[1]);
    Eigen::Map<const RowMat<S>> Wv(wv.data(), wv.shape[0], wv.shape[1]);
    Eigen::Map<const RowMat<S>> Wo(wo.data(), wo.shape[0], wo.shape[1]);
    cache.Q = cache.X * Wq;
    cache.K = cache.E * Wk;
    cache.V = cache.E * Wv;
    cache.A.assign(heads, RowMat<S>());
    cache.O.resize(P, inner);
    S scale = S(1) / std::sqrt(S(hd));
    for (int h = 0; h < heads; ++h) {
        RowMat<S> logits =
            cache.Q.middleCols(h * hd, hd) * cache.K.middleCols(h * hd, hd).transpose() * scale;
        softmax_rows(logits);
        cache.A[h] = std::move(logits);
        cache.O.middleCols(h * hd, hd) = cache.A[h] * cache.V.middleCols(h * hd, hd);
    }
    RowMat<S> Y = cache.X + cache.O * Wo;
    mat_to_feat(Y, out, C, H, W);
}

// dA_inject: optional per-head (P,N) gradients flowing into the captured maps
// (in addition to the path through the attention output).
template <typename S>
void cross_attention_backward(const AttnCache<S>& cache, const Tensor<S>& wq, const Tensor<S>& wk,
                              const Tensor<S>& wv, const Tensor<S>& wo, int heads,
                              const Tensor<S>& dout, const std::vector<RowMat<S>>* dA_inject,
                              Tensor<S>& dfeat, RowMat<S>& demb, S* dwq, S* dwk, S* dwv, S* dwo) {
    int C = int(cache.X.cols());
    int H = dout.shape[1], W = dout.shape[2];
    int inner = wq.shape[1];
    int hd = inner / heads;
    int P = H * W;
    S scale = S(1) / std::sqrt(S(hd));

    RowMat<S> dY;
    feat_to_mat(dout, dY);
    Eigen::Map<const RowMat<S>> Wq(wq.data(), wq.shape[0], wq.shape[1]);
    Eigen::Map<const RowMat<S>> Wk(wk.data(), wk.shape[0], wk.shape[1]);
    Eigen::Map<const RowMat<S>> Wv(wv.data(), wv.shape[0], wv.shape[1]);
    Eigen::Map<const RowMat<S>> Wo(wo.data(), wo.shape[0], wo.shape[1]);

    RowMat<S> dX = dY;  // residual branch
    RowMat<S> dO = dY * Wo.transpose();
    Eigen::Map<RowMat<S>>(dwo, wo.shape[0], wo.shape[1]) += cache.O.transpose() * dY;

    RowMat<S> dQ = RowMat<S>::Zero(P, inner);
    RowMat<S> dK = RowMat<S>::Zero(cache.K.rows(), inner);
    RowMat<S> dV = RowMat<S>::Zero(cache.V.rows(), inner);
    for (int h = 0; h < heads; ++h) {
        const RowMat<S>& A = cache.A[h];
        RowMat<S> dA = dO.middleCols(h * hd, hd) * cache.V.middleCols(h * hd, hd).transpose();
        if (dA_inject && (*dA_inject)[h].size() != 0) dA += (*dA_inject)[h];
        dV.middleCols(h * hd, hd) += A.transpose() * dO.middleCols(h * hd, hd);
        // softmax rows backward
        RowMat<S> dLogits(A.rows(), A.cols());
        for (int r = 0; r < A.rows(); ++r) {
            S s = A.row(r).dot(dA.row(r));
            for (int c = 0; c < A.cols(); ++c) dLogits(r, c) = A(r, c) * (dA(r, c) - s);
        }
        dQ.middleCols(h * hd, hd) += dLogits * cache.K.middleCols(h * hd, hd) * scale;
        dK.middleCols(h * hd, hd) += dLogits.transpose() * cache.Q.middleCols(h * hd, hd) * scale;
    }
    dX += dQ * Wq.transpose();
    Eigen::Map<RowMat<S>>(dwq, wq.shape[0], wq.shape[1]) += cache.X.transpose() * dQ;
    Eigen::Map<RowMat<S>>(dwk, wk.shape[0], wk.shape[1]) += cache.E.transpose() * dK;
    Eigen::Map<RowMat<S>>(dwv, wv.shape[0], wv.shape[1]) += cache.E.transpose() * dV;
    demb = dK * Wk.transpose() + dV * Wv.transpose();
    mat_to_feat(dX, dfeat, C, H, W);
}

// ---------------------------------------------------------------------------
// bilinear resize with half-pixel centers; exact identity when sizes match
// last dimension layout: (H,W) maps
// ---------------------------------------------------------------------------

struct BilinearTap {
    int r0, r1, c0, c1;
    double w00, w01, w10, w11;
};

inline BilinearTap bilinear_tap(int r, int c, int Hs, int Ws, int Hd, int Wd) {
    double sy = (r + 0.5) * double(Hs) / Hd - 0.5;
    double sx = (c + 0.5) * double(Ws) / Wd - 0.5;
    int r0 = int(std::floor(sy)), c0 = int(std::floor(sx));
    double fy = sy - r0, fx = sx - c0;
    auto cl = [](int x, int hi) { return x < 0 ? 0 : (x >= hi ? hi - 1 : x); };
    BilinearTap t;
    t.r0 = cl(r0, Hs);
    t.r1 = cl(r0 + 1, Hs);
    t.c0 = cl(c0, Ws);
    t.c1 = cl(c0 + 1, Ws);
    t.w00 = (1 - fy) * (1 - fx);
    t.w01 = (1 - fy) * fx;
    t.w10 = fy * (1 - fx);
    t.w11 = fy * fx;
    return t;
}

template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& src, int Hd, int Wd) {
    int Hs = src.shape[0], Ws = src.shape[1];
    Tensor<S> dst({Hd, Wd});
    for (int r = 0; r < Hd; ++r)
        for (int c = 0; c < Wd; ++c) {
            BilinearTap t = bilinear_tap(r, c, Hs, Ws, Hd, Wd);
            dst.v[size_t(r) * Wd + c] =
                S(t.w00) * src.v[size_t(t.r0) * Ws + t.c0] + S(t.w01) * src.v[size_t(t.r0) * Ws + t.c1] +
                S(t.w10) * src.v[size_t(t.r1) * Ws + t.c0] + S(t.w11) * src.v[size_t(t.r1) * Ws + t.c1];
        }
    return dst;
}

template <typename S>
void bilinear_resize_adjoint(const Tensor<S>& ddst, int Hs, int Ws, Tensor<S>& dsrc) {
    int Hd = ddst.shape[0], Wd = ddst.shape[1];
    dsrc = Tensor<S>({Hs, Ws});
    for (int r = 0; r < Hd; ++r)
        for (int c = 0; c < Wd; ++c) {
            BilinearTap t = bilinear_tap(r, c, Hs, Ws, Hd, Wd);
            S g = ddst.v[size_t(r) * Wd + c];
            dsrc.v[size_t(t.r0) * Ws + t.c0] += S(t.w00) * g;
            dsrc.v[size_t(t.r0) * Ws + t.c1] += S(t.w01) * g;
            dsrc.v[size_t(t.r1) * Ws + t.c0] += S(t.w10) * g;
            dsrc.v[size_t(t.r1) * Ws + t.c1] += S(t.w11) * g;
        }
}

// sinusoidal timestep features, dim must be even
template <typename S>
void timestep_features(int t, int dim, S* out) {
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
        out[2 * i] = S(std::sin(t * freq));
        out[2 * i + 1] = S(std::cos(t * freq));
    }
}

}  // namespace salt

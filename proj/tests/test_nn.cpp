#include <catch2/catch_amalgamated.hpp>

#include <salt/nn.hpp>
#include <salt/rng.hpp>

using namespace salt;

namespace {

Tensor<double> rand_tensor(std::vector<int> shape, Rng& rng) {
    Tensor<double> t(shape);
    for (auto& e : t.v) e = rng.normal();
    return t;
}

RowMat<double> rand_mat(int r, int c, Rng& rng) {
    RowMat<double> m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("silu gradient matches finite differences") {
    Rng rng(11);
    Tensor<double> x = rand_tensor({2, 3, 3}, rng), dy = rand_tensor({2, 3, 3}, rng);
    Tensor<double> dx;
    silu_backward(x, dy, dx);
    double h = 1e-6;
    for (size_t i = 0; i < x.numel(); ++i) {
        Tensor<double> xp = x, xm = x, yp, ym;
        xp.v[i] += h;
        xm.v[i] -= h;
        silu_forward(xp, yp);
        silu_forward(xm, ym);
        double fd = (dot(yp, dy) - dot(ym, dy)) / (2 * h);
        REQUIRE(dx.v[i] == Catch::Approx(fd).margin(1e-6));
    }
}

TEST_CASE("film forward and backward") {
    Rng rng(12);
    Tensor<double> x = rand_tensor({3, 4, 4}, rng), dy = rand_tensor({3, 4, 4}, rng);
    std::vector<double> scale = {0.1, -0.3, 0.7}, shift = {0.5, 0.0, -0.2};
    Tensor<double> y;
    film_forward(x, scale.data(), shift.data(), y);
    REQUIRE(y.at(1, 2, 3) == Catch::Approx(0.7 * x.at(1, 2, 3)));

    Tensor<double> dx;
    std::vector<double> dscale(3, 0), dshift(3, 0);
    film_backward(x, scale.data(), dy, dx, dscale.data(), dshift.data());
    double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
        auto sp = scale, sm = scale;
        sp[c] += h;
        sm[c] -= h;
        Tensor<double> yp, ym;
        film_forward(x, sp.data(), shift.data(), yp);
        film_forward(x, sm.data(), shift.data(), ym);
        REQUIRE(dscale[c] == Catch::Approx((dot(yp, dy) - dot(ym, dy)) / (2 * h)).margin(1e-6));
    }
    for (size_t i = 0; i < x.numel(); ++i) {
        Tensor<double> xp = x, xm = x, yp, ym;
        xp.v[i] += h;
        xm.v[i] -= h;
        film_forward(xp, scale.data(), shift.data(), yp);
        film_forward(xm, scale.data(), shift.data(), ym);
        REQUIRE(dx.v[i] == Catch::Approx((dot(yp, dy) - dot(ym, dy)) / (2 * h)).margin(1e-6));
    }
}

TEST_CASE("linear layer gradients") {
    Rng rng(13);
    Tensor<double> w = rand_tensor({4, 6}, rng), b = rand_tensor({4}, rng);
    std::vector<double> x(6), y(4), dy(4), dx(6, 0);
    for (auto& e : x) e = rng.normal();
    for (auto& e : dy) e = rng.normal();
    Tensor<double> dw({4, 6}), db({4});
    linear_forward(w, b, x.data(), y.data());
    linear_backward(w, x.data(), dy.data(), dx.data(), dw.data(), db.data());

    double h = 1e-6;
    auto obj = [&](const Tensor<double>& wv, const Tensor<double>& bv, const std::vector<double>& xv) {
        std::vector<double> yy(4);
        linear_forward(wv, bv, xv.data(), yy.data());
        double s = 0;
        for (int i = 0; i < 4; ++i) s += yy[i] * dy[i];
        return s;
    };
    for (size_t i = 0; i < w.numel(); ++i) {
        Tensor<double> wp = w, wm = w;
        wp.v[i] += h;
        wm.v[i] -= h;
        REQUIRE(dw.v[i] == Catch::Approx((obj(wp, b, x) - obj(wm, b, x)) / (2 * h)).margin(1e-6));
    }
    for (size_t i = 0; i < 6; ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        REQUIRE(dx[i] == Catch::Approx((obj(w, b, xp) - obj(w, b, xm)) / (2 * h)).margin(1e-6));
    }
    for (size_t i = 0; i < 4; ++i) REQUIRE(db.v[i] == Catch::Approx(dy[i]));
}

TEST_CASE("conv3 matches direct convolution and its gradients") {
    Rng rng(14);
    Tensor<double> x = rand_tensor({2, 5, 4}, rng);
    Tensor<double> w = rand_tensor({3, 2, 3, 3}, rng), b = rand_tensor({3}, rng);
    Tensor<double> y;
    ConvCache<double> cc;
    conv3_forward(x, w, b, y, cc);

    // direct reference
    for (int co = 0; co < 3; ++co)
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 4; ++c) {
                double acc = b.v[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int kr = 0; kr < 3; ++kr)
                        for (int kc = 0; kc < 3; ++kc) {
                            int sr = r + kr - 1, sc = c + kc - 1;
                            if (sr < 0 || sr >= 5 || sc < 0 || sc >= 4) continue;
                            acc += x.at(ci, sr, sc) * w.v[((size_t(co) * 2 + ci) * 3 + kr) * 3 + kc];
                        }
                REQUIRE(y.at(co, r, c) == Catch::Approx(acc).margin(1e-12));
            }

    Tensor<double> dy = rand_tensor({3, 5, 4}, rng), dx, dw({3, 2, 3, 3}), db({3});
    conv3_backward(w, cc, dy, dx, dw.data(), db.data());
    double h = 1e-6;
    auto obj = [&](const Tensor<double>& xv, const Tensor<double>& wv) {
        Tensor<double> yy;
        ConvCache<double> c2;
        conv3_forward(xv, wv, b, yy, c2);
        return dot(yy, dy);
    };
    for (size_t i = 0; i < x.numel(); i += 3) {
        Tensor<double> xp = x, xm = x;
        xp.v[i] += h;
        xm.v[i] -= h;
        REQUIRE(dx.v[i] == Catch::Approx((obj(xp, w) - obj(xm, w)) / (2 * h)).margin(1e-6));
    }
    for (size_t i = 0; i < w.numel(); i += 5) {
        Tensor<double> wp = w, wm = w;
        wp.v[i] += h;
        wm.v[i] -= h;
        REQUIRE(dw.v[i] == Catch::Approx((obj(x, wp) - obj(x, wm)) / (2 * h)).margin(1e-6));
    }
}

TEST_CASE("pool and upsample adjoint identities") {
    Rng rng(15);
    Tensor<double> x = rand_tensor({2, 6, 6}, rng), y, dy = rand_tensor({2, 3, 3}, rng), dx;
    avgpool2_forward(x, y);
    avgpool2_backward(dy, dx, 6, 6);
    REQUIRE(dot(y, dy) == Catch::Approx(dot(x, dx)).margin(1e-12));

    Tensor<double> u, du = rand_tensor({2, 12, 12}, rng), dxu;
    upsample2_forward(x, u);
    upsample2_backward(du, dxu);
    REQUIRE(dot(u, du) == Catch::Approx(dot(x, dxu)).margin(1e-12));
}

TEST_CASE("cross attention: rows sum to one, residual at zero weights") {
    Rng rng(16);
    Tensor<double> feat = rand_tensor({4, 3, 3}, rng);
    RowMat<double> emb = rand_mat(5, 6, rng);
    Tensor<double> wq = rand_tensor({4, 8}, rng), wk = rand_tensor({6, 8}, rng);
    Tensor<double> wv = rand_tensor({6, 8}, rng), wo({8, 4});
    std::fill(wo.v.begin(), wo.v.end(), 0.0);
    Tensor<double> out;
    AttnCache<double> cache;
    cross_attention_forward(feat, emb, wq, wk, wv, wo, 2, out, cache);
    for (int h = 0; h < 2; ++h)
        for (int r = 0; r < cache.A[h].rows(); ++r)
            REQUIRE(cache.A[h].row(r).sum() == Catch::Approx(1.0).margin(1e-12));
    for (size_t i = 0; i < out.numel(); ++i) REQUIRE(out.v[i] == Catch::Approx(feat.v[i]));
}

TEST_CASE("cross attention gradients match finite differences") {
    Rng rng(17);
    int heads = 2;
    Tensor<double> feat = rand_tensor({4, 3, 3}, rng);
    RowMat<double> emb = rand_mat(5, 6, rng);
    Tensor<double> wq = rand_tensor({4, 8}, rng), wk = rand_tensor({6, 8}, rng);
    Tensor<double> wv = rand_tensor({6, 8}, rng), wo = rand_tensor({8, 4}, rng);
    Tensor<double> dout = rand_tensor({4, 3, 3}, rng);
    std::vector<RowMat<double>> dA(heads);
    for (auto& m : dA) m = rand_mat(9, 5, rng) * 0.3;

    Tensor<double> out;
    AttnCache<double> cache;
    cross_attention_forward(feat, emb, wq, wk, wv, wo, heads, out, cache);
    Tensor<double> dfeat, dwq({4, 8}), dwk({6, 8}), dwv({6, 8}), dwo({8, 4});
    RowMat<double> demb;
    cross_attention_backward(cache, wq, wk, wv, wo, heads, dout, &dA, dfeat, demb, dwq.data(),
                             dwk.data(), dwv.data(), dwo.data());

    auto obj = [&](const Tensor<double>& f, const RowMat<double>& e, const Tensor<double>& q,
                   const Tensor<double>& k, const Tensor<double>& v, const Tensor<double>& o) {
        Tensor<double> oo;
        AttnCache<double> c2;
        cross_attention_forward(f, e, q, k, v, o, heads, oo, c2);
        double s = dot(oo, dout);
        for (int h = 0; h < heads; ++h) s += (c2.A[h].array() * dA[h].array()).sum();
        return s;
    };
    double h = 1e-6;
    for (size_t i = 0; i < feat.numel(); i += 2) {
        Tensor<double> fp = feat, fm = feat;
        fp.v[i] += h;
        fm.v[i] -= h;
        REQUIRE(dfeat.v[i] == Catch::Approx((obj(fp, emb, wq, wk, wv, wo) -
                                             obj(fm, emb, wq, wk, wv, wo)) / (2 * h)).margin(1e-5));
    }
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; c += 2) {
            RowMat<double> ep = emb, em = emb;
            ep(r, c) += h;
            em(r, c) -= h;
            REQUIRE(demb(r, c) == Catch::Approx((obj(feat, ep, wq, wk, wv, wo) -
                                                 obj(feat, em, wq, wk, wv, wo)) / (2 * h)).margin(1e-5));
        }
    auto check_w = [&](Tensor<double>& w, const Tensor<double>& dw, int which) {
        for (size_t i = 0; i < w.numel(); i += 7) {
            double keep = w.v[i];
            w.v[i] = keep + h;
            double fp = obj(feat, emb, wq, wk, wv, wo);
            w.v[i] = keep - h;
            double fm = obj(feat, emb, wq, wk, wv, wo);
            w.v[i] = keep;
            INFO("weight " << which << " index " << i);
            REQUIRE(dw.v[i] == Catch::Approx((fp - fm) / (2 * h)).margin(1e-5));
        }
    };
    check_w(wq, dwq, 0);
    check_w(wk, dwk, 1);
    check_w(wv, dwv, 2);
    check_w(wo, dwo, 3);
}

TEST_CASE("bilinear resize identity and adjoint") {
    Rng rng(18);
    Tensor<double> src = rand_tensor({5, 7}, rng);
    Tensor<double> same = bilinear_resize(src, 5, 7);
    for (size_t i = 0; i < src.numel(); ++i) REQUIRE(same.v[i] == Catch::Approx(src.v[i]).margin(1e-12));

    Tensor<double> big = bilinear_resize(src, 9, 11);
    Tensor<double> dbig = rand_tensor({9, 11}, rng), dsrc;
    bilinear_resize_adjoint(dbig, 5, 7, dsrc);
    REQUIRE(dot(big, dbig) == Catch::Approx(dot(src, dsrc)).margin(1e-10));

    // constant maps stay constant under resizing
    Tensor<double> flat({4, 4});
    std::fill(flat.v.begin(), flat.v.end(), 0.3);
    Tensor<double> r = bilinear_resize(flat, 16, 16);
    for (double v : r.v) REQUIRE(v == Catch::Approx(0.3).margin(1e-12));
}

TEST_CASE("timestep features are bounded and distinct") {
    std::vector<double> a(32), b(32);
    timestep_features(10, 32, a.data());
    timestep_features(11, 32, b.data());
    double diff = 0;
    for (int i = 0; i < 32; ++i) {
        REQUIRE(std::abs(a[i]) <= 1.0);
        diff += std::abs(a[i] - b[i]);
    }
    REQUIRE(diff > 1e-3);
}

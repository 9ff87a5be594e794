#pragma once

#include <algorithm>
#include <functional>
#include <optional>

#include "layout.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "text.hpp"

namespace salt {

// Common attention resolution the two block maps are resized to.
constexpr int kAttnRes = 16;

struct DenoiserConfig {
    int H = 32, W = 32, Cimg = 3;
    int c1 = 16, c2 = 32, c3 = 32;  // full / half / quarter resolution channels
    int heads = 2, head_dim = 16;
    int d_embed = 32;
    int pe_dim = 32, temb_dim = 64;
    int vocab = int(vocabulary().size());

    int inner() const { return heads * head_dim; }
    void validate() const {
        if (c2 != c3) throw config_error("denoiser requires c2 == c3 (additive skip)");
        if (H % 4 || W % 4) throw config_error("H and W must be divisible by 4");
        if (pe_dim % 2) throw config_error("pe_dim must be even");
    }
};

template <typename S>
struct DenoiserParams {
    Tensor<S> embed;            // (vocab, d_embed)
    Tensor<S> temb_w, temb_b;   // (temb_dim, pe_dim)
    Tensor<S> film1_w, film1_b, film2_w, film2_b, film3_w, film3_b;
    Tensor<S> film4_w, film4_b, film5_w, film5_b;
    Tensor<S> enc1_w, enc1_b, enc2_w, enc2_b, mid_w, mid_b;
    Tensor<S> up16_w, up16_b, up32_w, up32_b, out_w, out_b;
    Tensor<S> amid_wq, amid_wk, amid_wv, amid_wo;
    Tensor<S> aup_wq, aup_wk, aup_wv, aup_wo;
};

template <typename P, typename F>
void visit_params(P& p, F&& f) {
    f("embed.table", p.embed);
    f("temb.w", p.temb_w);
    f("temb.b", p.temb_b);
    f("film1.w", p.film1_w);
    f("film1.b", p.film1_b);
    f("film2.w", p.film2_w);
    f("film2.b", p.film2_b);
    f("film3.w", p.film3_w);
    f("film3.b", p.film3_b);
    f("film4.w", p.film4_w);
    f("film4.b", p.film4_b);
    f("film5.w", p.film5_w);
    f("film5.b", p.film5_b);
    f("enc1.w", p.enc1_w);
    f("enc1.b", p.enc1_b);
    f("enc2.w", p.enc2_w);
    f("enc2.b", p.enc2_b);
    f("mid.w", p.mid_w);
    f("mid.b", p.mid_b);
    f("up16.w", p.up16_w);
    f("up16.b", p.up16_b);
    f("up32.w", p.up32_w);
    f("up32.b", p.up32_b);
    f("out.w", p.out_w);
    f("out.b", p.out_b);
    f("attn_mid.wq", p.amid_wq);
    f("attn_mid.wk", p.amid_wk);
    f("attn_mid.wv", p.amid_wv);
    f("attn_mid.wo", p.amid_wo);
    f("attn_up.wq", p.aup_wq);
    f("attn_up.wk", p.aup_wk);
    f("attn_up.wv", p.aup_wv);
    f("attn_up.wo", p.aup_wo);
}

// Captured cross-attention maps for one forward pass. Two blocks: mid
// (quarter resolution) and first up (half resolution).
template <typename S>
struct AttentionCapture {
    struct Block {
        std::vector<RowMat<S>> head_maps;  // per head (P, N)
        int res = 0;                       // spatial side length (maps are res*res pixels)
    };
    Block mid, up;
};

template <typename S>
struct DenoiserTape {
    Grid<S> z;
    int t = 0;
    RowMat<S> cond;
    std::vector<S> pe, temb_pre, temb;
    std::vector<S> sb1, sb2, sb3, sb4, sb5;  // FiLM scale/shift per level
    Tensor<S> h1, h1f, h1s, d1;
    Tensor<S> h2, h2f, h2s, d2;
    Tensor<S> h3, h3f, h3s, m2;
    Tensor<S> u1, c1sum, h4, h4f, h4s, h4b;
    Tensor<S> u2, h5, h5f, h5s, c2sum;
    ConvCache<S> cc1, cc2, cc3, cc4, cc5, cc6;
    AttnCache<S> amid, aup;
};

template <typename S>
class Denoiser {
  public:
    DenoiserConfig cfg;
    DenoiserParams<S> params;

    explicit Denoiser(DenoiserConfig c = {}) : cfg(c) {
        cfg.validate();
        allocate(params);
    }

    void allocate(DenoiserParams<S>& p) const {
        int inner = cfg.inner();
        p.embed = Tensor<S>({cfg.vocab, cfg.d_embed});
        p.temb_w = Tensor<S>({cfg.temb_dim, cfg.pe_dim});
        p.temb_b = Tensor<S>({cfg.temb_dim});
        auto film = [&](Tensor<S>& w, Tensor<S>& b, int c) {
            w = Tensor<S>({2 * c, cfg.temb_dim});
            b = Tensor<S>({2 * c});
        };
        film(p.film1_w, p.film1_b, cfg.c1);
        film(p.film2_w, p.film2_b, cfg.c2);
        film(p.film3_w, p.film3_b, cfg.c3);
        film(p.film4_w, p.film4_b, cfg.c2);
        film(p.film5_w, p.film5_b, cfg.c1);
        auto conv = [&](Tensor<S>& w, Tensor<S>& b, int co, int ci) {
            w = Tensor<S>({co, ci, 3, 3});
            b = Tensor<S>({co});
        };
        conv(p.enc1_w, p.enc1_b, cfg.c1, cfg.Cimg);
        conv(p.enc2_w, p.enc2_b, cfg.c2, cfg.c1);
        conv(p.mid_w, p.mid_b, cfg.c3, cfg.c2);
        conv(p.up16_w, p.up16_b, cfg.c2, cfg.c3);
        conv(p.up32_w, p.up32_b, cfg.c1, cfg.c2);
        conv(p.out_w, p.out_b, cfg.Cimg, cfg.c1);
        auto attn = [&](Tensor<S>& wq, Tensor<S>& wk, Tensor<S>& wv, Tensor<S>& wo, int c) {
            wq = Tensor<S>({c, inner});
            wk = Tensor<S>({cfg.d_embed, inner});
            wv = Tensor<S>({cfg.d_embed, inner});
            wo = Tensor<S>({inner, c});
        };
        attn(p.amid_wq, p.amid_wk, p.amid_wv, p.amid_wo, cfg.c3);
        attn(p.aup_wq, p.aup_wk, p.aup_wv, p.aup_wo, cfg.c2);
    }

    DenoiserParams<S> zero_grads() const {
        DenoiserParams<S> g;
        allocate(g);
        return g;
    }

    void init_weights(Rng& rng) {
        auto he = [&](Tensor<S>& w, int fan_in, double gain) {
            for (auto& x : w.v) x = S(rng.normal() * gain * std::sqrt(1.0 / fan_in));
        };
        for (auto& x : params.embed.v) x = S(rng.normal() * 0.5);
        he(params.temb_w, cfg.pe_dim, 1.0);
        params.temb_b.fill(0);
        // FiLM starts as identity; weights learn from the temb gradient
        for (Tensor<S>* t : {&params.film1_w, &params.film1_b, &params.film2_w, &params.film2_b,
                             &params.film3_w, &params.film3_b, &params.film4_w, &params.film4_b,
                             &params.film5_w, &params.film5_b})
            t->fill(0);
        he(params.enc1_w, cfg.Cimg * 9, std::sqrt(2.0));
        he(params.enc2_w, cfg.c1 * 9, std::sqrt(2.0));
        he(params.mid_w, cfg.c2 * 9, std::sqrt(2.0));
        he(params.up16_w, cfg.c3 * 9, std::sqrt(2.0));
        he(params.up32_w, cfg.c2 * 9, std::sqrt(2.0));
        he(params.out_w, cfg.c1 * 9, 0.1);
        for (Tensor<S>* t : {&params.enc1_b, &params.enc2_b, &params.mid_b, &params.up16_b,
                             &params.up32_b, &params.out_b})
            t->fill(0);
        he(params.amid_wq, cfg.c3, 1.0);
        he(params.amid_wk, cfg.d_embed, 1.0);
        he(params.amid_wv, cfg.d_embed, 1.0);
        he(params.amid_wo, cfg.inner(), 0.5);
        he(params.aup_wq, cfg.c2, 1.0);
        he(params.aup_wk, cfg.d_embed, 1.0);
        he(params.aup_wv, cfg.d_embed, 1.0);
        he(params.aup_wo, cfg.inner(), 0.5);
    }

    RowMat<S> embed(const TokenSequence& toks) const {
        RowMat<S> e(toks.size(), cfg.d_embed);
        for (int i = 0; i < toks.size(); ++i) {
            int id = toks.ids[i];
            if (id < 0 || id >= cfg.vocab) throw contract_error("token id out of range");
            for (int j = 0; j < cfg.d_embed; ++j)
                e(i, j) = params.embed.v[size_t(id) * cfg.d_embed + j];
        }
        return e;
    }

    // eps prediction; deterministic. capture/tape optional.
    Grid<S> predict_noise(const Grid<S>& z, int t, const RowMat<S>& cond,
                          AttentionCapture<S>* capture = nullptr,
                          DenoiserTape<S>* tape_out = nullptr) const {
        if (z.shape != std::vector<int>{cfg.Cimg, cfg.H, cfg.W})
            throw contract_error("predict_noise: latent shape mismatch");
        if (!all_finite(z)) throw contract_error("predict_noise: non-finite latent");
        if (t < 1) throw contract_error("predict_noise: t must be >= 1");

        DenoiserTape<S> local;
        DenoiserTape<S>& tp = tape_out ? *tape_out : local;
        tp.z = z;
        tp.t = t;
        tp.cond = cond;

        // timestep features -> shared MLP
        tp.pe.resize(cfg.pe_dim);
        timestep_features(t, cfg.pe_dim, tp.pe.data());
        tp.temb_pre.resize(cfg.temb_dim);
        linear_forward(params.temb_w, params.temb_b, tp.pe.data(), tp.temb_pre.data());
        tp.temb.resize(cfg.temb_dim);
        for (int i = 0; i < cfg.temb_dim; ++i)
            tp.temb[i] = tp.temb_pre[i] * sigmoid(tp.temb_pre[i]);

        auto film_vec = [&](const Tensor<S>& w, const Tensor<S>& b, std::vector<S>& sb) {
            sb.resize(w.shape[0]);
            linear_forward(w, b, tp.temb.data(), sb.data());
        };
        film_vec(params.film1_w, params.film1_b, tp.sb1);
        film_vec(params.film2_w, params.film2_b, tp.sb2);
        film_vec(params.film3_w, params.film3_b, tp.sb3);
        film_vec(params.film4_w, params.film4_b, tp.sb4);
        film_vec(params.film5_w, params.film5_b, tp.sb5);

        // encoder
        conv3_forward(z, params.enc1_w, params.enc1_b, tp.h1, tp.cc1);
        film_forward(tp.h1, tp.sb1.data(), tp.sb1.data() + cfg.c1, tp.h1f);
        silu_forward(tp.h1f, tp.h1s);
        avgpool2_forward(tp.h1s, tp.d1);

        conv3_forward(tp.d1, params.enc2_w, params.enc2_b, tp.h2, tp.cc2);
        film_forward(tp.h2, tp.sb2.data(), tp.sb2.data() + cfg.c2, tp.h2f);
        silu_forward(tp.h2f, tp.h2s);
        avgpool2_forward(tp.h2s, tp.d2);

        // mid block + cross-attention
        conv3_forward(tp.d2, params.mid_w, params.mid_b, tp.h3, tp.cc3);
        film_forward(tp.h3, tp.sb3.data(), tp.sb3.data() + cfg.c3, tp.h3f);
        silu_forward(tp.h3f, tp.h3s);
        cross_attention_forward(tp.h3s, cond, params.amid_wq, params.amid_wk, params.amid_wv,
                                params.amid_wo, cfg.heads, tp.m2, tp.amid);

        // up path
        upsample2_forward(tp.m2, tp.u1);
        tp.c1sum = tp.u1;
        for (size_t i = 0; i < tp.c1sum.numel(); ++i) tp.c1sum.v[i] += tp.h2s.v[i];
        conv3_forward(tp.c1sum, params.up16_w, params.up16_b, tp.h4, tp.cc4);
        film_forward(tp.h4, tp.sb4.data(), tp.sb4.data() + cfg.c2, tp.h4f);
        silu_forward(tp.h4f, tp.h4s);
        cross_attention_forward(tp.h4s, cond, params.aup_wq, params.aup_wk, params.aup_wv,
                                params.aup_wo, cfg.heads, tp.h4b, tp.aup);

        upsample2_forward(tp.h4b, tp.u2);
        conv3_forward(tp.u2, params.up32_w, params.up32_b, tp.h5, tp.cc5);
        film_forward(tp.h5, tp.sb5.data(), tp.sb5.data() + cfg.c1, tp.h5f);
        silu_forward(tp.h5f, tp.h5s);
        tp.c2sum = tp.h5s;
        for (size_t i = 0; i < tp.c2sum.numel(); ++i) tp.c2sum.v[i] += tp.h1s.v[i];

        Grid<S> eps_hat;
        conv3_forward(tp.c2sum, params.out_w, params.out_b, eps_hat, tp.cc6);

        if (capture) {
            capture->mid.head_maps = tp.amid.A;
            capture->mid.res = cfg.H / 4;
            capture->up.head_maps = tp.aup.A;
            capture->up.res = cfg.H / 2;
        }
        return eps_hat;
    }

    Grid<S> predict_noise(const Grid<S>& z, int t, const TokenSequence& toks,
                          AttentionCapture<S>* capture = nullptr) const {
        return predict_noise(z, t, embed(toks), capture);
    }

    // Reverse pass. d_eps seeds the output adjoint; dA_mid/dA_up inject
    // gradients directly into the captured attention maps. Returns dz.
    // grads / dcond are accumulated when non-null.
    Grid<S> backward(const DenoiserTape<S>& tp, const Grid<S>& d_eps,
                     const std::vector<RowMat<S>>* dA_mid = nullptr,
                     const std::vector<RowMat<S>>* dA_up = nullptr,
                     DenoiserParams<S>* grads = nullptr, RowMat<S>* dcond = nullptr) const {
        DenoiserParams<S> scratch;
        if (!grads) {
            scratch = zero_grads();
            grads = &scratch;
        }
        DenoiserParams<S>& g = *grads;
        std::vector<S> dtemb(cfg.temb_dim, S(0));

        auto film_back = [&](const Tensor<S>& x, const std::vector<S>& sb, const Tensor<S>& dy,
                             Tensor<S>& dx, const Tensor<S>& fw, Tensor<S>& gfw, Tensor<S>& gfb,
                             int c) {
            std::vector<S> dsb(2 * c, S(0));
            film_backward(x, sb.data(), dy, dx, dsb.data(), dsb.data() + c);
            linear_backward(fw, tp.temb.data(), dsb.data(), dtemb.data(), gfw.data(), gfb.data());
        };

        // out conv
        Tensor<S> dc2sum;
        conv3_backward(params.out_w, tp.cc6, d_eps, dc2sum, g.out_w.data(), g.out_b.data());

        // skip: c2sum = h5s + h1s
        Tensor<S> dh5s = dc2sum;
        Tensor<S> dh1s_skip = dc2sum;

        Tensor<S> dh5f, dh5, du2;
        silu_backward(tp.h5f, dh5s, dh5f);
        film_back(tp.h5, tp.sb5, dh5f, dh5, params.film5_w, g.film5_w, g.film5_b, cfg.c1);
        conv3_backward(params.up32_w, tp.cc5, dh5, du2, g.up32_w.data(), g.up32_b.data());

        Tensor<S> dh4b;
        upsample2_backward(du2, dh4b);

        Tensor<S> dh4s;
        RowMat<S> demb_up;
        cross_attention_backward(tp.aup, params.aup_wq, params.aup_wk, params.aup_wv, params.aup_wo,
                                 cfg.heads, dh4b, dA_up, dh4s, demb_up, g.aup_wq.data(),
                                 g.aup_wk.data(), g.aup_wv.data(), g.aup_wo.data());

        Tensor<S> dh4f, dh4, dc1sum;
        silu_backward(tp.h4f, dh4s, dh4f);
        film_back(tp.h4, tp.sb4, dh4f, dh4, params.film4_w, g.film4_w, g.film4_b, cfg.c2);
        conv3_backward(params.up16_w, tp.cc4, dh4, dc1sum, g.up16_w.data(), g.up16_b.data());

        // skip: c1sum = u1 + h2s
        Tensor<S> dm2;
        upsample2_backward(dc1sum, dm2);
        Tensor<S> dh2s_skip = dc1sum;

        Tensor<S> dh3s;
        RowMat<S> demb_mid;
        cross_attention_backward(tp.amid, params.amid_wq, params.amid_wk, params.amid_wv,
                                 params.amid_wo, cfg.heads, dm2, dA_mid, dh3s, demb_mid,
                                 g.amid_wq.data(), g.amid_wk.data(), g.amid_wv.data(),
                                 g.amid_wo.data());

        Tensor<S> dh3f, dh3, dd2;
        silu_backward(tp.h3f, dh3s, dh3f);
        film_back(tp.h3, tp.sb3, dh3f, dh3, params.film3_w, g.film3_w, g.film3_b, cfg.c3);
        conv3_backward(params.mid_w, tp.cc3, dh3, dd2, g.mid_w.data(), g.mid_b.data());

        Tensor<S> dh2s;
        avgpool2_backward(dd2, dh2s, cfg.H / 2, cfg.W / 2);
        for (size_t i = 0; i < dh2s.numel(); ++i) dh2s.v[i] += dh2s_skip.v[i];

        Tensor<S> dh2f, dh2, dd1;
        silu_backward(tp.h2f, dh2s, dh2f);
        film_back(tp.h2, tp.sb2, dh2f, dh2, params.film2_w, g.film2_w, g.film2_b, cfg.c2);
        conv3_backward(params.enc2_w, tp.cc2, dh2, dd1, g.enc2_w.data(), g.enc2_b.data());

        Tensor<S> dh1s;
        avgpool2_backward(dd1, dh1s, cfg.H, cfg.W);
        for (size_t i = 0; i < dh1s.numel(); ++i) dh1s.v[i] += dh1s_skip.v[i];

        Tensor<S> dh1f, dh1, dz;
        silu_backward(tp.h1f, dh1s, dh1f);
        film_back(tp.h1, tp.sb1, dh1f, dh1, params.film1_w, g.film1_w, g.film1_b, cfg.c1);
        conv3_backward(params.enc1_w, tp.cc1, dh1, dz, g.enc1_w.data(), g.enc1_b.data());

        // temb MLP
        std::vector<S> dtemb_pre(cfg.temb_dim);
        for (int i = 0; i < cfg.temb_dim; ++i) {
            S s = sigmoid(tp.temb_pre[i]);
            dtemb_pre[i] = dtemb[i] * s * (S(1) + tp.temb_pre[i] * (S(1) - s));
        }
        linear_backward(params.temb_w, tp.pe.data(), dtemb_pre.data(), (S*)nullptr,
                        g.temb_w.data(), g.temb_b.data());

        if (dcond) *dcond = demb_mid + demb_up;
        return dz;
    }
};

// ---------------------------------------------------------------------------
// attention_map: head-mean per block, bilinear-resize both blocks to the
// common resolution, block-mean, then mean over the token set.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> attention_map(const AttentionCapture<S>& cap, const std::vector<int>& token_set,
                        int res = kAttnRes) {
    if (token_set.empty()) throw contract_error("attention_map: empty token set");
    auto block_map = [&](const typename AttentionCapture<S>::Block& b) {
        int P = int(b.head_maps[0].rows());
        int N = int(b.head_maps[0].cols());
        Tensor<S> m({b.res, b.res});
        for (int tok : token_set) {
            if (tok < 0 || tok >= N) throw contract_error("attention_map: token index out of range");
            for (const auto& hm : b.head_maps)
                for (int p = 0; p < P; ++p) m.v[p] += hm(p, tok);
        }
        S denom = S(b.head_maps.size()) * S(token_set.size());
        for (auto& x : m.v) x /= denom;
        return bilinear_resize(m, res, res);
    };
    Tensor<S> a = block_map(cap.mid);
    Tensor<S> b = block_map(cap.up);
    for (size_t i = 0; i < a.numel(); ++i) a.v[i] = S(0.5) * (a.v[i] + b.v[i]);
    return a;
}

// Adjoint of attention_map: scatter a (res,res) map gradient back into
// per-head, per-block dA accumulators.
template <typename S>
void attention_map_adjoint(const AttentionCapture<S>& cap, const std::vector<int>& token_set,
                           const Tensor<S>& dmap, std::vector<RowMat<S>>& dA_mid,
                           std::vector<RowMat<S>>& dA_up) {
    auto block_adj = [&](const typename AttentionCapture<S>::Block& b,
                         std::vector<RowMat<S>>& dA) {
        int P = int(b.head_maps[0].rows());
        int N = int(b.head_maps[0].cols());
        Tensor<S> half = dmap;
        for (auto& x : half.v) x *= S(0.5);
        Tensor<S> dsmall;
        bilinear_resize_adjoint(half, b.res, b.res, dsmall);
        S denom = S(b.head_maps.size()) * S(token_set.size());
        if (dA.empty()) dA.assign(b.head_maps.size(), RowMat<S>::Zero(P, N));
        for (size_t h = 0; h < b.head_maps.size(); ++h)
            for (int tok : token_set)
                for (int p = 0; p < P; ++p) dA[h](p, tok) += dsmall.v[p] / denom;
    };
    block_adj(cap.mid, dA_mid);
    block_adj(cap.up, dA_up);
}

// loss = layout_loss over attention_map(capture) per entry; grad is the
// exact derivative with respect to the input latent.
template <typename S>
std::pair<S, Grid<S>> loss_grad_latent(const Denoiser<S>& dn, const Grid<S>& z, int t,
                                       const RowMat<S>& cond, const LayoutSpec& layout,
                                       double lambda) {
    layout.validate();
    DenoiserTape<S> tape;
    AttentionCapture<S> cap;
    dn.predict_noise(z, t, cond, &cap, &tape);

    std::vector<Tensor<S>> maps;
    maps.reserve(layout.entries.size());
    for (const auto& e : layout.entries) maps.push_back(attention_map(cap, e.tokens));
    S loss = layout_loss(maps, layout, lambda);
    std::vector<Tensor<S>> dmaps = layout_loss_grad(maps, layout, lambda);

    std::vector<RowMat<S>> dA_mid, dA_up;
    for (size_t i = 0; i < layout.entries.size(); ++i)
        attention_map_adjoint(cap, layout.entries[i].tokens, dmaps[i], dA_mid, dA_up);

    Grid<S> d_eps({dn.cfg.Cimg, dn.cfg.H, dn.cfg.W});  // loss does not touch eps_hat
    Grid<S> dz = dn.backward(tape, d_eps, &dA_mid, &dA_up, nullptr, nullptr);
    if (!all_finite(dz)) throw guidance_error("loss_grad_latent: non-finite gradient");
    return {loss, dz};
}

}  // namespace salt

#pragma once

#include <string>
#include <vector>

#include "composer.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "sampler.hpp"

namespace salt {

struct GuidanceConfig {
    double lambda = 0.05;
    double eta = 0.5;
    int inner_iters = 3;
    double guided_fraction = 0.2;  // rho: fraction of sampling steps with the hook
    int max_backtrack = 4;

    void validate() const {
        if (lambda < 0 || eta <= 0 || inner_iters < 0 || guided_fraction < 0 ||
            guided_fraction > 1)
            throw config_error("invalid guidance config");
    }
};

// Forward-only layout loss at (z, t).
template <typename S>
S eval_layout_loss(const Denoiser<S>& dn, const Grid<S>& z, int t, const RowMat<S>& cond,
                   const LayoutSpec& layout, double lambda) {
    AttentionCapture<S> cap;
    dn.predict_noise(z, t, cond, &cap);
    std::vector<Tensor<S>> maps;
    for (const auto& e : layout.entries) maps.push_back(attention_map(cap, e.tokens));
    return layout_loss(maps, layout, lambda);
}

// Latent update: inner_iters descent steps on the layout loss with
// per-iteration halving line search. Never increases the loss.
template <typename S>
Grid<S> guided_update(const Denoiser<S>& dn, const Grid<S>& z_t, int t, const RowMat<S>& cond,
                      const LayoutSpec& layout, const GuidanceConfig& gcfg) {
    gcfg.validate();
    Grid<S> z = z_t;
    for (int it = 0; it < gcfg.inner_iters; ++it) {
        auto [loss, grad] = loss_grad_latent(dn, z, t, cond, layout, gcfg.lambda);
        double gn2 = 0;
        for (auto g : grad.v) gn2 += double(g) * double(g);
        if (gn2 == 0) break;
        double eta = gcfg.eta;
        bool accepted = false;
        for (int bt = 0; bt <= gcfg.max_backtrack; ++bt) {
            Grid<S> cand(z.shape);
            for (size_t i = 0; i < z.numel(); ++i) cand.v[i] = z.v[i] - S(eta) * grad.v[i];
            S cand_loss = eval_layout_loss(dn, cand, t, cond, layout, gcfg.lambda);
            if (cand_loss < loss) {
                z = std::move(cand);
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted) break;  // keep z, loss cannot increase
    }
    return z;
}

// ---------------------------------------------------------------------------
// Guided-Only baseline: permute latent pixels so high-attention content
// lands inside the target boxes. Pure core operates on per-entry maps at
// the latent resolution; the wrapper captures attention at t = T.
// ---------------------------------------------------------------------------

template <typename S>
Grid<S> rearrange_by_maps(const Grid<S>& z, const std::vector<Tensor<S>>& latent_maps,
                          const LayoutSpec& layout) {
    if (latent_maps.size() != layout.entries.size())
        throw contract_error("rearrange_by_maps: one map per entry required");
    int C = z.shape[0], H = z.shape[1], W = z.shape[2];
    Grid<S> out = z;
    for (size_t e = 0; e < layout.entries.size(); ++e) {
        const Tensor<S>& m = latent_maps[e];
        PixelRect rect = box_to_pixels(layout.entries[e].box, H, W);
        if (rect.height() < 1 || rect.width() < 1)
            throw contract_error("rearrange: box covers no latent pixels");
        std::vector<std::pair<double, int>> inside, outside;  // (map value, pixel index)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                int p = r * W + c;
                double v = double(m.v[size_t(p)]);
                (pixel_in_box(r, c, rect) ? inside : outside).push_back({v, p});
            }
        std::sort(outside.begin(), outside.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });  // high first
        std::sort(inside.begin(), inside.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });  // low first
        size_t n = std::min(inside.size(), outside.size());
        for (size_t k = 0; k < n && outside[k].first > inside[k].first; ++k) {
            int po = outside[k].second, pi = inside[k].second;
            for (int c = 0; c < C; ++c)
                std::swap(out.v[size_t(c) * H * W + po], out.v[size_t(c) * H * W + pi]);
        }
    }
    return out;
}

template <typename S>
Grid<S> guided_only_rearrange(const Denoiser<S>& dn, const Grid<S>& z_T, const RowMat<S>& cond,
                              const LayoutSpec& layout, const NoiseSchedule& sched) {
    layout.validate();
    AttentionCapture<S> cap;
    dn.predict_noise(z_T, sched.T, cond, &cap);
    std::vector<Tensor<S>> latent_maps;
    for (const auto& e : layout.entries) {
        Tensor<S> m = attention_map(cap, e.tokens);
        latent_maps.push_back(bilinear_resize(m, dn.cfg.H, dn.cfg.W));
    }
    return rearrange_by_maps(z_T, latent_maps, layout);
}

// ---------------------------------------------------------------------------
// six-method pipeline dispatcher
// ---------------------------------------------------------------------------

enum class Method { SD, AttentionOnly, GuidedOnly, AttentionWithGuided, SALT, SALT_AG, SDEditAG };

inline const std::vector<std::pair<Method, std::string>>& method_names() {
    static const std::vector<std::pair<Method, std::string>> names = {
        {Method::SD, "sd"},
        {Method::AttentionOnly, "attention-only"},
        {Method::GuidedOnly, "guided-only"},
        {Method::AttentionWithGuided, "attention-with-guided"},
        {Method::SALT, "salt"},
        {Method::SALT_AG, "salt-ag"},
        {Method::SDEditAG, "sdedit-ag"},
    };
    return names;
}

inline std::string method_name(Method m) {
    for (const auto& [mm, n] : method_names())
        if (mm == m) return n;
    throw contract_error("unknown method");
}

inline Method parse_method(const std::string& s) {
    for (const auto& [m, n] : method_names())
        if (n == s) return m;
    throw config_error("unknown method: " + s);
}

struct PipelineConfig {
    SamplerConfig sampler;
    GuidanceConfig guidance;
    int inv_steps = 50;
    double sde_strength = 0.8;      // fraction of T for the SDEdit init
    int attention_only_iters = 10;  // inner iterations for the attention-only baselines
};

struct PipelineAssets {
    ObjectAsset object;
    std::string background = "plain-green";
    bool available = false;
};

template <typename S>
struct GenerationResult {
    Grid<S> image;
    std::string method;
    std::vector<std::vector<double>> attention_mass_series;  // [entry][captured step]
    std::vector<Detection> detections;
    double iou_mean = 0;
    double fidelity = 0;
    double drift = 0;
    Trajectory<S> trajectory;
};

// Shape-class names appearing in the caption, in token order.
inline std::vector<std::string> prompted_classes(const TokenSequence& toks) {
    std::vector<std::string> out;
    for (int id : toks.ids) {
        const std::string& w = vocabulary()[id];
        for (const auto& c : shape_classes())
            if (c.name == w) out.push_back(w);
    }
    return out;
}

template <typename S>
GenerationResult<S> run_pipeline(Method method, const std::string& caption,
                                 const LayoutSpec& layout, const PipelineAssets& assets,
                                 const Denoiser<S>& dn, const NoiseSchedule& sched,
                                 const PipelineConfig& pcfg, Rng& rng) {
    TokenSequence toks = tokenize(caption);
    layout.validate(toks.size());
    RowMat<S> cond = dn.embed(toks);
    std::vector<int> shape = {dn.cfg.Cimg, dn.cfg.H, dn.cfg.W};

    bool needs_assets =
        method == Method::SALT || method == Method::SALT_AG || method == Method::SDEditAG;
    if (needs_assets && !assets.available)
        throw config_error("method \"" + method_name(method) +
                           "\" requires composer assets (reference object + background)");

    GuidanceConfig gcfg = pcfg.guidance;
    bool hooked = false;
    switch (method) {
        case Method::AttentionOnly:
        case Method::AttentionWithGuided:
            gcfg.inner_iters = pcfg.attention_only_iters;
            hooked = true;
            break;
        case Method::SALT_AG:
        case Method::SDEditAG:
            hooked = true;
            break;
        default:
            break;
    }

    Grid<S> i_star;
    if (needs_assets) {
        std::vector<BBox> boxes;
        for (const auto& e : layout.entries) boxes.push_back(e.box);
        i_star = compose_reference(builtin_background<S>(assets.background, dn.cfg.H, dn.cfg.W),
                                   assets.object, boxes);
    }

    Grid<S> z_init;
    int start_index = -1;
    switch (method) {
        case Method::SD:
        case Method::AttentionOnly:
            z_init = randn<S>(shape, rng);
            break;
        case Method::GuidedOnly:
        case Method::AttentionWithGuided:
            z_init = guided_only_rearrange(dn, randn<S>(shape, rng), cond, layout, sched);
            break;
        case Method::SALT:
        case Method::SALT_AG:
            z_init = salt_init(dn, i_star, sched, pcfg.inv_steps);
            break;
        case Method::SDEditAG: {
            std::vector<int> tau = timestep_subsequence(sched.T, pcfg.sampler.steps);
            start_index =
                std::max(1, int(std::ceil(pcfg.sde_strength * pcfg.sampler.steps)));
            z_init = sde_noise(i_star, tau[start_index], sched, rng);
            break;
        }
    }

    GuidanceHook<S> hook;
    int guided_steps = 0;
    if (hooked && gcfg.inner_iters > 0) {
        int total = start_index < 0 ? pcfg.sampler.steps : start_index;
        guided_steps = int(std::ceil(gcfg.guided_fraction * total));
        hook = [&dn, &cond, &layout, gcfg](const Grid<S>& z, int t, int) {
            return guided_update(dn, z, t, cond, layout, gcfg);
        };
    }

    Trajectory<S> traj = ddim_sample(dn, z_init, toks, sched, pcfg.sampler, hook, guided_steps,
                                     /*record_capture=*/true, start_index);

    GenerationResult<S> res;
    res.method = method_name(method);
    res.image = final_latent(traj);
    for (auto& x : res.image.v) x = std::clamp(x, S(0), S(1));
    res.detections = detect(res.image, shape_classes());

    // per-entry IoU against the target boxes; undetected class scores 0
    double iou_sum = 0;
    for (const auto& e : layout.entries) {
        std::string cls;
        for (int tok : e.tokens)
            for (const auto& c : shape_classes())
                if (c.name == vocabulary()[toks.ids[tok]]) cls = c.name;
        double best = 0;
        for (const auto& d : res.detections)
            if (d.class_name == cls) best = std::max(best, iou(d.box, e.box));
        iou_sum += best;
    }
    res.iou_mean = iou_sum / double(layout.entries.size());
    std::vector<std::string> pcls = prompted_classes(toks);
    res.fidelity = pcls.empty() ? 0.0 : fidelity(res.image, pcls, shape_classes());

    res.attention_mass_series.resize(layout.entries.size());
    for (const auto& pt : traj.points)
        if (pt.capture)
            for (size_t e = 0; e < layout.entries.size(); ++e) {
                Tensor<S> m = attention_map(*pt.capture, layout.entries[e].tokens);
                res.attention_mass_series[e].push_back(attention_mass(m, layout.entries[e].box));
            }
    if (!layout.entries.empty()) res.drift = attention_drift(traj, layout.entries[0].tokens);
    res.trajectory = std::move(traj);
    return res;
}

}  // namespace salt

#pragma once

#include <array>
#include <string>
#include <vector>

#include "core.hpp"
#include "layout.hpp"
#include "metrics_types.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace salt {

// The detector identifies classes by color signature, so each shape class is
// bound to a fixed color.
inline const std::vector<ClassDef>& shape_classes() {
    static const std::vector<ClassDef> classes = {
        {"circle", "red", {0.90, 0.10, 0.10}},
        {"square", "blue", {0.10, 0.20, 0.90}},
        {"triangle", "yellow", {0.90, 0.90, 0.10}},
        {"cross", "magenta", {0.90, 0.10, 0.90}},
    };
    return classes;
}

inline const ClassDef& class_by_name(const std::string& name) {
    for (const auto& c : shape_classes())
        if (c.name == name) return c;
    throw config_error("unknown shape class: " + name);
}

struct BackgroundDef {
    std::string asset_name;   // composer asset id
    std::string caption_tail; // words after "on"
};

inline const std::vector<BackgroundDef>& scene_backgrounds() {
    static const std::vector<BackgroundDef> bgs = {
        {"plain-green", "green plain"},
        {"plain-gray", "gray plain"},
        {"farm", "farm"},
    };
    return bgs;
}

struct Placement {
    int class_idx;
    BBox box;
};

struct SceneSpec {
    std::string background;  // asset name
    std::vector<Placement> placements;
    std::string caption;
    std::string split;
    uint64_t id = 0;

    void validate() const {
        if (placements.empty() || placements.size() > 2)
            throw contract_error("scene must have 1-2 placements");
        for (const auto& p : placements) p.box.validate();
    }
};

struct GtBox {
    std::string class_name;
    BBox box;
};

namespace detail {
inline bool boxes_disjoint(const BBox& a, const BBox& b) {
    return a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0;
}
}  // namespace detail

// Deterministic rasterizer. Shapes fill their box; gt boxes are the tight
// bounds of the drawn mask.
template <typename S = float>
std::pair<Grid<S>, std::vector<GtBox>> render_scene(const SceneSpec& spec, int H = 32, int W = 32) {
    spec.validate();
    for (size_t i = 0; i < spec.placements.size(); ++i)
        for (size_t j = i + 1; j < spec.placements.size(); ++j)
            if (!detail::boxes_disjoint(spec.placements[i].box, spec.placements[j].box))
                throw contract_error("scene placements overlap");

    Grid<S> img({3, H, W});
    // background
    if (spec.background == "plain-green" || spec.background == "plain-gray" ||
        spec.background == "plain-white") {
        double col[3];
        if (spec.background == "plain-green") {
            col[0] = 0.10; col[1] = 0.45; col[2] = 0.15;
        } else if (spec.background == "plain-gray") {
            col[0] = col[1] = col[2] = 0.50;
        } else {
            col[0] = col[1] = col[2] = 1.0;
        }
        for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) img.at(ch, r, c) = S(col[ch]);
    } else if (spec.background == "farm") {
        const double a[3] = {0.08, 0.42, 0.10}, b[3] = {0.16, 0.58, 0.20};
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const double* col = ((r / 4 + c / 4) % 2 == 0) ? a : b;
                for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = S(col[ch]);
            }
    } else {
        throw contract_error("unknown scene background: " + spec.background);
    }

    std::vector<GtBox> gts;
    for (const auto& pl : spec.placements) {
        const ClassDef& cd = shape_classes()[pl.class_idx];
        PixelRect rect = box_to_pixels(pl.box, H, W);
        int h = rect.height(), w = rect.width();
        if (h < 2 || w < 2) throw contract_error("degenerate placement box");
        double rc = rect.r0 + (h - 1) / 2.0, cc = rect.c0 + (w - 1) / 2.0;
        int rmin = H, rmax = -1, cmin = W, cmax = -1;
        for (int r = rect.r0; r < rect.r1; ++r)
            for (int c = rect.c0; c < rect.c1; ++c) {
                bool in = false;
                if (cd.name == "square") {
                    in = true;
                } else if (cd.name == "circle") {
                    double dr = (r - rc) / (h / 2.0), dc = (c - cc) / (w / 2.0);
                    in = dr * dr + dc * dc <= 1.0;
                } else if (cd.name == "triangle") {
                    double frac = (r - rect.r0 + 0.5) / h;  // 0 at apex row
                    in = std::abs(c - cc) <= frac * (w / 2.0);
                } else if (cd.name == "cross") {
                    bool vbar = c - rect.c0 >= w / 3 && c - rect.c0 < w - w / 3;
                    bool hbar = r - rect.r0 >= h / 3 && r - rect.r0 < h - h / 3;
                    in = vbar || hbar;
                }
                if (in) {
                    for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = S(cd.rgb[ch]);
                    rmin = std::min(rmin, r);
                    rmax = std::max(rmax, r);
                    cmin = std::min(cmin, c);
                    cmax = std::max(cmax, c);
                }
            }
        if (rmax < 0) throw contract_error("placement rendered no pixels");
        gts.push_back({cd.name, BBox{double(cmin) / W, double(rmin) / H, double(cmax + 1) / W,
                                     double(rmax + 1) / H}});
    }
    return {std::move(img), std::move(gts)};
}

inline std::string scene_caption(const SceneSpec& spec) {
    const BackgroundDef* bg = nullptr;
    for (const auto& b : scene_backgrounds())
        if (b.asset_name == spec.background) bg = &b;
    std::string tail = bg ? bg->caption_tail : "white plain";
    std::string s;
    for (size_t i = 0; i < spec.placements.size(); ++i) {
        const ClassDef& cd = shape_classes()[spec.placements[i].class_idx];
        if (i) s += " and ";
        s += "a " + cd.color_name + " " + cd.name;
    }
    return s + " on " + tail;
}

// Token index (position in the caption) of each placement's shape word.
inline std::vector<int> shape_token_indices(const SceneSpec& spec) {
    // "a <color> <shape> [and a <color> <shape>] on ..." -> 2, 6
    std::vector<int> idx;
    for (size_t i = 0; i < spec.placements.size(); ++i) idx.push_back(int(2 + 4 * i));
    return idx;
}

inline LayoutSpec scene_layout(const SceneSpec& spec) {
    LayoutSpec ls;
    std::vector<int> tok = shape_token_indices(spec);
    for (size_t i = 0; i < spec.placements.size(); ++i)
        ls.entries.push_back({spec.placements[i].box, {tok[i]}});
    return ls;
}

struct CorpusConfig {
    int train_count = 8000;
    int eval_single_count = 400;
    int eval_multiple_count = 200;
    int H = 32, W = 32;
    int min_side = 6, max_side = 16;  // object extent in pixels
};

struct Corpus {
    std::vector<SceneSpec> train, eval_single, eval_multiple;
};

namespace detail {

inline BBox sample_box(Rng& rng, const CorpusConfig& cfg) {
    int w = cfg.min_side + int(rng.uniform_int(uint64_t(cfg.max_side - cfg.min_side + 1)));
    int h = cfg.min_side + int(rng.uniform_int(uint64_t(cfg.max_side - cfg.min_side + 1)));
    int r0 = 1 + int(rng.uniform_int(uint64_t(cfg.H - h - 1)));
    int c0 = 1 + int(rng.uniform_int(uint64_t(cfg.W - w - 1)));
    return BBox{double(c0) / cfg.W, double(r0) / cfg.H, double(c0 + w) / cfg.W,
                double(r0 + h) / cfg.H};
}

inline SceneSpec sample_scene(Rng& rng, const CorpusConfig& cfg, int n_objects, uint64_t id,
                              const std::string& split) {
    SceneSpec s;
    s.id = id;
    s.split = split;
    s.background = scene_backgrounds()[rng.uniform_int(scene_backgrounds().size())].asset_name;
    int n_classes = int(shape_classes().size());
    int c0 = int(rng.uniform_int(uint64_t(n_classes)));
    s.placements.push_back({c0, sample_box(rng, cfg)});
    if (n_objects == 2) {
        int c1 = int(rng.uniform_int(uint64_t(n_classes - 1)));
        if (c1 >= c0) ++c1;  // distinct class so caption words stay unambiguous
        for (int attempt = 0;; ++attempt) {
            BBox b = sample_box(rng, cfg);
            if (boxes_disjoint(s.placements[0].box, b)) {
                s.placements.push_back({c1, b});
                break;
            }
            if (attempt > 200) {  // resample the first box too
                s.placements[0].box = sample_box(rng, cfg);
                attempt = 0;
            }
        }
    }
    s.caption = scene_caption(s);
    return s;
}

}  // namespace detail

// Deterministic under seed; splits use disjoint stream domains.
inline Corpus make_corpus(const CorpusConfig& cfg, uint64_t seed) {
    if (cfg.train_count < 1 || cfg.eval_single_count < 1 || cfg.eval_multiple_count < 1)
        throw config_error("corpus counts must be >= 1");
    Corpus corpus;
    auto gen = [&](std::vector<SceneSpec>& out, int count, int n_objects, uint64_t split_tag,
                   const std::string& split) {
        for (int i = 0; i < count; ++i) {
            Rng rng(mix_seed(seed, split_tag, uint64_t(i)));
            out.push_back(detail::sample_scene(rng, cfg, n_objects, uint64_t(i), split));
        }
    };
    gen(corpus.train, cfg.train_count, 1, 1, "train");
    gen(corpus.eval_single, cfg.eval_single_count, 1, 2, "single");
    gen(corpus.eval_multiple, cfg.eval_multiple_count, 2, 3, "multiple");
    return corpus;
}

}  // namespace salt

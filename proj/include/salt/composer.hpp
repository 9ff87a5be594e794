#pragma once

#include <array>
#include <string>

#include "io.hpp"
#include "layout.hpp"
#include "sampler.hpp"

namespace salt {

struct ObjectAsset {
    Tensor<uint8_t> mask;  // (h, w), nonzero = object
    std::array<double, 3> color{};
    std::string class_name;

    void validate() const {
        bool any = false;
        for (auto m : mask.v) any |= (m != 0);
        if (!any) throw contract_error("object asset with empty mask");
        for (double c : color)
            if (c < 0 || c > 1) throw contract_error("object color out of [0,1]");
    }
};

template <typename S = float>
struct BackgroundAsset {
    Grid<S> image;  // (3, H, W), values in [0,1]
    std::string name;
};

// ---------------------------------------------------------------------------
// procedural built-ins: the three backgrounds and three reference objects
// (plus plain-white as a config option)
// ---------------------------------------------------------------------------

template <typename S = float>
BackgroundAsset<S> builtin_background(const std::string& name, int H = 32, int W = 32) {
    BackgroundAsset<S> bg;
    bg.name = name;
    bg.image = Grid<S>({3, H, W});
    auto fill = [&](double r, double g, double b) {
        for (int row = 0; row < H; ++row)
            for (int c = 0; c < W; ++c) {
                bg.image.at(0, row, c) = S(r);
                bg.image.at(1, row, c) = S(g);
                bg.image.at(2, row, c) = S(b);
            }
    };
    if (name == "plain-green") {
        fill(0.10, 0.45, 0.15);
    } else if (name == "plain-gray") {
        fill(0.50, 0.50, 0.50);
    } else if (name == "plain-white") {
        fill(1.0, 1.0, 1.0);
    } else if (name == "farm") {
        // deterministic 4px checker of two greens
        const double a[3] = {0.08, 0.42, 0.10}, b[3] = {0.16, 0.58, 0.20};
        for (int row = 0; row < H; ++row)
            for (int c = 0; c < W; ++c) {
                const double* col = ((row / 4 + c / 4) % 2 == 0) ? a : b;
                for (int ch = 0; ch < 3; ++ch) bg.image.at(ch, row, c) = S(col[ch]);
            }
    } else {
        throw config_error("unknown background: " + name);
    }
    return bg;
}

inline ObjectAsset builtin_object(const std::string& name) {
    ObjectAsset o;
    o.class_name = name;
    const int n = 16;
    o.mask = Tensor<uint8_t>({n, n});
    auto set_disc = [&](double cr, double cc, double rad) {
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                double dr = r - cr, dc = c - cc;
                if (dr * dr + dc * dc <= rad * rad) o.mask.v[size_t(r) * n + c] = 1;
            }
    };
    if (name == "cat") {
        o.color = {0.85, 0.45, 0.10};
        set_disc(9.5, 7.5, 5.8);
        // ears: two triangles above the head
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < n; ++c) {
                if (std::abs(c - 3.5) <= (r + 1) * 0.8) o.mask.v[size_t(r) * n + c] = 1;
                if (std::abs(c - 11.5) <= (r + 1) * 0.8) o.mask.v[size_t(r) * n + c] = 1;
            }
    } else if (name == "dog") {
        o.color = {0.55, 0.35, 0.20};
        set_disc(8.0, 7.5, 5.5);
        // floppy ears at the sides
        for (int r = 4; r < 13; ++r) {
            for (int c = 0; c < 3; ++c) o.mask.v[size_t(r) * n + c] = 1;
            for (int c = 13; c < 16; ++c) o.mask.v[size_t(r) * n + c] = 1;
        }
    } else if (name == "bread") {
        o.color = {0.80, 0.65, 0.35};
        // rounded loaf: rectangle with a domed top
        for (int r = 5; r < 14; ++r)
            for (int c = 1; c < 15; ++c) o.mask.v[size_t(r) * n + c] = 1;
        set_disc(6.0, 7.5, 6.0);
    } else {
        throw config_error("unknown object: " + name);
    }
    o.validate();
    return o;
}

// PPM + JSON sidecar loader: image pixels with brightness > 0.5 on any
// channel count as mask; sidecar gives {"class": ..., "color": [r,g,b]}.
inline ObjectAsset load_object_asset(const std::string& ppm_path, const std::string& json_path) {
    Grid<float> img = load_ppm<float>(ppm_path);
    json side = load_json_file(json_path);
    ObjectAsset o;
    o.class_name = side.at("class").get<std::string>();
    auto col = side.at("color").get<std::vector<double>>();
    if (col.size() != 3) throw config_error("object sidecar color must have 3 entries");
    o.color = {col[0], col[1], col[2]};
    int H = img.shape[1], W = img.shape[2];
    o.mask = Tensor<uint8_t>({H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            o.mask.v[size_t(r) * W + c] =
                (img.at(0, r, c) > 0.5f || img.at(1, r, c) > 0.5f || img.at(2, r, c) > 0.5f) ? 1
                                                                                            : 0;
    o.validate();
    return o;
}

// ---------------------------------------------------------------------------
// reference-image compositing: paint the (nearest-neighbor rescaled) object
// mask into each box, painter's order, background untouched elsewhere.
// ---------------------------------------------------------------------------

template <typename S>
Grid<S> compose_reference(const BackgroundAsset<S>& background, const ObjectAsset& object,
                          const std::vector<BBox>& boxes) {
    if (boxes.empty()) throw contract_error("compose_reference: empty box list");
    object.validate();
    Grid<S> img = background.image;
    int H = img.shape[1], W = img.shape[2];
    int mh = object.mask.shape[0], mw = object.mask.shape[1];
    for (const BBox& b : boxes) {
        b.validate();
        PixelRect rect = box_to_pixels(b, H, W);
        if (rect.height() < 2 || rect.width() < 2)
            throw contract_error("compose_reference: degenerate box (extent < 2x2 px)");
        for (int r = rect.r0; r < rect.r1; ++r)
            for (int c = rect.c0; c < rect.c1; ++c) {
                int sr = std::min(mh - 1, int((r - rect.r0 + 0.5) * mh / rect.height()));
                int sc = std::min(mw - 1, int((c - rect.c0 + 0.5) * mw / rect.width()));
                if (object.mask.v[size_t(sr) * mw + sc])
                    for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = S(object.color[ch]);
            }
    }
    return img;
}

// Spatial-aware initialization: DDIM inversion of the composited reference.
template <typename S>
Grid<S> salt_init(const Denoiser<S>& dn, const Grid<S>& i_star, const NoiseSchedule& sched,
                  int inv_steps) {
    if (inv_steps < 1) throw contract_error("salt_init: inv_steps must be >= 1");
    return ddim_invert(dn, i_star, sched, inv_steps).first;
}

}  // namespace salt

#pragma once

#include <cmath>
#include <vector>

#include "core.hpp"

namespace salt {

// Normalized box, x across width, y down height.
struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const {
        return x0 >= 0 && y0 >= 0 && x1 <= 1 && y1 <= 1 && x0 < x1 && y0 < y1;
    }
    void validate() const {
        if (!valid()) throw contract_error("invalid bounding box");
    }
    double area() const { return (x1 - x0) * (y1 - y0); }
};

// Shared pixel mapping: round half-up of H*coord. A pixel row r is inside
// the box iff round(H*y0) <= r < round(H*y1).
inline int px_round(double v) { return int(std::floor(v + 0.5)); }

struct PixelRect {
    int r0, r1, c0, c1;  // half-open
    int height() const { return r1 - r0; }
    int width() const { return c1 - c0; }
};

inline PixelRect box_to_pixels(const BBox& b, int H, int W) {
    return PixelRect{px_round(H * b.y0), px_round(H * b.y1), px_round(W * b.x0),
                     px_round(W * b.x1)};
}

inline bool pixel_in_box(int r, int c, const PixelRect& p) {
    return r >= p.r0 && r < p.r1 && c >= p.c0 && c < p.c1;
}

// Each box is bound to a subset of caption token indices.
struct LayoutSpec {
    struct Entry {
        BBox box;
        std::vector<int> tokens;
    };
    std::vector<Entry> entries;

    void validate(int caption_len = -1) const {
        if (entries.empty()) throw contract_error("layout must have at least one entry");
        if (caption_len >= 0 && int(entries.size()) > caption_len)
            throw contract_error("more layout entries than caption tokens");
        for (const auto& e : entries) {
            e.box.validate();
            if (e.tokens.empty()) throw contract_error("layout entry with empty token set");
        }
    }
};

// L = sum_i (1 - S_in/S_tot)^2 - lambda * S_in over per-entry maps (H_a,W_a).
template <typename S>
S layout_loss(const std::vector<Tensor<S>>& maps, const LayoutSpec& layout, double lambda) {
    if (maps.size() != layout.entries.size())
        throw contract_error("layout_loss: one map per layout entry required");
    S total = 0;
    for (size_t i = 0; i < maps.size(); ++i) {
        const Tensor<S>& m = maps[i];
        int H = m.shape[0], W = m.shape[1];
        PixelRect rect = box_to_pixels(layout.entries[i].box, H, W);
        S s_in = 0, s_tot = 0;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                S v = m.v[size_t(r) * W + c];
                s_tot += v;
                if (pixel_in_box(r, c, rect)) s_in += v;
            }
        if (s_tot <= S(0)) throw guidance_error("layout_loss: all-zero attention map");
        S ratio = s_in / s_tot;
        total += (S(1) - ratio) * (S(1) - ratio) - S(lambda) * s_in;
    }
    return total;
}

// dL/dmap for each entry map. Same traversal as layout_loss.
template <typename S>
std::vector<Tensor<S>> layout_loss_grad(const std::vector<Tensor<S>>& maps,
                                        const LayoutSpec& layout, double lambda) {
    std::vector<Tensor<S>> grads;
    grads.reserve(maps.size());
    for (size_t i = 0; i < maps.size(); ++i) {
        const Tensor<S>& m = maps[i];
        int H = m.shape[0], W = m.shape[1];
        PixelRect rect = box_to_pixels(layout.entries[i].box, H, W);
        S s_in = 0, s_tot = 0;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                S v = m.v[size_t(r) * W + c];
                s_tot += v;
                if (pixel_in_box(r, c, rect)) s_in += v;
            }
        if (s_tot <= S(0)) throw guidance_error("layout_loss: all-zero attention map");
        S ratio = s_in / s_tot;
        // d/dp (1-R)^2 = -2(1-R) * ([p in box]*s_tot - s_in)/s_tot^2
        S k = S(-2) * (S(1) - ratio) / (s_tot * s_tot);
        Tensor<S> g({H, W});
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                bool in = pixel_in_box(r, c, rect);
                S d = k * ((in ? s_tot : S(0)) - s_in);
                if (in) d -= S(lambda);
                g.v[size_t(r) * W + c] = d;
            }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace salt

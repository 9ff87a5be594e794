#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace salt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Tensor container: magic "SALT", u32 version, u64 json length, JSON index
// [{name, dtype:"f32"|"f64", shape, offset}], then contiguous little-endian
// blobs. Offsets are relative to the end of the index. Optional "meta" object
// rides along in the header.
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    std::string dtype;  // "f32" or "f64"
    std::vector<int> shape;
    std::vector<char> bytes;

    static NamedTensor from_f32(const std::string& name, const Tensor<float>& t) {
        NamedTensor n{name, "f32", t.shape, {}};
        n.bytes.resize(t.numel() * 4);
        std::memcpy(n.bytes.data(), t.data(), n.bytes.size());
        return n;
    }
    static NamedTensor from_f64(const std::string& name, const Tensor<double>& t) {
        NamedTensor n{name, "f64", t.shape, {}};
        n.bytes.resize(t.numel() * 8);
        std::memcpy(n.bytes.data(), t.data(), n.bytes.size());
        return n;
    }
    static NamedTensor from_f64_vec(const std::string& name, const std::vector<double>& v) {
        Tensor<double> t({int(v.size())});
        t.v = v;
        return from_f64(name, t);
    }

    Tensor<float> as_f32() const {
        if (dtype != "f32") throw io_error("tensor " + name + " is not f32");
        Tensor<float> t(shape);
        std::memcpy(t.data(), bytes.data(), bytes.size());
        return t;
    }
    Tensor<double> as_f64() const {
        if (dtype != "f64") throw io_error("tensor " + name + " is not f64");
        Tensor<double> t(shape);
        std::memcpy(t.data(), bytes.data(), bytes.size());
        return t;
    }
};

struct TensorContainer {
    std::vector<NamedTensor> tensors;
    json meta = json::object();

    const NamedTensor& get(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw io_error("tensor not found in container: " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return true;
        return false;
    }
};

inline void save_container(const std::string& path, const TensorContainer& c) {
    json index = json::array();
    uint64_t off = 0;
    for (const auto& t : c.tensors) {
        index.push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"offset", off}});
        off += t.bytes.size();
    }
    json header = {{"index", index}, {"meta", c.meta}};
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write("SALT", 4);
    uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), hs.size());
    for (const auto& t : c.tensors) f.write(t.bytes.data(), t.bytes.size());
    if (!f) throw io_error("write failed: " + path);
}

inline TensorContainer load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SALT", 4) != 0) throw io_error("bad magic in " + path);
    uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw io_error("unsupported container version in " + path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    json header = json::parse(hs);

    TensorContainer c;
    c.meta = header.value("meta", json::object());
    for (const auto& e : header.at("index")) {
        NamedTensor t;
        t.name = e.at("name").get<std::string>();
        t.dtype = e.at("dtype").get<std::string>();
        t.shape = e.at("shape").get<std::vector<int>>();
        size_t elem = t.dtype == "f64" ? 8 : 4;
        t.bytes.resize(Tensor<float>::numel_of(t.shape) * elem);
        c.tensors.push_back(std::move(t));
    }
    // blobs follow the header in index order
    for (auto& t : c.tensors) f.read(t.bytes.data(), t.bytes.size());
    if (!f) throw io_error("truncated container: " + path);
    return c;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6), 8-bit, round(255*clamp(v,0,1)). Grids are (3,H,W).
// ---------------------------------------------------------------------------

template <typename S>
void save_ppm(const std::string& path, const Grid<S>& img) {
    if (img.shape.size() != 3 || img.shape[0] != 3)
        throw contract_error("save_ppm expects a (3,H,W) grid");
    int H = img.shape[1], W = img.shape[2];
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(size_t(W) * 3);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double x = double(img.at(ch, r, c));
                x = x < 0 ? 0 : (x > 1 ? 1 : x);
                row[size_t(c) * 3 + ch] = (unsigned char)std::lround(255.0 * x);
            }
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw io_error("write failed: " + path);
}

template <typename S = float>
Grid<S> load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string magic;
    int W = 0, H = 0, maxv = 0;
    f >> magic >> W >> H >> maxv;
    if (magic != "P6" || maxv != 255 || W <= 0 || H <= 0)
        throw io_error("unsupported PPM: " + path);
    f.get();  // single whitespace after header
    Grid<S> img({3, H, W});
    std::vector<unsigned char> row(size_t(W) * 3);
    for (int r = 0; r < H; ++r) {
        f.read(reinterpret_cast<char*>(row.data()), row.size());
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = S(row[size_t(c) * 3 + ch] / 255.0);
    }
    if (!f) throw io_error("truncated PPM: " + path);
    return img;
}

inline json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file: " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw config_error("JSON parse error in " + path + ": " + e.what());
    }
}

inline void save_json_file(const std::string& path, const json& j, int indent = 2) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << j.dump(indent) << "\n";
}

}  // namespace salt

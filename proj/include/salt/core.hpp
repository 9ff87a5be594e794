#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace salt {

// Error taxonomy. contract_error = caller broke a precondition,
// config_error = bad user input (CLI exit code 2), the rest exit code 3.
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct tokenize_error : config_error {
    using config_error::config_error;
};
struct training_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct guidance_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Grids are (C, H, W).
template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), S(0)) {}
    Tensor(std::vector<int> s, S fill) : shape(std::move(s)), v(numel_of(shape), fill) {}

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d < 0) throw contract_error("negative tensor dimension");
            n *= size_t(d);
        }
        return n;
    }

    size_t numel() const { return v.size(); }
    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& operator[](size_t i) { return v[i]; }
    const S& operator[](size_t i) const { return v[i]; }

    // (C,H,W) accessors for grids
    S& at(int c, int r, int col) { return v[(size_t(c) * shape[1] + r) * shape[2] + col]; }
    const S& at(int c, int r, int col) const {
        return v[(size_t(c) * shape[1] + r) * shape[2] + col];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(S x) { std::fill(v.begin(), v.end(), x); }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out(shape);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = T(v[i]);
        return out;
    }
};

template <typename S>
using Grid = Tensor<S>;

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
    if (!a.same_shape(b)) throw contract_error(std::string("shape mismatch in ") + what);
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
    for (S x : t.v)
        if (!std::isfinite(double(x))) return false;
    return true;
}

template <typename S>
S dot(const Tensor<S>& a, const Tensor<S>& b) {
    S s = 0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.v[i] * b.v[i];
    return s;
}

template <typename S>
double l2_norm(const Tensor<S>& a) {
    double s = 0;
    for (S x : a.v) s += double(x) * double(x);
    return std::sqrt(s);
}

template <typename S>
double rel_l2_error(const Tensor<S>& a, const Tensor<S>& ref) {
    double num = 0, den = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        double d = double(a.v[i]) - double(ref.v[i]);
        num += d * d;
        den += double(ref.v[i]) * double(ref.v[i]);
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace salt

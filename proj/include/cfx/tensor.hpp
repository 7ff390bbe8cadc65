// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfx {

/// Dense row-major n-d array. The last axis is contiguous.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dim");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // (c,h,w) accessor for 3-d tensors
    T& at3(int c, int h, int w) {
        return data[static_cast<size_t>((static_cast<int64_t>(c) * shape[1] + h) * shape[2] + w)];
    }
    T at3(int c, int h, int w) const {
        return data[static_cast<size_t>((static_cast<int64_t>(c) * shape[1] + h) * shape[2] + w)];
    }
    // (r,c) accessor for 2-d tensors
    T& at2(int r, int c) { return data[static_cast<size_t>(static_cast<int64_t>(r) * shape[1] + c)]; }
    T at2(int r, int c) const { return data[static_cast<size_t>(static_cast<int64_t>(r) * shape[1] + c)]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    Tensor<T>& operator+=(const Tensor<T>& o) {
        assert(numel() == o.numel());
        for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor<T>& operator-=(const Tensor<T>& o) {
        assert(numel() == o.numel());
        for (size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
        return *this;
    }
    Tensor<T>& operator*=(T s) {
        for (auto& v : data) v *= s;
        return *this;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) { a += b; return a; }
template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) { a -= b; return a; }
template <typename T>
Tensor<T> operator*(T s, Tensor<T> a) { a *= s; return a; }

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    assert(a.numel() == b.numel());
    T m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
    for (const T& v : a.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
void clamp_inplace(Tensor<T>& a, T lo, T hi) {
    for (auto& v : a.data) v = std::clamp(v, lo, hi);
}

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> randn(const std::vector<int>& shape, Rng& rng, T stddev = T(1)) {
    Tensor<T> t(shape);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : t.data) v = static_cast<T>(nd(rng) * static_cast<double>(stddev));
    return t;
}

/// FNV-1a over raw bytes; used for content hashes in manifests and tests.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T>
uint64_t tensor_hash(const Tensor<T>& t) {
    uint64_t h = fnv1a(t.shape.data(), t.shape.size() * sizeof(int));
    return fnv1a(t.data.data(), t.data.size() * sizeof(T), h);
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace cfx

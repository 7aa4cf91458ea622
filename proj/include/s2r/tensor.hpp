#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "s2r/common.hpp"
#include "s2r/rng.hpp"

namespace s2r {

// Dense row-major fp64 tensor.  Model math runs in double throughout so the
// finite-difference gradient checks have headroom; media stays float on disk.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::int64_t> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static Tensor randn(std::vector<std::int64_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = stddev * rng.normal();
        return t;
    }

    std::string shape_str() const {
        std::string out = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(shape[i]);
        }
        return out + "]";
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace s2r

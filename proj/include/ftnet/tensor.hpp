#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ftnet/common.hpp"

namespace ftnet {

// Dense n-dimensional array of f32, row-major. The universal value type.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel(shape), 0.0f);
    }
    Tensor(std::vector<int> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape))
            throw ShapeError("tensor data length does not match shape");
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) {
            if (e <= 0) throw ShapeError("non-positive extent in shape");
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::size_t size() const { return data.size(); }
    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    float l1_norm() const {
        float s = 0.0f;
        for (float v : data) s += std::fabs(v);
        return s;
    }
    float l2_norm() const {
        float s = 0.0f;
        for (float v : data) s += v * v;
        return std::sqrt(s);
    }
    float max_abs() const {
        float m = 0.0f;
        for (float v : data) m = std::max(m, std::fabs(v));
        return m;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace ftnet

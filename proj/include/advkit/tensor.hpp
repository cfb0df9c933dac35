#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "advkit/errors.hpp"

namespace advkit {

inline std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense n-d array, row-major. First axis is the batch axis by convention.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> values;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), values(numel(shape), T(0)) {}

    Tensor(std::vector<std::size_t> s, std::vector<T> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (numel(shape) != values.size())
            throw ConfigError("tensor shape " + shape_str(shape) + " does not match " +
                              std::to_string(values.size()) + " values");
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    T* data() { return values.data(); }
    const T* data() const { return values.data(); }

    // Elements per sample (product of all axes but the first).
    std::size_t row_size() const {
        if (shape.empty()) return 0;
        return shape[0] ? size() / shape[0] : numel({shape.begin() + 1, shape.end()});
    }

    T* row(std::size_t m) { return values.data() + m * row_size(); }
    const T* row(std::size_t m) const { return values.data() + m * row_size(); }

    static Tensor zeros_like(const Tensor& other) {
        Tensor t;
        t.shape = other.shape;
        t.values.assign(other.values.size(), T(0));
        return t;
    }

    bool all_finite() const {
        for (const T& v : values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

template <typename T>
int sign_of(T v) {
    return (v > T(0)) - (v < T(0));
}

template <typename T>
T clamp01(T v) {
    return v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
}

template <typename T>
T clamp_to(T v, T lo, T hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

template <typename T>
T linf_distance(const Tensor<T>& a, const Tensor<T>& b, std::size_t sample) {
    const T* pa = a.row(sample);
    const T* pb = b.row(sample);
    T d = T(0);
    for (std::size_t i = 0; i < a.row_size(); ++i)
        d = std::max(d, std::abs(pa[i] - pb[i]));
    return d;
}

template <typename T>
T l2_distance(const Tensor<T>& a, const Tensor<T>& b, std::size_t sample) {
    const T* pa = a.row(sample);
    const T* pb = b.row(sample);
    double s = 0;
    for (std::size_t i = 0; i < a.row_size(); ++i) {
        double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        s += d * d;
    }
    return static_cast<T>(std::sqrt(s));
}

} // namespace advkit

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace dash {

/// Dense row-major tensor with an optional gradient buffer of the same shape.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty when no gradient is tracked

    Tensor() = default;
    explicit Tensor(std::vector<int> dims, double fill = 0.0)
        : shape(std::move(dims)), values(element_count(shape), fill) {}

    static std::size_t element_count(const std::vector<int>& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                               [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    }

    std::size_t size() const { return values.size(); }
    bool has_grad() const { return !grad.empty(); }

    void enable_grad() { grad.assign(values.size(), 0.0); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

}  // namespace dash

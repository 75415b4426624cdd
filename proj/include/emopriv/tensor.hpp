#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace emopriv {

// Dense row-major tensor of doubles. Rank is 1 or 2 everywhere in this
// codebase (vectors, matrices, frame sequences); conv kernels use rank 3.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}
    Tensor(std::vector<size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != count(shape))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static size_t count(const std::vector<size_t>& s) {
        return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
    }

    size_t size() const { return data.size(); }
    size_t rows() const { return shape.at(0); }
    size_t cols() const { return shape.at(1); }

    double& at2(size_t r, size_t c) { return data[r * shape[1] + c]; }
    double at2(size_t r, size_t c) const { return data[r * shape[1] + c]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace emopriv

#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "mtc/common.hpp"

namespace mtc {

// Dense row-major tensor of rank 1-3. Scalar type is float for training and
// double for the finite-difference oracles.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(count(), T{});
    }
    Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != count()) throw ShapeMismatch("tensor: value count does not match shape");
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.reserve(v.size());
        for (T x : v) out.v.push_back(static_cast<U>(x));
        return out;
    }
};

}  // namespace mtc

// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with an explicit shape. Values are 64-bit floats;
// the scalar type is a template parameter so the same kernels run over
// doubles and dual numbers.

#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gradleak/dual.hpp"
#include "gradleak/errors.hpp"

namespace gradleak {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

template <typename S>
struct BasicTensor {
    std::vector<std::size_t> shape;
    std::vector<S> values;

    BasicTensor() = default;
    BasicTensor(std::vector<std::size_t> shape_in, std::vector<S> values_in)
        : shape(std::move(shape_in)), values(std::move(values_in)) {
        if (values.size() != shape_numel(shape)) {
            throw ShapeError("tensor value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_to_string(shape));
        }
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor shape has a zero dimension " + shape_to_string(shape));
        }
    }

    static BasicTensor zeros(std::vector<std::size_t> shape_in) {
        std::vector<S> v(shape_numel(shape_in), S(0.0));
        return BasicTensor(std::move(shape_in), std::move(v));
    }

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    S& operator[](std::size_t i) { return values[i]; }
    const S& operator[](std::size_t i) const { return values[i]; }
};

using Tensor = BasicTensor<double>;

inline bool same_shape(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return a == b;
}

inline void check_finite(const Tensor& t, const char* context) {
    for (double v : t.values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(context) + ": non-finite value in tensor");
        }
    }
}

}  // namespace gradleak

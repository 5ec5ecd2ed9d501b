#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hear/common.hpp"

namespace hear {

// Dense row-major tensor. Rank 1 and 2 cover everything in this codebase;
// a [n] tensor broadcasts as a row where a matrix is expected.
template <class S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> dims, S fill = S(0)) : shape(std::move(dims)) {
        data.assign(static_cast<size_t>(count(shape)), fill);
    }

    Tensor(std::vector<int> dims, std::vector<S> values)
        : shape(std::move(dims)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != count(shape))
            throw NumericError("tensor: element count does not match shape");
    }

    static int64_t count(const std::vector<int>& dims) {
        int64_t n = 1;
        for (int d : dims) {
            if (d < 0) throw NumericError("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int rows() const { return rank() == 2 ? shape[0] : 1; }
    int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

    S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    const S& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i)
            s += (i ? "x" : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

} // namespace hear

// Copyright 2026 The PEPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pepl {

/// Raised for every contract violation in the library (bad shapes, ranges, states).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw Error(what);
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Dense row-major 2-D array of values. Used for maps (H x W) and
/// probability batches (n x C).
template <typename T>
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    template <typename U>
    bool same_shape(const Grid<U>& o) const { return rows == o.rows && cols == o.cols; }

    T sum() const {
        T s{};
        for (const T& v : data) s += v;
        return s;
    }
};

/// Dense NCHW tensor.
template <typename T>
struct Tensor4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T{})
        : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

    std::size_t plane() const { return h * w; }
    std::size_t sample_size() const { return c * h * w; }

    T* sample(std::size_t i) { return data.data() + i * sample_size(); }
    const T* sample(std::size_t i) const { return data.data() + i * sample_size(); }

    T& at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) {
        return data[((i * c + ch) * h + y) * w + x];
    }
    const T& at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) const {
        return data[((i * c + ch) * h + y) * w + x];
    }

    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// A single image (or feature map) stored channel-major, [c x h x w].
template <typename T>
struct Planes {
    std::size_t c = 0, h = 0, w = 0;
    std::vector<T> data;

    Planes() = default;
    Planes(std::size_t c_, std::size_t h_, std::size_t w_, T fill = T{})
        : c(c_), h(h_), w(w_), data(c_ * h_ * w_, fill) {}

    T& at(std::size_t ch, std::size_t y, std::size_t x) { return data[(ch * h + y) * w + x]; }
    const T& at(std::size_t ch, std::size_t y, std::size_t x) const { return data[(ch * h + y) * w + x]; }

    bool same_shape(const Planes& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// Copies sample `i` of a batch out as standalone planes.
template <typename T>
Planes<T> slice_sample(const Tensor4<T>& t, std::size_t i) {
    Planes<T> p(t.c, t.h, t.w);
    const T* src = t.sample(i);
    std::copy(src, src + t.sample_size(), p.data.begin());
    return p;
}

}  // namespace pepl

#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "zia/common.hpp"
#include "zia/rng.hpp"

namespace zia {

// Dense row-major 2-D array of doubles. Vectors are 1xN or Nx1 tensors.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, std::initializer_list<double> init) : rows(r), cols(c), v(init) {
        if (static_cast<int>(v.size()) != r * c)
            throw std::invalid_argument("Tensor: initializer size mismatch");
    }

    double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    int size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    static Tensor full(int r, int c, double x) {
        Tensor t(r, c);
        t.fill(x);
        return t;
    }

    static Tensor row(std::vector<double> data) {
        Tensor t;
        t.rows = 1;
        t.cols = static_cast<int>(data.size());
        t.v = std::move(data);
        return t;
    }

    static Tensor col(std::vector<double> data) {
        Tensor t;
        t.rows = static_cast<int>(data.size());
        t.cols = 1;
        t.v = std::move(data);
        return t;
    }
};

namespace detail {
using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<const EigenMat> emap(const Tensor& t) {
    return Eigen::Map<const EigenMat>(t.v.data(), t.rows, t.cols);
}
inline Eigen::Map<EigenMat> emap(Tensor& t) {
    return Eigen::Map<EigenMat>(t.v.data(), t.rows, t.cols);
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tensor out(a.rows, b.cols);
    detail::emap(out).noalias() = detail::emap(a) * detail::emap(b);
    return out;
}

// A^T * B without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: dimension mismatch");
    Tensor out(a.cols, b.cols);
    detail::emap(out).noalias() = detail::emap(a).transpose() * detail::emap(b);
    return out;
}

// A * B^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: dimension mismatch");
    Tensor out(a.rows, b.rows);
    detail::emap(out).noalias() = detail::emap(a) * detail::emap(b).transpose();
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out(a.cols, a.rows);
    detail::emap(out) = detail::emap(a).transpose();
    return out;
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
    if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch");
    for (int i = 0; i < x.size(); ++i) y.v[i] += alpha * x.v[i];
}

inline double dot_all(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dot_all: shape mismatch");
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

inline double frob_norm(const Tensor& a) {
    return std::sqrt(dot_all(a, a));
}

inline Tensor random_uniform(int r, int c, double lo, double hi, rng::Stream& g) {
    Tensor t(r, c);
    for (auto& x : t.v) x = g.uniform(lo, hi);
    return t;
}

inline Tensor random_normal(int r, int c, double sigma, rng::Stream& g) {
    Tensor t(r, c);
    for (auto& x : t.v) x = g.normal(0.0, sigma);
    return t;
}

// A named, ordered collection of tensors. Used for every trainable parameter
// set so SGD, checkpointing and compression can iterate generically.
// Order is insertion order and therefore deterministic.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> entries;

    Tensor& add(const std::string& name, Tensor t) {
        entries.emplace_back(name, std::move(t));
        return entries.back().second;
    }

    Tensor& at(const std::string& name) {
        for (auto& [n, t] : entries)
            if (n == name) return t;
        throw std::invalid_argument("ParamSet: no tensor named " + name);
    }

    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return t;
        throw std::invalid_argument("ParamSet: no tensor named " + name);
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return true;
        return false;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries) n += static_cast<std::size_t>(t.size());
        return n;
    }
};

}  // namespace zia

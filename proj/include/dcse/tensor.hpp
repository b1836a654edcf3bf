#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "dcse/common.hpp"
#include "dcse/rng.hpp"

namespace dcse {

// Dense row-major double tensor.  Rank conventions used across the library:
// rank 1 = feature vector, rank 2 = [channels, length], rank 3 =
// [channels, height, width], rank 4 = conv kernels [out, in, kh, kw].
struct Tensor {
    std::vector<int>    shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(count(shape), 0.0);
    }

    static size_t count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw RangeError("tensor dims must be positive");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = stddev * rng.normal();
        return t;
    }

    static Tensor from(std::vector<int> s, std::vector<double> d) {
        if (count(s) != d.size()) throw LengthError("tensor data/shape mismatch");
        Tensor t;
        t.shape = std::move(s);
        t.data  = std::move(d);
        return t;
    }

    size_t numel() const { return data.size(); }
    int    rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= rank()) throw RangeError("tensor dim index out of range");
        return shape[static_cast<size_t>(i)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double&       at(size_t i) { return data[i]; }
    const double& at(size_t i) const { return data[i]; }

    // rank-3 accessor
    double& at3(int c, int h, int w) {
        return data[(static_cast<size_t>(c) * static_cast<size_t>(shape[1]) +
                     static_cast<size_t>(h)) * static_cast<size_t>(shape[2]) +
                    static_cast<size_t>(w)];
    }
    const double& at3(int c, int h, int w) const {
        return const_cast<Tensor*>(this)->at3(c, h, w);
    }

    double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

// A trainable tensor with its gradient accumulator.  Models own these; tapes
// reference them and flush leaf gradients into `grad` after a backward pass.
struct Param {
    std::string name;
    Tensor      value;
    Tensor      grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape);
    }

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

}  // namespace dcse

#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace folio {

// Dense row-major tensor of doubles.  Ranks stay small (scalar up to rank 3)
// and shapes are fixed at creation; all arithmetic lives in the graph ops.
struct tensor {
    std::vector<int> shape;
    std::vector<double> v;

    tensor() = default;

    explicit tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0) {}

    tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != count(shape)) throw domain_error("tensor: data length does not match shape");
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw domain_error("tensor: dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static tensor scalar(double x) { return tensor({1}, {x}); }

    static tensor vec(std::vector<double> data) {
        const int n = static_cast<int>(data.size());
        return tensor({n}, std::move(data));
    }

    std::size_t size() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return v.size() == 1; }
    double scalar_value() const {
        if (!is_scalar()) throw domain_error("tensor: not a scalar");
        return v[0];
    }

    // Rank-2 accessor: (rows, cols).
    double& at2(int r, int c) { return v[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return v[static_cast<std::size_t>(r) * shape[1] + c]; }

    // Rank-3 accessor: (channels, rows, cols).
    double& at3(int ch, int r, int c) {
        return v[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
    }
    double at3(int ch, int r, int c) const {
        return v[(static_cast<std::size_t>(ch) * shape[1] + r) * shape[2] + c];
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const tensor& o) const { return shape == o.shape; }
};

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace folio

#pragma once
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace skpp {

// Row-major [rows x cols] matrix of doubles. Feature matrices everywhere in
// this project are per-site (or per-point) rows with channel columns.
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), v(size_t(r) * size_t(c), fill) {}

    double& at(int i, int j) { return v[size_t(i) * cols + j]; }
    double at(int i, int j) const { return v[size_t(i) * cols + j]; }
    double* row(int i) { return v.data() + size_t(i) * cols; }
    const double* row(int i) const { return v.data() + size_t(i) * cols; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<double> w;
    std::vector<double> g;
    bool frozen = false; // stored in checkpoints but never updated by the optimizer

    Parameter() = default;
    Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        w.assign(size_t(count()), 0.0);
        g.assign(size_t(count()), 0.0);
    }

    int64_t count() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace skpp

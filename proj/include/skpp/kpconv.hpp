#pragma once
#include <string>
#include <vector>

#include "skpp/grid.hpp"
#include "skpp/nn.hpp"
#include "skpp/rng.hpp"
#include "skpp/tensor.hpp"

namespace skpp {

struct KernelPointSet {
    std::vector<std::array<double, 2>> positions; // relative to the reference point
    double radius = 1.0;                          // convolution radius, meters
    double influence_sigma = 0.5;                 // linear influence reach, meters

    int count() const { return int(positions.size()); }
};

// One point pinned at the origin; the remaining K-1 start on a ring of
// radius 0.7*radius and spread by pairwise-repulsion descent clipped to the
// disk. Deterministic per seed. Kernel positions are frozen (not learned).
KernelPointSet place_kernel_points(int K, double radius, uint64_t seed, double sigma_ratio = 0.5);

// h_k = max(0, 1 - |offset - position_k| / influence_sigma), for each k.
std::vector<double> influence(const KernelPointSet& kernel, double ox, double oy);

struct KPConv {
    KernelPointSet kernel;
    Parameter W;   // [K, n, m]
    Parameter b;   // [n]
    Parameter pos; // [K, 2] frozen kernel point layout, kept in checkpoints
    int m = 1, n = 1;
    std::string name;

    // forward cache
    std::vector<double> last_ref_x, last_ref_y, last_sup_x, last_sup_y;
    std::vector<std::vector<int>> last_neighbors;
    Tensor last_sup;

    // benchmark counters (most recent forward)
    int64_t last_pairs = 0; // (reference, neighbor) pairs
    int64_t last_macs = 0;
    double last_ms = 0.0;

    void init(const std::string& name_, const KernelPointSet& k, int c_in, int c_out, Rng& rng);

    // Replaces the kernel layout (and its checkpoint mirror).
    void set_kernel(const KernelPointSet& k);

    // out[r] = b + sum_{nbr} sum_k h_k(p_nbr - p_ref) W_k f_nbr.
    // References with empty neighbor lists output the bias alone.
    Tensor forward(const std::vector<double>& ref_x, const std::vector<double>& ref_y,
                   const std::vector<double>& sup_x, const std::vector<double>& sup_y,
                   const Tensor& sup_feats, const std::vector<std::vector<int>>& neighbors);

    // Accumulates W.g / b.g; returns gradient w.r.t. support features.
    Tensor backward(const Tensor& dout);

    // Duality view: active cells as pseudo-points are both the references
    // and the support; the output keeps the input active set.
    SparseGrid forward_on_grid(const SparseGrid& g);

    void params(std::vector<Parameter*>& out) {
        out.push_back(&W);
        out.push_back(&b);
        out.push_back(&pos);
    }
};

} // namespace skpp

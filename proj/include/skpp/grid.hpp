#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "skpp/geometry.hpp"
#include "skpp/points.hpp"
#include "skpp/tensor.hpp"

namespace skpp {

struct CellIndex {
    int i = 0, j = 0;
    friend bool operator==(const CellIndex& a, const CellIndex& b) { return a.i == b.i && a.j == b.j; }
    friend bool operator<(const CellIndex& a, const CellIndex& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    }
};

inline uint64_t cell_key(int i, int j) {
    return (uint64_t(uint32_t(i)) << 32) | uint64_t(uint32_t(j));
}
inline uint64_t cell_key(const CellIndex& c) { return cell_key(c.i, c.j); }

struct GridSpec {
    double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
    double cell_size = 1.0;

    int nx() const { return int(std::llround((x_max - x_min) / cell_size)); }
    int ny() const { return int(std::llround((y_max - y_min) / cell_size)); }

    void validate() const;

    Extent extent() const { return {x_min, x_max, y_min, y_max}; }

    double center_x(int i) const { return x_min + (i + 0.5) * cell_size; }
    double center_y(int j) const { return y_min + (j + 0.5) * cell_size; }

    // Same extent, cell side scaled by s (dims must divide evenly).
    GridSpec coarser(int s) const;

    friend bool operator==(const GridSpec& a, const GridSpec& b) {
        return a.x_min == b.x_min && a.x_max == b.x_max && a.y_min == b.y_min &&
               a.y_max == b.y_max && a.cell_size == b.cell_size;
    }
};

// Active set S (canonical row-major ascending order) plus per-cell features.
struct SparseGrid {
    GridSpec spec;
    int channels = 0;
    std::vector<CellIndex> active; // sorted by (i, j)
    Tensor feats;                  // [|active| x channels]

    int size() const { return int(active.size()); }
    double density() const {
        const double total = double(spec.nx()) * double(spec.ny());
        return total > 0 ? double(active.size()) / total : 0.0;
    }
    // slot of cell in the canonical order, or -1
    int find(const CellIndex& c) const;
    void validate() const;
};

SparseGrid make_sparse_grid(const GridSpec& spec, std::vector<CellIndex> active, int channels);

struct DenseGrid {
    GridSpec spec;
    int channels = 0;
    std::vector<double> v; // [(i * ny + j) * channels + c]

    DenseGrid() = default;
    DenseGrid(const GridSpec& s, int c)
        : spec(s), channels(c), v(size_t(s.nx()) * size_t(s.ny()) * size_t(c), 0.0) {}
    double& at(int i, int j, int c) { return v[(size_t(i) * spec.ny() + j) * channels + c]; }
    double at(int i, int j, int c) const { return v[(size_t(i) * spec.ny() + j) * channels + c]; }
};

// Half-open cell intervals: in-bounds iff x in [x_min, x_max) etc.
std::optional<CellIndex> point_to_cell(const GridSpec& spec, double x, double y);

// Occupied cell -> point indices, keys in canonical order. Out-of-bounds
// points are dropped.
std::map<CellIndex, std::vector<int>> scatter_points(const GridSpec& spec, const PointCloud& cloud);

DenseGrid to_dense(const SparseGrid& g);
SparseGrid from_dense(const DenseGrid& d, const std::function<bool(const double*, int)>& keep);
SparseGrid from_dense_nonzero(const DenseGrid& d);
SparseGrid from_dense_all(const DenseGrid& d);

// 8-connected dilation of the active set; new cells carry zero features.
SparseGrid voxel_pad(const SparseGrid& g);

struct PoolProvenance {
    GridSpec fine_spec;
    GridSpec coarse_spec;
    std::vector<CellIndex> fine_active;   // pre-pool active set, canonical order
    std::vector<CellIndex> coarse_active; // pooled active set, canonical order
    std::vector<int> parent;              // fine slot -> coarse slot
    std::vector<int> argmax;              // [coarse slot * channels + c] -> fine slot
    int channels = 0;
};

// Size-2 max pooling over occupied children only (absent cells are treated
// as absent, not zero). Returns the pooled grid and the provenance needed by
// voxel_unpool and by the pooling backward pass.
std::pair<SparseGrid, PoolProvenance> max_pool2(const SparseGrid& g);

// Restores the pre-pool active set; each coarse feature is copied to every
// fine active cell of its window.
SparseGrid voxel_unpool(const SparseGrid& coarse, const PoolProvenance& prov);

// Gradient routing for the two structural ops above.
Tensor max_pool2_backward(const PoolProvenance& prov, const Tensor& d_coarse);
Tensor voxel_unpool_backward(const SparseGrid& coarse, const PoolProvenance& prov, const Tensor& d_fine);

// Grid-as-point-cloud duality view: one pseudo-point per active cell at the
// metric cell center, in canonical active order.
struct CellPoints {
    std::vector<double> x, y;
};
CellPoints cells_as_points(const SparseGrid& g);

} // namespace skpp

#include "skpp/grid.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace skpp {

void GridSpec::validate() const {
    check(x_max > x_min, "GridSpec: x_max must exceed x_min");
    check(y_max > y_min, "GridSpec: y_max must exceed y_min");
    check(cell_size > 0.0, "GridSpec: cell_size must be positive");
    const double fx = (x_max - x_min) / cell_size;
    const double fy = (y_max - y_min) / cell_size;
    check(std::abs(fx - std::llround(fx)) < 1e-9, "GridSpec: x extent is not a multiple of cell_size");
    check(std::abs(fy - std::llround(fy)) < 1e-9, "GridSpec: y extent is not a multiple of cell_size");
}

GridSpec GridSpec::coarser(int s) const {
    check(nx() % s == 0 && ny() % s == 0, "GridSpec: dims not divisible by stride");
    GridSpec out = *this;
    out.cell_size = cell_size * s;
    return out;
}

int SparseGrid::find(const CellIndex& c) const {
    auto it = std::lower_bound(active.begin(), active.end(), c);
    if (it != active.end() && *it == c) return int(it - active.begin());
    return -1;
}

void SparseGrid::validate() const {
    spec.validate();
    check(feats.rows == int(active.size()), "SparseGrid: feature rows != active count");
    check(feats.cols == channels, "SparseGrid: feature cols != channels");
    const int nx_ = spec.nx(), ny_ = spec.ny();
    for (size_t k = 0; k < active.size(); ++k) {
        const auto& c = active[k];
        check(c.i >= 0 && c.i < nx_ && c.j >= 0 && c.j < ny_, "SparseGrid: active cell out of range");
        if (k > 0) check(active[k - 1] < c, "SparseGrid: active set not in canonical order");
    }
    check(feats.all_finite(), "SparseGrid: non-finite feature");
}

SparseGrid make_sparse_grid(const GridSpec& spec, std::vector<CellIndex> active, int channels) {
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    SparseGrid g;
    g.spec = spec;
    g.channels = channels;
    g.feats = Tensor(int(active.size()), channels);
    g.active = std::move(active);
    return g;
}

std::optional<CellIndex> point_to_cell(const GridSpec& spec, double x, double y) {
    if (!(x >= spec.x_min && x < spec.x_max && y >= spec.y_min && y < spec.y_max))
        return std::nullopt;
    CellIndex c;
    c.i = int(std::floor((x - spec.x_min) / spec.cell_size));
    c.j = int(std::floor((y - spec.y_min) / spec.cell_size));
    // guard against floating-point edge hits on the upper boundary
    c.i = std::min(c.i, spec.nx() - 1);
    c.j = std::min(c.j, spec.ny() - 1);
    return c;
}

std::map<CellIndex, std::vector<int>> scatter_points(const GridSpec& spec, const PointCloud& cloud) {
    std::map<CellIndex, std::vector<int>> out;
    for (size_t k = 0; k < cloud.points.size(); ++k) {
        const auto& p = cloud.points[k];
        if (auto c = point_to_cell(spec, p.x, p.y)) out[*c].push_back(int(k));
    }
    return out;
}

DenseGrid to_dense(const SparseGrid& g) {
    DenseGrid d(g.spec, g.channels);
    for (int s = 0; s < g.size(); ++s)
        for (int c = 0; c < g.channels; ++c) d.at(g.active[s].i, g.active[s].j, c) = g.feats.at(s, c);
    return d;
}

SparseGrid from_dense(const DenseGrid& d, const std::function<bool(const double*, int)>& keep) {
    std::vector<CellIndex> active;
    const int nx = d.spec.nx(), ny = d.spec.ny();
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j)
            if (keep(&d.v[(size_t(i) * ny + j) * d.channels], d.channels)) active.push_back({i, j});
    SparseGrid g = make_sparse_grid(d.spec, std::move(active), d.channels);
    for (int s = 0; s < g.size(); ++s)
        for (int c = 0; c < d.channels; ++c) g.feats.at(s, c) = d.at(g.active[s].i, g.active[s].j, c);
    return g;
}

SparseGrid from_dense_nonzero(const DenseGrid& d) {
    return from_dense(d, [](const double* f, int c) {
        for (int k = 0; k < c; ++k)
            if (f[k] != 0.0) return true;
        return false;
    });
}

SparseGrid from_dense_all(const DenseGrid& d) {
    return from_dense(d, [](const double*, int) { return true; });
}

SparseGrid voxel_pad(const SparseGrid& g) {
    const int nx = g.spec.nx(), ny = g.spec.ny();
    std::vector<CellIndex> padded;
    padded.reserve(g.active.size() * 9);
    for (const auto& c : g.active) {
        for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
                const int i = c.i + di, j = c.j + dj;
                if (i >= 0 && i < nx && j >= 0 && j < ny) padded.push_back({i, j});
            }
        }
    }
    SparseGrid out = make_sparse_grid(g.spec, std::move(padded), g.channels);
    for (int s = 0; s < g.size(); ++s) {
        const int t = out.find(g.active[s]);
        for (int c = 0; c < g.channels; ++c) out.feats.at(t, c) = g.feats.at(s, c);
    }
    return out;
}

std::pair<SparseGrid, PoolProvenance> max_pool2(const SparseGrid& g) {
    check(g.spec.nx() % 2 == 0 && g.spec.ny() % 2 == 0, "max_pool2: grid dims must be even");

    std::vector<CellIndex> coarse_cells;
    coarse_cells.reserve(g.active.size());
    for (const auto& c : g.active) coarse_cells.push_back({c.i / 2, c.j / 2});
    SparseGrid out = make_sparse_grid(g.spec.coarser(2), std::move(coarse_cells), g.channels);

    PoolProvenance prov;
    prov.fine_spec = g.spec;
    prov.coarse_spec = out.spec;
    prov.fine_active = g.active;
    prov.coarse_active = out.active;
    prov.channels = g.channels;
    prov.parent.resize(g.active.size());
    prov.argmax.assign(size_t(out.size()) * g.channels, -1);

    for (int s = 0; s < g.size(); ++s) {
        const CellIndex cc{g.active[s].i / 2, g.active[s].j / 2};
        const int t = out.find(cc);
        prov.parent[s] = t;
        for (int c = 0; c < g.channels; ++c) {
            int& am = prov.argmax[size_t(t) * g.channels + c];
            if (am < 0 || g.feats.at(s, c) > g.feats.at(am, c)) {
                am = s;
                out.feats.at(t, c) = g.feats.at(s, c);
            }
        }
    }
    return {std::move(out), std::move(prov)};
}

SparseGrid voxel_unpool(const SparseGrid& coarse, const PoolProvenance& prov) {
    check(coarse.spec == prov.coarse_spec, "voxel_unpool: resolution mismatch with provenance");
    SparseGrid out = make_sparse_grid(prov.fine_spec, prov.fine_active, coarse.channels);
    // coarse may carry extra active cells (e.g. grown by padding); every
    // provenance coarse cell must be present in it.
    std::vector<int> coarse_slot(prov.coarse_active.size());
    for (size_t t = 0; t < prov.coarse_active.size(); ++t) {
        const int s = coarse.find(prov.coarse_active[t]);
        check(s >= 0, "voxel_unpool: provenance coarse cell missing from input grid");
        coarse_slot[t] = s;
    }
    for (int f = 0; f < out.size(); ++f) {
        const int s = coarse_slot[prov.parent[f]];
        for (int c = 0; c < coarse.channels; ++c) out.feats.at(f, c) = coarse.feats.at(s, c);
    }
    return out;
}

Tensor max_pool2_backward(const PoolProvenance& prov, const Tensor& d_coarse) {
    check(d_coarse.rows == int(prov.coarse_active.size()) && d_coarse.cols == prov.channels,
          "max_pool2_backward: grad shape mismatch");
    Tensor d_fine(int(prov.fine_active.size()), prov.channels);
    for (int t = 0; t < d_coarse.rows; ++t)
        for (int c = 0; c < prov.channels; ++c)
            d_fine.at(prov.argmax[size_t(t) * prov.channels + c], c) += d_coarse.at(t, c);
    return d_fine;
}

Tensor voxel_unpool_backward(const SparseGrid& coarse, const PoolProvenance& prov, const Tensor& d_fine) {
    check(d_fine.rows == int(prov.fine_active.size()), "voxel_unpool_backward: grad rows mismatch");
    Tensor d_coarse(coarse.size(), d_fine.cols);
    std::vector<int> coarse_slot(prov.coarse_active.size());
    for (size_t t = 0; t < prov.coarse_active.size(); ++t)
        coarse_slot[t] = coarse.find(prov.coarse_active[t]);
    for (int f = 0; f < d_fine.rows; ++f) {
        const int s = coarse_slot[prov.parent[f]];
        for (int c = 0; c < d_fine.cols; ++c) d_coarse.at(s, c) += d_fine.at(f, c);
    }
    return d_coarse;
}

CellPoints cells_as_points(const SparseGrid& g) {
    CellPoints out;
    out.x.reserve(g.active.size());
    out.y.reserve(g.active.size());
    for (const auto& c : g.active) {
        out.x.push_back(g.spec.center_x(c.i));
        out.y.push_back(g.spec.center_y(c.j));
    }
    return out;
}

} // namespace skpp

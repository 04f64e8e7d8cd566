#pragma once
#include <string>
#include <vector>

#include "skpp/bench.hpp"
#include "skpp/grid.hpp"
#include "skpp/kpconv.hpp"
#include "skpp/nn.hpp"
#include "skpp/points.hpp"

namespace skpp {

// Sparse PointPillars: per-point (dx, dy, vr, rcs) -> linear -> BN -> ReLU,
// then channel-wise max over the points of each occupied cell.
struct PillarEncoder {
    Linear lin;
    BatchNorm bn;
    int f_out = 0;

    // forward cache
    Tensor last_bn_out;       // pre-ReLU activations per point
    std::vector<int> argmax;  // [cell slot * f_out + c] -> point row
    int last_points = 0;

    void init(const std::string& name, int f_out_, Rng& rng);
    SparseGrid forward(const GridSpec& spec, const PointCloud& cloud);
    void backward(const Tensor& d_cells); // point features are leaves
    void params(std::vector<Parameter*>& out);
    void set_train(bool t) { bn.train = t; }
    void stats(std::vector<LayerStats>& out) const;
};

// Sparse KPBEV: reference point at each occupied cell center; features of
// the neighboring input points aggregated with a KPConv. Point features are
// (vr, rcs); raw coordinates can be appended via use_xy.
struct SKPBEVEncoder {
    KPConv kp;
    bool use_xy = false;
    int f_out = 0;

    void init(const std::string& name, const KernelPointSet& kernel, int f_out_, bool use_xy_, Rng& rng);
    SparseGrid forward(const GridSpec& spec, const PointCloud& cloud);
    void backward(const Tensor& d_cells);
    void params(std::vector<Parameter*>& out) { kp.params(out); }
    void set_train(bool) {}
    void stats(std::vector<LayerStats>& out) const;
};

// f_out = sum_m BN_m(f_m) over members sharing one active set.
struct MultigridAggregator {
    std::vector<BatchNorm> bns;

    void init(const std::string& name, int members, int channels);
    SparseGrid forward(const std::vector<const SparseGrid*>& members);
    std::vector<Tensor> backward(const Tensor& dout);
    void params(std::vector<Parameter*>& out);
    void set_train(bool t);
};

SparseGrid spp_encode(const GridSpec& spec, const PointCloud& cloud, PillarEncoder& enc);
SparseGrid skpbev_encode(const GridSpec& spec, const PointCloud& cloud, SKPBEVEncoder& enc);
SparseGrid multigrid_aggregate(const std::vector<const SparseGrid*>& members, MultigridAggregator& agg);
SparseGrid skpp_encode(const GridSpec& spec, const PointCloud& cloud, PillarEncoder& spp,
                       SKPBEVEncoder& skpbev, MultigridAggregator& agg);

enum class RenderMode { spp, skpbev, skpp };

RenderMode render_mode_from_name(const std::string& name);
const char* render_mode_name(RenderMode m);

// The configured rendering front-end of the full model.
struct Renderer {
    RenderMode mode = RenderMode::skpp;
    PillarEncoder spp;
    SKPBEVEncoder skpbev;
    MultigridAggregator agg;

    SparseGrid last_spp, last_skpbev; // member outputs (skpp mode)

    SparseGrid forward(const GridSpec& spec, const PointCloud& cloud);
    void backward(const Tensor& d_out);
    void params(std::vector<Parameter*>& out);
    void set_train(bool t);
    void stats(std::vector<LayerStats>& out) const;
};

// Debug dump: `i j c0 c1 ...` per active cell, canonical order.
void dump_grid(const SparseGrid& g, const std::string& path);

} // namespace skpp

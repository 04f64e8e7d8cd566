#include "skpp/render.hpp"

#include <cstdio>
#include <fstream>

namespace skpp {

void PillarEncoder::init(const std::string& name, int f_out_, Rng& rng) {
    check(f_out_ >= 1, "PillarEncoder: f_out must be >= 1");
    f_out = f_out_;
    Rng r = rng.split(101);
    lin.init(name + ".lin", f_out_, 4, r);
    bn.init(name + ".bn", f_out_);
}

SparseGrid PillarEncoder::forward(const GridSpec& spec, const PointCloud& cloud) {
    const auto occupancy = scatter_points(spec, cloud);
    std::vector<CellIndex> cells;
    cells.reserve(occupancy.size());
    for (const auto& [c, _] : occupancy) cells.push_back(c);

    SparseGrid out = make_sparse_grid(spec, cells, f_out);

    int total_points = 0;
    for (const auto& [_, idx] : occupancy) total_points += int(idx.size());
    last_points = total_points;
    argmax.assign(size_t(out.size()) * f_out, -1);
    if (total_points == 0) {
        last_bn_out = Tensor(0, f_out);
        return out;
    }

    // per-point features: offsets from the cell center, vr, rcs
    Tensor x(total_points, 4);
    std::vector<int> row_cell(total_points);
    int row = 0;
    int slot = 0;
    for (const auto& [c, idx] : occupancy) {
        const double cx = spec.center_x(c.i), cy = spec.center_y(c.j);
        for (int pi : idx) {
            const RadarPoint& p = cloud.points[pi];
            x.at(row, 0) = p.x - cx;
            x.at(row, 1) = p.y - cy;
            x.at(row, 2) = p.vr;
            x.at(row, 3) = p.rcs;
            row_cell[row] = slot;
            ++row;
        }
        ++slot;
    }

    Tensor u = lin.forward(x);
    last_bn_out = bn.forward(u);
    const Tensor act = relu_forward(last_bn_out);

    for (int r = 0; r < act.rows; ++r) {
        const int s = row_cell[r];
        for (int c = 0; c < f_out; ++c) {
            int& am = argmax[size_t(s) * f_out + c];
            if (am < 0 || act.at(r, c) > out.feats.at(s, c)) {
                am = r;
                out.feats.at(s, c) = act.at(r, c);
            }
        }
    }
    return out;
}

void PillarEncoder::backward(const Tensor& d_cells) {
    if (last_points == 0) return;
    Tensor d_act(last_points, f_out);
    for (int s = 0; s < d_cells.rows; ++s)
        for (int c = 0; c < f_out; ++c) {
            const int r = argmax[size_t(s) * f_out + c];
            if (r >= 0) d_act.at(r, c) += d_cells.at(s, c);
        }
    Tensor d_bn = relu_backward(last_bn_out, d_act);
    Tensor d_lin = bn.backward(d_bn);
    lin.backward(d_lin);
}

void PillarEncoder::params(std::vector<Parameter*>& out) {
    lin.params(out);
    bn.params(out);
}

void PillarEncoder::stats(std::vector<LayerStats>& out) const {
    out.push_back({lin.W.name, last_points, int64_t(last_points) * 4 * f_out, 0.0});
}

void SKPBEVEncoder::init(const std::string& name, const KernelPointSet& kernel, int f_out_,
                         bool use_xy_, Rng& rng) {
    f_out = f_out_;
    use_xy = use_xy_;
    Rng r = rng.split(102);
    kp.init(name + ".kp", kernel, use_xy_ ? 4 : 2, f_out_, r);
}

SparseGrid SKPBEVEncoder::forward(const GridSpec& spec, const PointCloud& cloud) {
    const auto occupancy = scatter_points(spec, cloud);
    std::vector<CellIndex> cells;
    cells.reserve(occupancy.size());
    for (const auto& [c, _] : occupancy) cells.push_back(c);
    SparseGrid out = make_sparse_grid(spec, cells, f_out);
    if (cells.empty()) return out;

    const int P = int(cloud.points.size());
    std::vector<double> sup_x(P), sup_y(P);
    Tensor sup_feats(P, kp.m);
    for (int i = 0; i < P; ++i) {
        const RadarPoint& p = cloud.points[i];
        sup_x[i] = p.x;
        sup_y[i] = p.y;
        if (use_xy) {
            sup_feats.at(i, 0) = p.x;
            sup_feats.at(i, 1) = p.y;
            sup_feats.at(i, 2) = p.vr;
            sup_feats.at(i, 3) = p.rcs;
        } else {
            sup_feats.at(i, 0) = p.vr;
            sup_feats.at(i, 1) = p.rcs;
        }
    }

    std::vector<double> ref_x, ref_y;
    ref_x.reserve(cells.size());
    ref_y.reserve(cells.size());
    for (const auto& c : out.active) {
        ref_x.push_back(spec.center_x(c.i));
        ref_y.push_back(spec.center_y(c.j));
    }

    NeighborIndex index(sup_x, sup_y, kp.kernel.radius);
    std::vector<std::vector<int>> neighbors(ref_x.size());
    for (size_t r = 0; r < ref_x.size(); ++r) neighbors[r] = index.query(ref_x[r], ref_y[r]);

    out.feats = kp.forward(ref_x, ref_y, sup_x, sup_y, sup_feats, neighbors);
    return out;
}

void SKPBEVEncoder::backward(const Tensor& d_cells) {
    if (d_cells.rows == 0) return;
    kp.backward(d_cells); // support features are raw inputs
}

void SKPBEVEncoder::stats(std::vector<LayerStats>& out) const {
    out.push_back({kp.name, kp.last_pairs, kp.last_macs, kp.last_ms});
}

void MultigridAggregator::init(const std::string& name, int members, int channels) {
    check(members >= 1, "MultigridAggregator: needs at least one member");
    bns.resize(members);
    for (int m = 0; m < members; ++m) bns[m].init(name + ".bn" + std::to_string(m), channels);
}

SparseGrid MultigridAggregator::forward(const std::vector<const SparseGrid*>& members) {
    check(!members.empty(), "multigrid_aggregate: needs at least one member");
    check(members.size() == bns.size(), "multigrid_aggregate: member count mismatch");
    const SparseGrid& first = *members[0];
    for (const SparseGrid* g : members) {
        check(g->channels == first.channels, "multigrid_aggregate: channel count mismatch");
        check(g->active == first.active, "multigrid_aggregate: active set mismatch");
        check(g->spec == first.spec, "multigrid_aggregate: grid spec mismatch");
    }
    SparseGrid out = first;
    out.feats = Tensor(first.size(), first.channels);
    for (size_t m = 0; m < members.size(); ++m) {
        const Tensor y = first.size() > 0 ? bns[m].forward(members[m]->feats) : Tensor(0, first.channels);
        for (size_t k = 0; k < out.feats.v.size(); ++k) out.feats.v[k] += y.v[k];
    }
    return out;
}

std::vector<Tensor> MultigridAggregator::backward(const Tensor& dout) {
    std::vector<Tensor> grads;
    grads.reserve(bns.size());
    for (auto& bn : bns) grads.push_back(dout.rows > 0 ? bn.backward(dout) : Tensor(0, dout.cols));
    return grads;
}

void MultigridAggregator::params(std::vector<Parameter*>& out) {
    for (auto& bn : bns) bn.params(out);
}

void MultigridAggregator::set_train(bool t) {
    for (auto& bn : bns) bn.train = t;
}

SparseGrid spp_encode(const GridSpec& spec, const PointCloud& cloud, PillarEncoder& enc) {
    return enc.forward(spec, cloud);
}

SparseGrid skpbev_encode(const GridSpec& spec, const PointCloud& cloud, SKPBEVEncoder& enc) {
    return enc.forward(spec, cloud);
}

SparseGrid multigrid_aggregate(const std::vector<const SparseGrid*>& members, MultigridAggregator& agg) {
    return agg.forward(members);
}

SparseGrid skpp_encode(const GridSpec& spec, const PointCloud& cloud, PillarEncoder& spp,
                       SKPBEVEncoder& skpbev, MultigridAggregator& agg) {
    const SparseGrid a = spp.forward(spec, cloud);
    const SparseGrid b = skpbev.forward(spec, cloud);
    return agg.forward({&a, &b});
}

RenderMode render_mode_from_name(const std::string& name) {
    if (name == "spp") return RenderMode::spp;
    if (name == "skpbev") return RenderMode::skpbev;
    if (name == "skpp") return RenderMode::skpp;
    throw std::invalid_argument("unknown render mode: '" + name + "' (expected spp, skpbev or skpp)");
}

const char* render_mode_name(RenderMode m) {
    switch (m) {
        case RenderMode::spp: return "spp";
        case RenderMode::skpbev: return "skpbev";
        default: return "skpp";
    }
}

SparseGrid Renderer::forward(const GridSpec& spec, const PointCloud& cloud) {
    switch (mode) {
        case RenderMode::spp: return spp.forward(spec, cloud);
        case RenderMode::skpbev: return skpbev.forward(spec, cloud);
        default: break;
    }
    last_spp = spp.forward(spec, cloud);
    last_skpbev = skpbev.forward(spec, cloud);
    return agg.forward({&last_spp, &last_skpbev});
}

void Renderer::backward(const Tensor& d_out) {
    switch (mode) {
        case RenderMode::spp: spp.backward(d_out); return;
        case RenderMode::skpbev: skpbev.backward(d_out); return;
        default: break;
    }
    const std::vector<Tensor> d_members = agg.backward(d_out);
    spp.backward(d_members[0]);
    skpbev.backward(d_members[1]);
}

void Renderer::params(std::vector<Parameter*>& out) {
    switch (mode) {
        case RenderMode::spp: spp.params(out); return;
        case RenderMode::skpbev: skpbev.params(out); return;
        default: break;
    }
    spp.params(out);
    skpbev.params(out);
    agg.params(out);
}

void Renderer::set_train(bool t) {
    spp.set_train(t);
    skpbev.set_train(t);
    agg.set_train(t);
}

void Renderer::stats(std::vector<LayerStats>& out) const {
    if (mode == RenderMode::spp || mode == RenderMode::skpp) spp.stats(out);
    if (mode == RenderMode::skpbev || mode == RenderMode::skpp) skpbev.stats(out);
}

void dump_grid(const SparseGrid& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dump_grid: cannot write " + path);
    char buf[64];
    for (int s = 0; s < g.size(); ++s) {
        out << g.active[s].i << ' ' << g.active[s].j;
        for (int c = 0; c < g.channels; ++c) {
            std::snprintf(buf, sizeof(buf), " %.17g", g.feats.at(s, c));
            out << buf;
        }
        out << '\n';
    }
}

} // namespace skpp

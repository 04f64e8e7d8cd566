#include "skpp/sparse_conv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

namespace skpp {

std::vector<std::pair<int, int>> kernel_offsets(int f) {
    std::vector<std::pair<int, int>> offsets;
    offsets.reserve(size_t(f) * f);
    if (f % 2 == 1) {
        const int h = f / 2;
        for (int di = -h; di <= h; ++di)
            for (int dj = -h; dj <= h; ++dj) offsets.emplace_back(di, dj);
    } else {
        for (int di = 0; di < f; ++di)
            for (int dj = 0; dj < f; ++dj) offsets.emplace_back(di, dj);
    }
    return offsets;
}

namespace {

void validate_spec(const ConvSpec& spec, ConvMode mode) {
    check(spec.m >= 1 && spec.n >= 1 && spec.s >= 1, "ConvSpec: m, n, s must be >= 1");
    check(spec.f >= 1, "ConvSpec: f must be >= 1");
    if (mode == ConvMode::submanifold) {
        check(spec.f % 2 == 1, "SSC requires an odd kernel size");
        check(spec.s == 1, "SSC requires stride 1");
    } else {
        check(spec.f % 2 == 1 || (spec.f == 2 && spec.s == 2),
              "even kernel size is only permitted for SC(.,.,2,2)");
    }
}

std::unordered_map<uint64_t, int> slot_map(const std::vector<CellIndex>& active) {
    std::unordered_map<uint64_t, int> m;
    m.reserve(active.size() * 2);
    for (size_t k = 0; k < active.size(); ++k) m[cell_key(active[k])] = int(k);
    return m;
}

} // namespace

Rulebook build_rulebook(const GridSpec& in_spec, const std::vector<CellIndex>& active_in,
                        const ConvSpec& spec, ConvMode mode,
                        const std::vector<CellIndex>* reference_out) {
    validate_spec(spec, mode);
    Rulebook rb;
    rb.in_spec = in_spec;
    rb.offsets = kernel_offsets(spec.f);
    rb.pairs.resize(rb.offsets.size());

    const int nx = in_spec.nx(), ny = in_spec.ny();
    const auto in_slot = slot_map(active_in);

    if (mode == ConvMode::submanifold) {
        rb.out_spec = in_spec;
        rb.out_active = active_in;
        for (size_t k = 0; k < rb.offsets.size(); ++k) {
            const auto [di, dj] = rb.offsets[k];
            auto& bucket = rb.pairs[k];
            for (size_t b = 0; b < active_in.size(); ++b) {
                const int ai = active_in[b].i + di, aj = active_in[b].j + dj;
                if (ai < 0 || ai >= nx || aj < 0 || aj >= ny) continue;
                auto it = in_slot.find(cell_key(ai, aj));
                if (it != in_slot.end()) bucket.emplace_back(it->second, int(b));
            }
        }
        return rb;
    }

    if (mode == ConvMode::strided) {
        check(nx % spec.s == 0 && ny % spec.s == 0, "strided conv: dims not divisible by stride");
        rb.out_spec = in_spec.coarser(spec.s);
        const int onx = rb.out_spec.nx(), ony = rb.out_spec.ny();

        // output site active iff some input active cell lies in its footprint
        std::vector<CellIndex> out_cells;
        for (const auto& a : active_in) {
            for (const auto& [di, dj] : rb.offsets) {
                const int num_i = a.i - di, num_j = a.j - dj;
                if (num_i % spec.s != 0 || num_j % spec.s != 0) continue;
                const int oi = num_i / spec.s, oj = num_j / spec.s;
                if (oi < 0 || oi >= onx || oj < 0 || oj >= ony) continue;
                out_cells.push_back({oi, oj});
            }
        }
        std::sort(out_cells.begin(), out_cells.end());
        out_cells.erase(std::unique(out_cells.begin(), out_cells.end()), out_cells.end());
        rb.out_active = std::move(out_cells);

        for (size_t k = 0; k < rb.offsets.size(); ++k) {
            const auto [di, dj] = rb.offsets[k];
            auto& bucket = rb.pairs[k];
            for (size_t b = 0; b < rb.out_active.size(); ++b) {
                const int ai = rb.out_active[b].i * spec.s + di;
                const int aj = rb.out_active[b].j * spec.s + dj;
                if (ai < 0 || ai >= nx || aj < 0 || aj >= ny) continue;
                auto it = in_slot.find(cell_key(ai, aj));
                if (it != in_slot.end()) bucket.emplace_back(it->second, int(b));
            }
        }
        return rb;
    }

    // deconv: active_in is the coarse (SC output) set; reference_out is the
    // matching SC's input active set.
    check(reference_out != nullptr, "deconv rulebook requires the matching SC's input active set");
    GridSpec fine_spec = in_spec;
    fine_spec.cell_size = in_spec.cell_size / spec.s;
    fine_spec.validate();

    // the coarse set must be exactly the active output of the matching SC
    {
        Rulebook sc_rb = build_rulebook(fine_spec, *reference_out, spec, ConvMode::strided);
        check(sc_rb.out_active == active_in,
              "deconv: input active set does not match the SC of the given reference");
    }

    rb.out_spec = fine_spec;
    rb.out_active = *reference_out;
    const int onx = fine_spec.nx(), ony = fine_spec.ny();
    for (size_t k = 0; k < rb.offsets.size(); ++k) {
        const auto [di, dj] = rb.offsets[k];
        auto& bucket = rb.pairs[k];
        for (size_t a = 0; a < rb.out_active.size(); ++a) {
            const int num_i = rb.out_active[a].i - di, num_j = rb.out_active[a].j - dj;
            if (num_i % spec.s != 0 || num_j % spec.s != 0) continue;
            const int ci = num_i / spec.s, cj = num_j / spec.s;
            if (ci < 0 || ci * spec.s >= onx || cj < 0 || cj * spec.s >= ony) continue;
            auto it = in_slot.find(cell_key(ci, cj));
            check(it != in_slot.end(), "deconv: coarse cell missing for a reference site");
            bucket.emplace_back(it->second, int(a));
        }
    }
    return rb;
}

void SparseConv::init(const std::string& name_, const ConvSpec& cs, Rng& rng) {
    check(cs.m >= 1 && cs.n >= 1 && cs.s >= 1 && cs.f >= 1, "ConvSpec: m, n, f, s must be >= 1");
    check(cs.f % 2 == 1 || (cs.f == 2 && cs.s == 2),
          "even kernel size is only permitted for SC(.,.,2,2)");
    name = name_;
    spec = cs;
    const int fan_in = cs.m * cs.f * cs.f;
    W = init_param(name_ + ".W", {cs.f * cs.f, cs.n, cs.m}, fan_in, rng);
    b = init_param(name_ + ".b", {cs.n}, fan_in, rng);
}

SparseGrid SparseConv::forward(const SparseGrid& g, ConvMode mode,
                               std::shared_ptr<const Rulebook> rb,
                               const std::vector<CellIndex>* reference_out) {
    check(g.channels == spec.m, "sparse conv: input channel mismatch");
    const auto t0 = std::chrono::steady_clock::now();
    if (!rb) {
        rb = std::make_shared<Rulebook>(
            build_rulebook(g.spec, g.active, spec, mode, reference_out));
    }
    last_rb = rb;
    last_in = g.feats;

    SparseGrid out;
    out.spec = rb->out_spec;
    out.channels = spec.n;
    out.active = rb->out_active;
    out.feats = Tensor(int(out.active.size()), spec.n);
    for (int r = 0; r < out.feats.rows; ++r)
        for (int o = 0; o < spec.n; ++o) out.feats.at(r, o) = b.w[o];

    const int m = spec.m, n = spec.n;
    for (size_t k = 0; k < rb->offsets.size(); ++k) {
        const auto& bucket = rb->pairs[k];
        const double* wk = &W.w[size_t(k) * n * m];
        const int64_t count = int64_t(bucket.size());
#pragma omp parallel for if (count * m * n > 16384)
        for (int64_t p = 0; p < count; ++p) {
            const auto [a, bslot] = bucket[p];
            const double* fin = g.feats.row(a);
            double* fout = out.feats.row(bslot);
            for (int o = 0; o < n; ++o) {
                const double* w_row = wk + size_t(o) * m;
                double acc = 0.0;
                for (int i = 0; i < m; ++i) acc += w_row[i] * fin[i];
                fout[o] += acc;
            }
        }
    }

    last_pairs = rb->pair_count();
    last_macs = last_pairs * int64_t(m) * int64_t(n);
    last_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

Tensor SparseConv::backward(const Tensor& dout) {
    check(last_rb != nullptr, "sparse conv backward: no cached forward");
    check(dout.rows == int(last_rb->out_active.size()) && dout.cols == spec.n,
          "sparse conv backward: grad shape mismatch");
    const int m = spec.m, n = spec.n;
    Tensor din(last_in.rows, m);
    for (int r = 0; r < dout.rows; ++r)
        for (int o = 0; o < n; ++o) b.g[o] += dout.at(r, o);
    for (size_t k = 0; k < last_rb->offsets.size(); ++k) {
        const double* wk = &W.w[size_t(k) * n * m];
        double* gk = &W.g[size_t(k) * n * m];
        for (const auto& [a, bslot] : last_rb->pairs[k]) {
            const double* fin = last_in.row(a);
            const double* dup = dout.row(bslot);
            double* da = din.row(a);
            for (int o = 0; o < n; ++o) {
                const double d = dup[o];
                if (d == 0.0) {
                    continue;
                }
                const double* w_row = wk + size_t(o) * m;
                double* g_row = gk + size_t(o) * m;
                for (int i = 0; i < m; ++i) {
                    g_row[i] += d * fin[i];
                    da[i] += d * w_row[i];
                }
            }
        }
    }
    return din;
}

SparseGrid ssc_forward(SparseConv& layer, const SparseGrid& g, std::shared_ptr<const Rulebook> rb) {
    return layer.forward(g, ConvMode::submanifold, std::move(rb));
}

SparseGrid sc_forward(SparseConv& layer, const SparseGrid& g) {
    return layer.forward(g, ConvMode::strided);
}

SparseGrid dc_forward(SparseConv& layer, const SparseGrid& g, const std::vector<CellIndex>& reference) {
    return layer.forward(g, ConvMode::deconv, nullptr, &reference);
}

DenseGrid dense_conv_oracle(const DenseGrid& in, const Parameter& W, const Parameter& b,
                            const ConvSpec& spec) {
    validate_spec(spec, spec.s == 1 ? ConvMode::submanifold : ConvMode::strided);
    check(in.channels == spec.m, "dense_conv_oracle: channel mismatch");
    const int nx = in.spec.nx(), ny = in.spec.ny();
    check(nx % spec.s == 0 && ny % spec.s == 0, "dense_conv_oracle: dims not divisible by stride");
    DenseGrid out(in.spec.coarser(spec.s), spec.n);
    const auto offsets = kernel_offsets(spec.f);
    const int onx = out.spec.nx(), ony = out.spec.ny();
    for (int oi = 0; oi < onx; ++oi) {
        for (int oj = 0; oj < ony; ++oj) {
            for (int o = 0; o < spec.n; ++o) {
                double acc = b.w[o];
                for (size_t k = 0; k < offsets.size(); ++k) {
                    const int ii = oi * spec.s + offsets[k].first;
                    const int jj = oj * spec.s + offsets[k].second;
                    if (ii < 0 || ii >= nx || jj < 0 || jj >= ny) continue; // zero padding
                    const double* w_row = &W.w[(size_t(k) * spec.n + o) * spec.m];
                    for (int i = 0; i < spec.m; ++i) acc += w_row[i] * in.at(ii, jj, i);
                }
                out.at(oi, oj, o) = acc;
            }
        }
    }
    return out;
}

} // namespace skpp

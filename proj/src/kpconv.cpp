#include "skpp/kpconv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace skpp {

KernelPointSet place_kernel_points(int K, double radius, uint64_t seed, double sigma_ratio) {
    check(K >= 1, "place_kernel_points: K must be >= 1");
    check(radius > 0.0, "place_kernel_points: radius must be positive");
    KernelPointSet kp;
    kp.radius = radius;
    kp.influence_sigma = sigma_ratio * radius;
    kp.positions.push_back({0.0, 0.0});
    if (K == 1) return kp;

    Rng rng(seed);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const int ring = K - 1;
    for (int k = 0; k < ring; ++k) {
        const double a = phase + 2.0 * M_PI * k / ring;
        kp.positions.push_back({0.7 * radius * std::cos(a), 0.7 * radius * std::sin(a)});
    }

    const int iters = 100;
    for (int t = 0; t < iters; ++t) {
        const double step = 0.05 * radius * (1.0 - double(t) / iters);
        std::vector<std::array<double, 2>> next = kp.positions;
        for (int i = 1; i < K; ++i) { // origin point stays fixed
            double fx = 0.0, fy = 0.0;
            for (int j = 0; j < K; ++j) {
                if (j == i) continue;
                const double dx = kp.positions[i][0] - kp.positions[j][0];
                const double dy = kp.positions[i][1] - kp.positions[j][1];
                const double d2 = std::max(dx * dx + dy * dy, 1e-12);
                fx += dx / d2;
                fy += dy / d2;
            }
            const double fn = std::hypot(fx, fy);
            if (fn > 1e-12) {
                next[i][0] += step * fx / fn;
                next[i][1] += step * fy / fn;
            }
            const double r = std::hypot(next[i][0], next[i][1]);
            if (r > radius) { // clip to the disk
                next[i][0] *= radius / r;
                next[i][1] *= radius / r;
            }
        }
        kp.positions = std::move(next);
    }
    return kp;
}

std::vector<double> influence(const KernelPointSet& kernel, double ox, double oy) {
    std::vector<double> h(kernel.positions.size());
    for (size_t k = 0; k < kernel.positions.size(); ++k) {
        const double dx = ox - kernel.positions[k][0];
        const double dy = oy - kernel.positions[k][1];
        const double d = std::hypot(dx, dy);
        h[k] = std::max(0.0, 1.0 - d / kernel.influence_sigma);
    }
    return h;
}

void KPConv::init(const std::string& name_, const KernelPointSet& k, int c_in, int c_out, Rng& rng) {
    name = name_;
    m = c_in;
    n = c_out;
    const int fan_in = c_in * k.count();
    W = init_param(name_ + ".W", {k.count(), c_out, c_in}, fan_in, rng);
    b = init_param(name_ + ".b", {c_out}, fan_in, rng);
    pos = Parameter(name_ + ".kernel_positions", {k.count(), 2});
    pos.frozen = true;
    set_kernel(k);
}

void KPConv::set_kernel(const KernelPointSet& k) {
    kernel = k;
    for (int kk = 0; kk < k.count(); ++kk) {
        pos.w[size_t(kk) * 2 + 0] = k.positions[kk][0];
        pos.w[size_t(kk) * 2 + 1] = k.positions[kk][1];
    }
}

Tensor KPConv::forward(const std::vector<double>& ref_x, const std::vector<double>& ref_y,
                       const std::vector<double>& sup_x, const std::vector<double>& sup_y,
                       const Tensor& sup_feats, const std::vector<std::vector<int>>& neighbors) {
    const int M = int(ref_x.size());
    check(int(ref_y.size()) == M && int(neighbors.size()) == M, "kpconv: reference size mismatch");
    check(sup_feats.rows == int(sup_x.size()) && sup_feats.cols == m, "kpconv: support shape mismatch");
    const auto t0 = std::chrono::steady_clock::now();

    const int K = kernel.count();
    for (int kk = 0; kk < K; ++kk) {
        kernel.positions[kk][0] = pos.w[size_t(kk) * 2 + 0];
        kernel.positions[kk][1] = pos.w[size_t(kk) * 2 + 1];
    }
    const double r_tol = kernel.radius + 1e-9;
    Tensor out(M, n);
    int64_t macs = 0, pair_count = 0;
    bool out_of_radius = false; // checked after the loop; throwing inside an omp region is UB
#pragma omp parallel for reduction(+ : macs, pair_count) reduction(|| : out_of_radius) if (M > 32)
    for (int r = 0; r < M; ++r) {
        double* fout = out.row(r);
        for (int o = 0; o < n; ++o) fout[o] = b.w[o];
        for (int nbr : neighbors[r]) {
            const double ox = sup_x[nbr] - ref_x[r];
            const double oy = sup_y[nbr] - ref_y[r];
            if (std::hypot(ox, oy) > r_tol) {
                out_of_radius = true;
                continue;
            }
            ++pair_count;
            const double* fin = sup_feats.row(nbr);
            for (int k = 0; k < K; ++k) {
                const double dx = ox - kernel.positions[k][0];
                const double dy = oy - kernel.positions[k][1];
                const double h = 1.0 - std::hypot(dx, dy) / kernel.influence_sigma;
                if (h <= 0.0) continue;
                macs += int64_t(m) * n;
                const double* wk = &W.w[size_t(k) * n * m];
                for (int o = 0; o < n; ++o) {
                    const double* w_row = wk + size_t(o) * m;
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += w_row[i] * fin[i];
                    fout[o] += h * acc;
                }
            }
        }
    }

    if (out_of_radius)
        throw std::invalid_argument("kpconv: neighbor outside the convolution radius");

    last_ref_x = ref_x;
    last_ref_y = ref_y;
    last_sup_x = sup_x;
    last_sup_y = sup_y;
    last_neighbors = neighbors;
    last_sup = sup_feats;
    last_pairs = pair_count;
    last_macs = macs;
    last_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

Tensor KPConv::backward(const Tensor& dout) {
    const int M = int(last_ref_x.size());
    check(dout.rows == M && dout.cols == n, "kpconv backward: grad shape mismatch");
    const int K = kernel.count();
    Tensor dsup(last_sup.rows, m);
    for (int r = 0; r < M; ++r) {
        const double* dup = dout.row(r);
        for (int o = 0; o < n; ++o) b.g[o] += dup[o];
        for (int nbr : last_neighbors[r]) {
            const double ox = last_sup_x[nbr] - last_ref_x[r];
            const double oy = last_sup_y[nbr] - last_ref_y[r];
            const double* fin = last_sup.row(nbr);
            double* dn = dsup.row(nbr);
            for (int k = 0; k < K; ++k) {
                const double dx = ox - kernel.positions[k][0];
                const double dy = oy - kernel.positions[k][1];
                const double h = 1.0 - std::hypot(dx, dy) / kernel.influence_sigma;
                if (h <= 0.0) continue;
                const double* wk = &W.w[size_t(k) * n * m];
                double* gk = &W.g[size_t(k) * n * m];
                for (int o = 0; o < n; ++o) {
                    const double d = h * dup[o];
                    if (d == 0.0) continue;
                    const double* w_row = wk + size_t(o) * m;
                    double* g_row = gk + size_t(o) * m;
                    for (int i = 0; i < m; ++i) {
                        g_row[i] += d * fin[i];
                        dn[i] += d * w_row[i];
                    }
                }
            }
        }
    }
    return dsup;
}

SparseGrid KPConv::forward_on_grid(const SparseGrid& g) {
    check(g.channels == m, "kpconv on grid: channel mismatch");
    const CellPoints cp = cells_as_points(g);
    std::vector<std::vector<int>> neighbors(cp.x.size());
    if (!cp.x.empty()) {
        NeighborIndex index(cp.x, cp.y, kernel.radius);
        for (size_t r = 0; r < cp.x.size(); ++r) neighbors[r] = index.query(cp.x[r], cp.y[r]);
    }
    SparseGrid out;
    out.spec = g.spec;
    out.channels = n;
    out.active = g.active;
    out.feats = forward(cp.x, cp.y, cp.x, cp.y, g.feats, neighbors);
    return out;
}

} // namespace skpp

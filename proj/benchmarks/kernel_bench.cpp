// Compares the OpenMP gather/scatter kernels against their serial reference
// implementations (dense oracle, brute-force neighbor scan) and against a
// single-thread run of the same kernel.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "skpp/kpconv.hpp"
#include "skpp/points.hpp"
#include "skpp/rng.hpp"
#include "skpp/sparse_conv.hpp"

using namespace skpp;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

SparseGrid random_grid(const GridSpec& spec, double density, int channels, uint64_t seed) {
    Rng rng(seed);
    std::vector<CellIndex> active;
    for (int i = 0; i < spec.nx(); ++i)
        for (int j = 0; j < spec.ny(); ++j)
            if (rng.uniform() < density) active.push_back({i, j});
    SparseGrid g = make_sparse_grid(spec, std::move(active), channels);
    for (auto& v : g.feats.v) v = rng.uniform(-2.0, 2.0);
    return g;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_ms();
        fn();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

void bench_ssc(int n, double density, int channels, int reps) {
    GridSpec spec{0, double(n), 0, double(n), 1.0};
    const SparseGrid g = random_grid(spec, density, channels, 42);
    Rng rng(7);
    SparseConv layer;
    layer.init("ssc", {channels, channels, 3, 1}, rng);

    SparseGrid out_mt, out_st;
    set_threads(max_threads());
    const double mt = time_best_of(reps, [&] { out_mt = ssc_forward(layer, g); });
    set_threads(1);
    const double st = time_best_of(reps, [&] { out_st = ssc_forward(layer, g); });
    set_threads(max_threads());

    DenseGrid ref;
    const DenseGrid dense_in = to_dense(g);
    const double serial = time_best_of(reps, [&] {
        ref = dense_conv_oracle(dense_in, layer.W, layer.b, layer.spec);
    });

    double worst = 0;
    for (int s = 0; s < out_mt.size(); ++s)
        for (int c = 0; c < channels; ++c)
            worst = std::max(worst, std::abs(out_mt.feats.at(s, c) -
                                             ref.at(out_mt.active[s].i, out_mt.active[s].j, c)));
    const bool identical = out_mt.feats.v == out_st.feats.v;
    std::printf("ssc   %4dx%-4d d=%.2f c=%-3d | omp %8.2f ms | 1thr %8.2f ms | dense ref %8.2f ms | "
                "macs %9lld | vs-ref %.1e | thread-identical %s\n",
                n, n, density, channels, mt, st, serial, (long long)layer.last_macs, worst,
                identical ? "yes" : "NO");
}

void bench_kpconv(int n, double density, int channels, int reps) {
    GridSpec spec{0, double(n) * 0.5, 0, double(n) * 0.5, 0.5};
    const SparseGrid g = random_grid(spec, density, channels, 43);
    Rng rng(8);
    KPConv layer;
    layer.init("kp", place_kernel_points(15, 3.75, 9), channels, channels, rng);

    SparseGrid out_mt, out_st;
    set_threads(max_threads());
    const double mt = time_best_of(reps, [&] { out_mt = layer.forward_on_grid(g); });
    set_threads(1);
    const double st = time_best_of(reps, [&] { out_st = layer.forward_on_grid(g); });
    set_threads(max_threads());

    const bool identical = out_mt.feats.v == out_st.feats.v;
    std::printf("kp    %4dx%-4d d=%.2f c=%-3d | omp %8.2f ms | 1thr %8.2f ms | pairs %9lld | "
                "macs %9lld | thread-identical %s\n",
                n, n, density, channels, mt, st, (long long)layer.last_pairs,
                (long long)layer.last_macs, identical ? "yes" : "NO");
}

void bench_neighbors(int points, int queries, int reps) {
    Rng rng(11);
    PointCloud cloud;
    for (int i = 0; i < points; ++i)
        cloud.points.push_back({rng.uniform(-60, 60), rng.uniform(-60, 60), 0, 0});
    std::vector<double> qx(queries), qy(queries);
    for (int q = 0; q < queries; ++q) {
        qx[q] = rng.uniform(-60, 60);
        qy[q] = rng.uniform(-60, 60);
    }
    const double radius = 1.5;

    size_t hash_total = 0, brute_total = 0;
    const double hash_ms = time_best_of(reps, [&] {
        hash_total = 0;
        NeighborIndex index(cloud, radius);
        for (int q = 0; q < queries; ++q) hash_total += index.query(qx[q], qy[q]).size();
    });
    const double brute_ms = time_best_of(reps, [&] {
        brute_total = 0;
        for (int q = 0; q < queries; ++q)
            brute_total += brute_force_neighbors(cloud, qx[q], qy[q], radius).size();
    });
    std::printf("nbrs  %6d pts %5d queries     | hash %7.2f ms | scan ref %8.2f ms | agree %s\n",
                points, queries, hash_ms, brute_ms, hash_total == brute_total ? "yes" : "NO");
}

} // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::stoi(argv[1]) : 3;
    std::printf("threads available: %d, repetitions per row: %d (best-of)\n\n", max_threads(), reps);

    for (double d : {0.01, 0.05, 0.2}) bench_ssc(128, d, 32, reps);
    bench_ssc(64, 0.1, 64, reps);
    std::printf("\n");
    for (double d : {0.01, 0.05}) bench_kpconv(128, d, 32, reps);
    std::printf("\n");
    bench_neighbors(20000, 2000, reps);
    return 0;
}

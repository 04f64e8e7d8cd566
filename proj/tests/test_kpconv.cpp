#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "skpp/kpconv.hpp"
#include "skpp/points.hpp"
#include "skpp/rng.hpp"

using namespace skpp;

namespace {

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

double sumsq(const Tensor& t) {
    double l = 0;
    for (double v : t.v) l += 0.5 * v * v;
    return l;
}

} // namespace

TEST_CASE("place_kernel_points layout") {
    const KernelPointSet k1 = place_kernel_points(1, 2.0, 5);
    REQUIRE(k1.count() == 1);
    CHECK(k1.positions[0][0] == 0.0);
    CHECK(k1.positions[0][1] == 0.0);

    const KernelPointSet k15 = place_kernel_points(15, 1.5, 5);
    REQUIRE(k15.count() == 15);
    CHECK(k15.positions[0][0] == 0.0);
    double min_pair = 1e9;
    for (int i = 0; i < 15; ++i) {
        CHECK(std::hypot(k15.positions[i][0], k15.positions[i][1]) <= 1.5 + 1e-12);
        for (int j = i + 1; j < 15; ++j)
            min_pair = std::min(min_pair, std::hypot(k15.positions[i][0] - k15.positions[j][0],
                                                     k15.positions[i][1] - k15.positions[j][1]));
    }
    CHECK(min_pair > 0.2);

    const KernelPointSet again = place_kernel_points(15, 1.5, 5);
    CHECK(again.positions == k15.positions);
    const KernelPointSet other = place_kernel_points(15, 1.5, 6);
    CHECK(other.positions != k15.positions);
}

TEST_CASE("influence linear ramp") {
    KernelPointSet k;
    k.radius = 2.0;
    k.influence_sigma = 1.0;
    k.positions = {{0.0, 0.0}, {1.0, 0.0}};

    const auto at_kp = influence(k, 1.0, 0.0);
    CHECK(at_kp[1] == doctest::Approx(1.0));
    const auto far = influence(k, -1.5, 1.5);
    CHECK(far[0] == 0.0);
    CHECK(far[1] == 0.0);
    const auto mid = influence(k, 0.5, 0.0);
    CHECK(mid[0] == doctest::Approx(0.5));
    CHECK(mid[1] == doctest::Approx(0.5));
}

TEST_CASE("kpconv single kernel point at the reference") {
    Rng rng(1);
    KernelPointSet k;
    k.radius = 1.0;
    k.influence_sigma = 1.0;
    k.positions = {{0.0, 0.0}};
    KPConv layer;
    layer.init("kp", k, 2, 3, rng);

    Tensor sup(1, 2);
    sup.at(0, 0) = 0.7;
    sup.at(0, 1) = -0.3;
    const Tensor out = layer.forward({1.0}, {2.0}, {1.0}, {2.0}, sup, {{0}});
    for (int o = 0; o < 3; ++o) {
        double want = layer.b.w[o];
        for (int i = 0; i < 2; ++i) want += layer.W.w[size_t(o) * 2 + i] * sup.at(0, i);
        CHECK(out.at(0, o) == doctest::Approx(want).epsilon(1e-12));
    }

    SUBCASE("empty neighborhood outputs the bias") {
        const Tensor out2 = layer.forward({5.0}, {5.0}, {1.0}, {2.0}, sup, {{}});
        for (int o = 0; o < 3; ++o) CHECK(out2.at(0, o) == layer.b.w[o]);
    }

    SUBCASE("neighbor outside the radius is rejected") {
        CHECK_THROWS_AS(layer.forward({0.0}, {0.0}, {3.0}, {0.0}, sup, {{0}}), std::invalid_argument);
    }
}

TEST_CASE("kpconv gradient check for weights, bias and support features") {
    Rng rng(2);
    const KernelPointSet k = place_kernel_points(15, 1.5, 3);
    KPConv layer;
    layer.init("kp", k, 3, 2, rng);

    const int M = 6, N = 40;
    Rng prng(4);
    std::vector<double> rx(M), ry(M), sx(N), sy(N);
    for (int r = 0; r < M; ++r) {
        rx[r] = prng.uniform(-3, 3);
        ry[r] = prng.uniform(-3, 3);
    }
    for (int i = 0; i < N; ++i) {
        sx[i] = prng.uniform(-4, 4);
        sy[i] = prng.uniform(-4, 4);
    }
    Tensor sup(N, 3);
    for (auto& v : sup.v) v = prng.uniform(-1, 1);
    std::vector<std::vector<int>> neighbors(M);
    for (int r = 0; r < M; ++r)
        for (int i = 0; i < N; ++i)
            if (std::hypot(sx[i] - rx[r], sy[i] - ry[r]) <= k.radius) neighbors[r].push_back(i);

    std::vector<Parameter*> params;
    layer.params(params);
    auto loss = [&](bool with_grad) {
        const Tensor y = layer.forward(rx, ry, sx, sy, sup, neighbors);
        if (with_grad) layer.backward(y);
        return sumsq(y);
    };
    const GradCheckReport rep = grad_check(loss, params, 1e-5);
    CHECK(rep.pass);

    // support feature gradients against central differences
    loss(true);
    const Tensor y0 = layer.forward(rx, ry, sx, sy, sup, neighbors);
    const Tensor dsup = layer.backward(y0);
    const double h = 1e-6;
    for (int probe = 0; probe < 12; ++probe) {
        Rng r2(50 + probe);
        const int i = r2.uniform_int(0, N - 1);
        const int c = r2.uniform_int(0, 2);
        const double saved = sup.at(i, c);
        sup.at(i, c) = saved + h;
        const double fp = sumsq(layer.forward(rx, ry, sx, sy, sup, neighbors));
        sup.at(i, c) = saved - h;
        const double fm = sumsq(layer.forward(rx, ry, sx, sy, sup, neighbors));
        sup.at(i, c) = saved;
        const double numeric = (fp - fm) / (2 * h);
        const double rel = std::abs(dsup.at(i, c) - numeric) /
                           std::max({std::abs(numeric), std::abs(dsup.at(i, c)), 1e-8});
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("kpconv permutation and translation invariance") {
    Rng rng(5);
    const KernelPointSet k = place_kernel_points(9, 2.0, 6);
    KPConv layer;
    layer.init("kp", k, 2, 2, rng);

    Rng prng(6);
    const int N = 20;
    std::vector<double> sx(N), sy(N);
    for (int i = 0; i < N; ++i) {
        sx[i] = prng.uniform(-1.5, 1.5);
        sy[i] = prng.uniform(-1.5, 1.5);
    }
    Tensor sup(N, 2);
    for (auto& v : sup.v) v = prng.uniform(-1, 1);
    std::vector<int> nbr(N);
    for (int i = 0; i < N; ++i) nbr[i] = i;

    const Tensor base = layer.forward({0.0}, {0.0}, sx, sy, sup, {nbr});

    std::vector<int> shuffled = nbr;
    std::reverse(shuffled.begin(), shuffled.end());
    const Tensor perm = layer.forward({0.0}, {0.0}, sx, sy, sup, {shuffled});
    for (size_t i = 0; i < base.v.size(); ++i)
        CHECK(perm.v[i] == doctest::Approx(base.v[i]).epsilon(1e-12));

    std::vector<double> tx = sx, ty = sy;
    for (auto& v : tx) v += 37.25;
    for (auto& v : ty) v -= 11.5;
    const Tensor moved = layer.forward({37.25}, {-11.5}, tx, ty, sup, {nbr});
    for (size_t i = 0; i < base.v.size(); ++i)
        CHECK(moved.v[i] == doctest::Approx(base.v[i]).epsilon(1e-9));
}

TEST_CASE("kpconv on grid keeps the active set and is local") {
    GridSpec spec{-8, 8, -8, 8, 1.0};
    Rng rng(7);
    const KernelPointSet k = place_kernel_points(9, 2.5, 8);

    SUBCASE("single active cell sees only itself through the center point") {
        KPConv layer;
        layer.init("kp", k, 2, 3, rng);
        SparseGrid g = make_sparse_grid(spec, {{4, 4}}, 2);
        g.feats.at(0, 0) = 0.5;
        g.feats.at(0, 1) = -1.5;
        const SparseGrid y = layer.forward_on_grid(g);
        CHECK(y.active == g.active);
        // only kernel points within influence_sigma of offset zero contribute
        const auto h = influence(k, 0.0, 0.0);
        for (int o = 0; o < 3; ++o) {
            double want = layer.b.w[o];
            for (int kk = 0; kk < k.count(); ++kk) {
                if (h[kk] <= 0) continue;
                for (int i = 0; i < 2; ++i)
                    want += h[kk] * layer.W.w[(size_t(kk) * 3 + o) * 2 + i] * g.feats.at(0, i);
            }
            CHECK(y.feats.at(0, o) == doctest::Approx(want).epsilon(1e-12));
        }
    }

    SUBCASE("cells farther apart than the radius are independent") {
        KPConv layer;
        layer.init("kp", k, 1, 1, rng);
        SparseGrid g = make_sparse_grid(spec, {{1, 1}, {14, 14}}, 1);
        g.feats.at(0, 0) = 1.0;
        g.feats.at(1, 0) = 2.0;
        const SparseGrid ya = layer.forward_on_grid(g);
        g.feats.at(1, 0) = -9.0;
        const SparseGrid yb = layer.forward_on_grid(g);
        CHECK(ya.feats.at(0, 0) == yb.feats.at(0, 0));
        CHECK(ya.feats.at(1, 0) != yb.feats.at(1, 0));
    }

    SUBCASE("matches kpconv_forward on the explicit duality point cloud") {
        KPConv layer;
        layer.init("kp", k, 2, 2, rng);
        const SparseGrid g = random_grid(spec, 0.15, 2, 9);
        const SparseGrid y = layer.forward_on_grid(g);

        const CellPoints cp = cells_as_points(g);
        std::vector<std::vector<int>> neighbors(cp.x.size());
        for (size_t r = 0; r < cp.x.size(); ++r)
            for (size_t i = 0; i < cp.x.size(); ++i)
                if (std::hypot(cp.x[i] - cp.x[r], cp.y[i] - cp.y[r]) <= k.radius)
                    neighbors[r].push_back(int(i));
        KPConv ref = layer;
        const Tensor want = ref.forward(cp.x, cp.y, cp.x, cp.y, g.feats, neighbors);
        REQUIRE(want.same_shape(y.feats));
        for (size_t i = 0; i < want.v.size(); ++i)
            CHECK(y.feats.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
    }
}

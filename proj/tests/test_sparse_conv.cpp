#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "skpp/rng.hpp"
#include "skpp/sparse_conv.hpp"

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

// brute-force rulebook: double loop over output cells and offsets
std::map<std::pair<int, int>, std::set<std::pair<int, int>>> brute_rulebook_pairs(
    const GridSpec& spec, const std::vector<CellIndex>& active, int f) {
    std::map<std::pair<int, int>, std::set<std::pair<int, int>>> out;
    auto slot_of = [&](const CellIndex& c) {
        const auto it = std::lower_bound(active.begin(), active.end(), c);
        return (it != active.end() && *it == c) ? int(it - active.begin()) : -1;
    };
    const int h = f / 2;
    for (size_t b = 0; b < active.size(); ++b) {
        for (int di = -h; di <= h; ++di) {
            for (int dj = -h; dj <= h; ++dj) {
                const CellIndex a{active[b].i + di, active[b].j + dj};
                if (a.i < 0 || a.i >= spec.nx() || a.j < 0 || a.j >= spec.ny()) continue;
                const int as = slot_of(a);
                if (as >= 0) out[{di, dj}].insert({as, int(b)});
            }
        }
    }
    return out;
}

// independent hand-unrolled dense conv used to validate the oracle itself
DenseGrid slow_dense_conv(const DenseGrid& in, const Parameter& W, const Parameter& b,
                          const ConvSpec& spec) {
    DenseGrid out(in.spec.coarser(spec.s), spec.n);
    const int h = spec.f / 2;
    const bool odd = spec.f % 2 == 1;
    for (int oi = 0; oi < out.spec.nx(); ++oi)
        for (int oj = 0; oj < out.spec.ny(); ++oj)
            for (int o = 0; o < spec.n; ++o) {
                double acc = b.w[o];
                int k = 0;
                for (int di = odd ? -h : 0; di <= (odd ? h : spec.f - 1); ++di)
                    for (int dj = odd ? -h : 0; dj <= (odd ? h : spec.f - 1); ++dj, ++k) {
                        const int ii = oi * spec.s + di, jj = oj * spec.s + dj;
                        if (ii < 0 || ii >= in.spec.nx() || jj < 0 || jj >= in.spec.ny()) continue;
                        for (int i = 0; i < spec.m; ++i)
                            acc += W.w[(size_t(k) * spec.n + o) * spec.m + i] * in.at(ii, jj, i);
                    }
                out.at(oi, oj, o) = acc;
            }
    return out;
}

SparseConv make_layer(const ConvSpec& spec, uint64_t seed) {
    Rng rng(seed);
    SparseConv layer;
    layer.init("conv", spec, rng);
    return layer;
}

double sumsq(const Tensor& t) {
    double l = 0;
    for (double v : t.v) l += 0.5 * v * v;
    return l;
}

} // namespace

TEST_CASE("rulebook submanifold singleton and pairs") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    const auto rb = build_rulebook(spec, {{3, 3}}, {1, 1, 3, 1}, ConvMode::submanifold);
    CHECK(rb.out_active == std::vector<CellIndex>{{3, 3}});
    CHECK(rb.pair_count() == 1);
    // the one pair sits at offset (0,0)
    for (size_t k = 0; k < rb.offsets.size(); ++k) {
        if (rb.offsets[k] == std::pair<int, int>{0, 0}) {
            CHECK(rb.pairs[k].size() == 1);
        } else {
            CHECK(rb.pairs[k].empty());
        }
    }

    const auto rb2 = build_rulebook(spec, {{3, 3}, {4, 4}}, {1, 1, 3, 1}, ConvMode::submanifold);
    CHECK(rb2.pair_count() == 4); // self + neighbor for each output
}

TEST_CASE("rulebook matches the brute-force oracle") {
    GridSpec spec{0, 32, 0, 32, 1.0};
    for (uint64_t seed : {4u, 5u, 6u}) {
        const SparseGrid g = random_grid(spec, 0.12, 1, seed);
        const auto rb = build_rulebook(spec, g.active, {1, 1, 3, 1}, ConvMode::submanifold);
        const auto want = brute_rulebook_pairs(spec, g.active, 3);
        int64_t want_count = 0;
        for (const auto& [off, pairs] : want) want_count += int64_t(pairs.size());
        CHECK(rb.pair_count() == want_count);
        for (size_t k = 0; k < rb.offsets.size(); ++k) {
            std::set<std::pair<int, int>> got(rb.pairs[k].begin(), rb.pairs[k].end());
            auto it = want.find(rb.offsets[k]);
            const std::set<std::pair<int, int>> expect =
                it == want.end() ? std::set<std::pair<int, int>>{} : it->second;
            CHECK(got == expect);
        }
    }
}

TEST_CASE("ssc identity kernel and locality") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    SparseConv layer = make_layer({2, 2, 3, 1}, 1);
    std::fill(layer.W.w.begin(), layer.W.w.end(), 0.0);
    std::fill(layer.b.w.begin(), layer.b.w.end(), 0.0);
    const int center = 4; // offset (0,0) of the 3x3 kernel
    layer.W.w[(size_t(center) * 2 + 0) * 2 + 0] = 1.0;
    layer.W.w[(size_t(center) * 2 + 1) * 2 + 1] = 1.0;

    SparseGrid g = random_grid(spec, 0.4, 2, 3);
    const SparseGrid y = ssc_forward(layer, g);
    CHECK(y.active == g.active);
    for (size_t k = 0; k < g.feats.v.size(); ++k) CHECK(y.feats.v[k] == doctest::Approx(g.feats.v[k]));

    SUBCASE("spatially disconnected features do not mix") {
        SparseConv full = make_layer({1, 1, 3, 1}, 9);
        SparseGrid two = make_sparse_grid(spec, {{1, 1}, {6, 6}}, 1);
        two.feats.at(0, 0) = 1.0;
        two.feats.at(1, 0) = 100.0;
        const SparseGrid ya = ssc_forward(full, two);
        two.feats.at(1, 0) = -100.0; // changing the far cell leaves the near output alone
        const SparseGrid yb = ssc_forward(full, two);
        const int slot = ya.find({1, 1});
        CHECK(ya.feats.at(slot, 0) == yb.feats.at(slot, 0));
    }
}

TEST_CASE("ssc equals the dense oracle at active sites") {
    GridSpec spec{0, 16, 0, 16, 1.0};
    for (uint64_t seed : {10u, 11u, 12u}) {
        const SparseGrid g = random_grid(spec, 0.2, 3, seed);
        SparseConv layer = make_layer({3, 4, 3, 1}, seed + 100);
        const SparseGrid y = ssc_forward(layer, g);
        const DenseGrid want = dense_conv_oracle(to_dense(g), layer.W, layer.b, layer.spec);
        CHECK(y.active == g.active);
        for (int s = 0; s < y.size(); ++s)
            for (int c = 0; c < 4; ++c) {
                const double w = want.at(y.active[s].i, y.active[s].j, c);
                CHECK(y.feats.at(s, c) == doctest::Approx(w).epsilon(1e-10));
            }
    }
}

TEST_CASE("sc dilation and striding") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    SparseConv dil = make_layer({1, 1, 3, 1}, 2);
    SparseGrid g = make_sparse_grid(spec, {{4, 4}}, 1);
    g.feats.at(0, 0) = 1.0;
    const SparseGrid y = sc_forward(dil, g);
    CHECK(y.size() == 9);

    SparseConv stride = make_layer({1, 1, 2, 2}, 3);
    SparseGrid h = make_sparse_grid(spec, {{5, 7}}, 1);
    h.feats.at(0, 0) = 1.0;
    const SparseGrid z = sc_forward(stride, h);
    CHECK(z.active == std::vector<CellIndex>{{2, 3}});
    CHECK(z.spec.cell_size == 2.0);

    SparseConv bad = make_layer({1, 1, 2, 2}, 4);
    SparseGrid odd = make_sparse_grid({0, 7, 0, 7, 1.0}, {{0, 0}}, 1);
    CHECK_THROWS_AS(sc_forward(bad, odd), std::invalid_argument);
}

TEST_CASE("sc equals the dense strided oracle on occupied footprints") {
    for (auto [f, s] : std::vector<std::pair<int, int>>{{2, 2}, {3, 2}, {3, 1}}) {
        GridSpec spec{0, 16, 0, 16, 1.0};
        const SparseGrid g = random_grid(spec, 0.25, 2, 20 + f * 10 + s);
        SparseConv layer = make_layer({2, 3, f, s}, 30 + f);
        const SparseGrid y = sc_forward(layer, g);
        const DenseGrid want = dense_conv_oracle(to_dense(g), layer.W, layer.b, layer.spec);
        for (int slot = 0; slot < y.size(); ++slot)
            for (int c = 0; c < 3; ++c)
                CHECK(y.feats.at(slot, c) ==
                      doctest::Approx(want.at(y.active[slot].i, y.active[slot].j, c)).epsilon(1e-10));
        // inactive output sites have empty footprints: dense value is the bias
        std::set<CellIndex> active_out(y.active.begin(), y.active.end());
        for (int i = 0; i < want.spec.nx(); ++i)
            for (int j = 0; j < want.spec.ny(); ++j) {
                if (active_out.count({i, j})) continue;
                for (int c = 0; c < 3; ++c)
                    CHECK(want.at(i, j, c) == doctest::Approx(layer.b.w[c]).epsilon(1e-12));
            }
    }
}

TEST_CASE("dc restores the active set and copies weighted features") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    const SparseGrid g = random_grid(spec, 0.3, 2, 40);
    SparseConv down = make_layer({2, 3, 2, 2}, 41);
    const SparseGrid coarse = sc_forward(down, g);
    SparseConv up = make_layer({3, 2, 2, 2}, 42);
    const SparseGrid fine = dc_forward(up, coarse, g.active);
    CHECK(fine.active == g.active);
    CHECK(fine.spec == g.spec);

    SUBCASE("single coarse cell copies to all reference children") {
        SparseGrid three = make_sparse_grid(spec, {{0, 0}, {0, 1}, {1, 1}}, 1);
        for (int s = 0; s < 3; ++s) three.feats.at(s, 0) = 1.0;
        SparseConv d2 = make_layer({1, 1, 2, 2}, 43);
        const SparseGrid c2 = sc_forward(d2, three);
        REQUIRE(c2.size() == 1);
        SparseConv u2 = make_layer({1, 1, 2, 2}, 44);
        const SparseGrid f2 = dc_forward(u2, c2, three.active);
        REQUIRE(f2.size() == 3);
        // out[a] = b + W_off * coarse_feat, offset chosen by the child position
        for (int s = 0; s < 3; ++s) {
            const auto& cidx = f2.active[s];
            const int di = cidx.i - 0, dj = cidx.j - 0; // coarse cell (0,0), stride 2
            const int k = di * 2 + dj;
            const double expect = u2.b.w[0] + u2.W.w[size_t(k)] * c2.feats.at(0, 0);
            CHECK(f2.feats.at(s, 0) == doctest::Approx(expect));
        }
    }

    SUBCASE("mismatched or missing reference is rejected") {
        SparseGrid one = make_sparse_grid(spec, {{0, 0}}, 1);
        one.feats.at(0, 0) = 1.0;
        SparseConv d3 = make_layer({1, 1, 2, 2}, 45);
        const SparseGrid c3 = sc_forward(d3, one);
        SparseConv u3 = make_layer({1, 1, 2, 2}, 46);
        const std::vector<CellIndex> wrong = {{0, 0}, {6, 6}}; // (6,6) pools to an absent coarse cell
        CHECK_THROWS_AS(dc_forward(u3, c3, wrong), std::invalid_argument);
        CHECK_THROWS_AS(u3.forward(c3, ConvMode::deconv, nullptr, nullptr), std::invalid_argument);
    }
}

TEST_CASE("dc equals the transposed dense SC matrix on small grids") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    const SparseGrid g = random_grid(spec, 0.3, 2, 50);
    SparseConv down = make_layer({2, 3, 2, 2}, 51);
    SparseGrid coarse = sc_forward(down, g);
    Rng rng(52);
    for (auto& v : coarse.feats.v) v = rng.uniform(-1, 1);

    SparseConv up = make_layer({3, 2, 2, 2}, 53);
    const SparseGrid fine = dc_forward(up, coarse, g.active);

    // dense matrix of the SC with weights W_k^T, then transposed
    const int fx = spec.nx(), fy = spec.ny();
    const GridSpec cspec = coarse.spec;
    const int cx = cspec.nx(), cy = cspec.ny();
    const int m_up = 3, n_up = 2; // DC maps 3 -> 2
    std::vector<double> sc_mat(size_t(cx) * cy * m_up * fx * fy * n_up, 0.0);
    auto sc_at = [&](int ci, int cj, int co, int fi, int fj, int fo) -> double& {
        const size_t row = (size_t(ci) * cy + cj) * m_up + co;
        const size_t col = (size_t(fi) * fy + fj) * n_up + fo;
        return sc_mat[row * (size_t(fx) * fy * n_up) + col];
    };
    const auto offsets = kernel_offsets(2);
    for (int ci = 0; ci < cx; ++ci)
        for (int cj = 0; cj < cy; ++cj)
            for (size_t k = 0; k < offsets.size(); ++k) {
                const int fi = ci * 2 + offsets[k].first, fj = cj * 2 + offsets[k].second;
                if (fi >= fx || fj >= fy) continue;
                // SC weights are up.W transposed: V_k[co][fo] = W_k[fo][co]
                for (int co = 0; co < m_up; ++co)
                    for (int fo = 0; fo < n_up; ++fo)
                        sc_at(ci, cj, co, fi, fj, fo) = up.W.w[(size_t(k) * n_up + fo) * m_up + co];
            }
    // apply the transpose to the dense coarse features, mask to the reference set
    const DenseGrid dc_in = to_dense(coarse);
    for (int s = 0; s < fine.size(); ++s) {
        const int fi = fine.active[s].i, fj = fine.active[s].j;
        for (int fo = 0; fo < n_up; ++fo) {
            double acc = up.b.w[fo];
            for (int ci = 0; ci < cx; ++ci)
                for (int cj = 0; cj < cy; ++cj)
                    for (int co = 0; co < m_up; ++co)
                        acc += sc_at(ci, cj, co, fi, fj, fo) * dc_in.at(ci, cj, co);
            CHECK(fine.feats.at(s, fo) == doctest::Approx(acc).epsilon(1e-10));
        }
    }
}

TEST_CASE("dense oracle sanity") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    SUBCASE("identity kernel reproduces the input") {
        SparseConv layer = make_layer({1, 1, 3, 1}, 60);
        std::fill(layer.W.w.begin(), layer.W.w.end(), 0.0);
        layer.W.w[4] = 1.0;
        layer.b.w[0] = 0.0;
        const SparseGrid g = random_grid(spec, 0.5, 1, 61);
        const DenseGrid d = to_dense(g);
        const DenseGrid y = dense_conv_oracle(d, layer.W, layer.b, layer.spec);
        CHECK(y.v == d.v);
    }
    SUBCASE("all-ones 3x3 kernel on a one-hot input") {
        SparseConv layer = make_layer({1, 1, 3, 1}, 62);
        std::fill(layer.W.w.begin(), layer.W.w.end(), 1.0);
        layer.b.w[0] = 0.0;
        DenseGrid d(spec, 1);
        d.at(4, 4, 0) = 1.0;
        const DenseGrid y = dense_conv_oracle(d, layer.W, layer.b, layer.spec);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(y.at(i, j, 0) == ((std::abs(i - 4) <= 1 && std::abs(j - 4) <= 1) ? 1.0 : 0.0));
    }
    SUBCASE("random strided conv matches the hand-unrolled loop") {
        SparseConv layer = make_layer({2, 3, 3, 2}, 63);
        const SparseGrid g = random_grid(spec, 0.7, 2, 64);
        const DenseGrid d = to_dense(g);
        const DenseGrid a = dense_conv_oracle(d, layer.W, layer.b, layer.spec);
        const DenseGrid b = slow_dense_conv(d, layer.W, layer.b, layer.spec);
        REQUIRE(a.v.size() == b.v.size());
        for (size_t k = 0; k < a.v.size(); ++k) CHECK(a.v[k] == doctest::Approx(b.v[k]).epsilon(1e-12));
    }
}

TEST_CASE("conv gradient checks") {
    GridSpec spec{0, 8, 0, 8, 1.0};
    const SparseGrid g = random_grid(spec, 0.35, 2, 70);

    SUBCASE("ssc") {
        SparseConv layer = make_layer({2, 3, 3, 1}, 71);
        std::vector<Parameter*> params;
        layer.params(params);
        auto loss = [&](bool with_grad) {
            const SparseGrid y = ssc_forward(layer, g);
            if (with_grad) layer.backward(y.feats);
            return sumsq(y.feats);
        };
        CHECK(grad_check(loss, params, 1e-5).pass);
    }
    SUBCASE("sc strided") {
        SparseConv layer = make_layer({2, 3, 2, 2}, 72);
        std::vector<Parameter*> params;
        layer.params(params);
        auto loss = [&](bool with_grad) {
            const SparseGrid y = sc_forward(layer, g);
            if (with_grad) layer.backward(y.feats);
            return sumsq(y.feats);
        };
        CHECK(grad_check(loss, params, 1e-5).pass);
    }
    SUBCASE("dc") {
        SparseConv down = make_layer({2, 3, 2, 2}, 73);
        const SparseGrid coarse = sc_forward(down, g);
        SparseConv up = make_layer({3, 2, 2, 2}, 74);
        std::vector<Parameter*> params;
        up.params(params);
        auto loss = [&](bool with_grad) {
            const SparseGrid y = dc_forward(up, coarse, g.active);
            if (with_grad) up.backward(y.feats);
            return sumsq(y.feats);
        };
        CHECK(grad_check(loss, params, 1e-5).pass);
    }
    SUBCASE("input gradients via finite differences") {
        SparseConv layer = make_layer({2, 2, 3, 1}, 75);
        SparseGrid x = g;
        const SparseGrid y0 = ssc_forward(layer, x);
        const Tensor dx = layer.backward(y0.feats);
        const double h = 1e-6;
        for (int probe = 0; probe < 10; ++probe) {
            Rng rng(80 + probe);
            const int r = rng.uniform_int(0, x.feats.rows - 1);
            const int c = rng.uniform_int(0, 1);
            const double saved = x.feats.at(r, c);
            x.feats.at(r, c) = saved + h;
            const double fp = sumsq(ssc_forward(layer, x).feats);
            x.feats.at(r, c) = saved - h;
            const double fm = sumsq(ssc_forward(layer, x).feats);
            x.feats.at(r, c) = saved;
            const double numeric = (fp - fm) / (2 * h);
            CHECK(dx.at(r, c) == doctest::Approx(numeric).epsilon(1e-5));
        }
    }
}

TEST_CASE("ssc preserves the active set and mac counters bound the dense count") {
    Rng rng(90);
    for (int it = 0; it < 20; ++it) {
        const int n = 4 + int(rng.next_u64() % 13);
        GridSpec spec{0, double(n), 0, double(n), 1.0};
        const double density = rng.uniform(0.05, 0.9);
        const SparseGrid g = random_grid(spec, density, 2, rng.next_u64());
        SparseConv layer = make_layer({2, 2, 3, 1}, rng.next_u64());
        const SparseGrid y = ssc_forward(layer, g);
        CHECK(y.active == g.active);
        const int64_t dense_macs = int64_t(n) * n * 9 * 2 * 2;
        CHECK(layer.last_macs <= dense_macs);
        if (g.size() < n * n) CHECK(layer.last_macs < dense_macs);
        CHECK(layer.last_pairs == layer.last_rb->pair_count());
    }
}

TEST_CASE("conv spec validation") {
    Rng rng(99);
    SparseConv layer;
    CHECK_THROWS_AS(layer.init("bad", {1, 1, 4, 1}, rng), std::invalid_argument); // even f, s=1
    SparseConv ok;
    ok.init("ok", {1, 1, 2, 2}, rng);
    SparseConv ssc_even;
    ssc_even.init("ssc_even", {1, 1, 2, 2}, rng);
    SparseGrid g = make_sparse_grid({0, 4, 0, 4, 1.0}, {{0, 0}}, 1);
    CHECK_THROWS_AS(ssc_forward(ssc_even, g), std::invalid_argument);

    SparseConv chan = make_layer({3, 2, 3, 1}, 100);
    CHECK_THROWS_AS(ssc_forward(chan, g), std::invalid_argument); // channel mismatch
}

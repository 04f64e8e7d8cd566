#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "skpp/points.hpp"
#include "skpp/rng.hpp"

using namespace skpp;

namespace {

PointCloud random_cloud(int n, double lo, double hi, uint64_t seed) {
    Rng rng(seed);
    PointCloud cloud;
    for (int i = 0; i < n; ++i) {
        RadarPoint p;
        p.x = rng.uniform(lo, hi);
        p.y = rng.uniform(lo, hi);
        p.vr = rng.uniform(-10, 10);
        p.rcs = rng.uniform(-5, 20);
        cloud.points.push_back(p);
    }
    return cloud;
}

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
    return path;
}

} // namespace

TEST_CASE("radius_neighbors basic") {
    PointCloud cloud;
    cloud.points.push_back({0, 0, 0, 0});
    CHECK(radius_neighbors(cloud, 0, 0, 1.5) == std::vector<int>{0});

    cloud.points.push_back({2, 0, 0, 0});
    CHECK(radius_neighbors(cloud, 0, 0, 1.5) == std::vector<int>{0});
}

TEST_CASE("neighbor search closed ball boundary") {
    PointCloud cloud;
    cloud.points.push_back({3.0, 0.0, 0, 0});
    CHECK(brute_force_neighbors(cloud, 0, 0, 3.0) == std::vector<int>{0});
    CHECK(radius_neighbors(cloud, 0, 0, 3.0) == std::vector<int>{0});
}

TEST_CASE("brute force on empty cloud") {
    PointCloud cloud;
    CHECK(brute_force_neighbors(cloud, 1, 2, 1.0).empty());
    CHECK(radius_neighbors(cloud, 1, 2, 1.0).empty());
}

TEST_CASE("neighbor search rejects non-positive radius") {
    PointCloud cloud = random_cloud(5, -1, 1, 3);
    CHECK_THROWS_AS(radius_neighbors(cloud, 0, 0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(brute_force_neighbors(cloud, 0, 0, -1.0), std::invalid_argument);
}

TEST_CASE("radius_neighbors equals brute force on the 200-point fixture") {
    const PointCloud cloud = random_cloud(200, -10, 10, 42);
    Rng rng(7);
    for (int q = 0; q < 50; ++q) {
        const double cx = rng.uniform(-10, 10), cy = rng.uniform(-10, 10);
        CHECK(radius_neighbors(cloud, cx, cy, 3.75) == brute_force_neighbors(cloud, cx, cy, 3.75));
    }
}

TEST_CASE("radius_neighbors equals brute force over random radii") {
    Rng rng(11);
    for (int it = 0; it < 60; ++it) {
        const PointCloud cloud = random_cloud(rng.uniform_int(0, 80), -12, 12, rng.next_u64());
        const double r = rng.uniform(0.1, 10.0);
        const double cx = rng.uniform(-14, 14), cy = rng.uniform(-14, 14);
        CHECK(radius_neighbors(cloud, cx, cy, r) == brute_force_neighbors(cloud, cx, cy, r));
    }
}

TEST_CASE("augment_rcs zero sigma is the identity") {
    const PointCloud cloud = random_cloud(20, -5, 5, 1);
    const PointCloud out = augment_rcs(cloud, 0.0, 99);
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        CHECK(out.points[i].rcs == cloud.points[i].rcs);
        CHECK(out.points[i].x == cloud.points[i].x);
    }
}

TEST_CASE("augment_rcs noise statistics") {
    const PointCloud cloud = random_cloud(10000, -5, 5, 2);
    const PointCloud out = augment_rcs(cloud, 0.7, 1234);
    double sum = 0, sum2 = 0;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const double d = out.points[i].rcs - cloud.points[i].rcs;
        sum += d;
        sum2 += d * d;
        CHECK(out.points[i].x == cloud.points[i].x);
        CHECK(out.points[i].y == cloud.points[i].y);
        CHECK(out.points[i].vr == cloud.points[i].vr);
    }
    const double mean = sum / cloud.points.size();
    const double stddev = std::sqrt(sum2 / cloud.points.size() - mean * mean);
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(stddev - 0.7) < 0.03);
}

TEST_CASE("augment_rcs deterministic per seed") {
    const PointCloud cloud = random_cloud(100, -5, 5, 3);
    const PointCloud a = augment_rcs(cloud, 0.7, 555);
    const PointCloud b = augment_rcs(cloud, 0.7, 555);
    for (size_t i = 0; i < cloud.points.size(); ++i) CHECK(a.points[i].rcs == b.points[i].rcs);
    CHECK_THROWS_AS(augment_rcs(cloud, -0.1, 0), std::invalid_argument);
}

namespace {

bool near_box_perimeter(const OBB& box, double px, double py, double tol) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    const double dx = px - box.cx, dy = py - box.cy;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    if (std::abs(lx) > 0.5 * box.w + tol || std::abs(ly) > 0.5 * box.l + tol) return false;
    // and not deep in the interior either
    const double inner = std::min(0.5 * box.w - std::abs(lx), 0.5 * box.l - std::abs(ly));
    return inner <= tol;
}

} // namespace

TEST_CASE("synth_scene static object points sit on the box") {
    const Extent extent{-20, 20, -20, 20};
    SceneSpec spec;
    SceneObject car;
    car.box = OBB(0, 0, 2.0, 4.5, 0.5);
    spec.objects = {car};
    spec.points_per_object = 20;
    spec.clutter_count = 0;
    spec.seed = 5;
    const Scene scene = synth_scene(extent, spec);
    CHECK(scene.cloud.points.size() == 20);
    for (const auto& p : scene.cloud.points) {
        CHECK(near_box_perimeter(car.box, p.x, p.y, 0.1));
        CHECK(p.vr == doctest::Approx(0.0));
    }
}

TEST_CASE("synth_scene radial velocity projection") {
    const Extent extent{-60, 60, -60, 60};
    SceneSpec spec;
    SceneObject car;
    car.box = OBB(20, 0, 2.0, 4.5, 0.0);
    car.vx = 10.0;
    car.vy = 0.0;
    spec.objects = {car};
    spec.points_per_object = 30;
    spec.clutter_count = 0;
    spec.seed = 6;
    const Scene scene = synth_scene(extent, spec);
    for (const auto& p : scene.cloud.points) {
        const double range = std::hypot(p.x, p.y);
        const double expected = (car.vx * p.x + car.vy * p.y) / range;
        CHECK(p.vr == doctest::Approx(expected).epsilon(1e-12));
        CHECK(p.vr == doctest::Approx(10.0).epsilon(0.05)); // radial ~ x direction near (20, 0)
    }
}

TEST_CASE("synth_scene clutter only") {
    const Extent extent{-10, 10, -10, 10};
    SceneSpec spec;
    spec.clutter_count = 50;
    spec.seed = 7;
    const Scene scene = synth_scene(extent, spec);
    CHECK(scene.cloud.points.size() == 50);
    CHECK(scene.truth.empty());
    for (const auto& p : scene.cloud.points) {
        CHECK(p.vr == 0.0);
        CHECK(extent.contains(p.x, p.y));
    }
}

TEST_CASE("synth_scene rejects objects outside the extent") {
    const Extent extent{-5, 5, -5, 5};
    SceneSpec spec;
    SceneObject car;
    car.box = OBB(4.5, 0, 2.0, 4.5, 0.0);
    spec.objects = {car};
    CHECK_THROWS_AS(synth_scene(extent, spec), std::invalid_argument);
}

TEST_CASE("synth_scene deterministic per seed") {
    const Extent extent{-20, 20, -20, 20};
    SceneSpec spec;
    SceneObject car;
    car.box = OBB(0, 0, 2.0, 4.5, 1.0);
    spec.objects = {car};
    spec.clutter_count = 10;
    spec.seed = 9;
    const Scene a = synth_scene(extent, spec);
    const Scene b = synth_scene(extent, spec);
    REQUIRE(a.cloud.points.size() == b.cloud.points.size());
    for (size_t i = 0; i < a.cloud.points.size(); ++i) {
        CHECK(a.cloud.points[i].x == b.cloud.points[i].x);
        CHECK(a.cloud.points[i].rcs == b.cloud.points[i].rcs);
    }
}

TEST_CASE("load_points_csv single row") {
    const std::string path = write_temp("pts1.csv", "frame,x,y,vr,rcs\n0,1.0,2.0,-3.5,12.0\n");
    const PointCloud cloud = load_points_csv(path);
    REQUIRE(cloud.points.size() == 1);
    CHECK(cloud.points[0].x == 1.0);
    CHECK(cloud.points[0].y == 2.0);
    CHECK(cloud.points[0].vr == -3.5);
    CHECK(cloud.points[0].rcs == 12.0);
    CHECK(cloud.frame_count == 1);
}

TEST_CASE("load_points_csv seven frames") {
    std::string content = "frame,x,y,vr,rcs\n";
    for (int f = 0; f < 7; ++f) content += std::to_string(f) + ",0,0,0,0\n";
    const std::string path = write_temp("pts7.csv", content);
    CHECK(load_points_csv(path).frame_count == 7);
}

TEST_CASE("load_points_csv parse errors name row and column") {
    const std::string path = write_temp("ptsbad.csv", "frame,x,y,vr,rcs\n0,1.0,abc,0,0\n");
    try {
        load_points_csv(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 1") != std::string::npos);
        CHECK(msg.find("`y`") != std::string::npos);
    }

    const std::string empty = write_temp("ptsempty.csv", "");
    CHECK_THROWS_AS(load_points_csv(empty), ParseError);

    const std::string badheader = write_temp("ptshdr.csv", "frame,x,z,vr,rcs\n");
    CHECK_THROWS_AS(load_points_csv(badheader), ParseError);
}

TEST_CASE("points csv round trip") {
    const PointCloud cloud = random_cloud(37, -30, 30, 17);
    const std::string path = (std::filesystem::temp_directory_path() / "ptsrt.csv").string();
    save_points_csv(path, cloud);
    const PointCloud back = load_points_csv(path);
    REQUIRE(back.points.size() == cloud.points.size());
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        CHECK(back.points[i].x == cloud.points[i].x);
        CHECK(back.points[i].y == cloud.points[i].y);
        CHECK(back.points[i].vr == cloud.points[i].vr);
        CHECK(back.points[i].rcs == cloud.points[i].rcs);
    }
}

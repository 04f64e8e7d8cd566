#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "skpp/geometry.hpp"

namespace skpp {

struct RadarPoint {
    double x = 0;   // meters
    double y = 0;   // meters
    double vr = 0;  // m/s, ego-motion compensated radial velocity
    double rcs = 0; // dBsm
};

struct PointCloud {
    std::vector<RadarPoint> points;
    int frame_count = 1; // number of aggregated sweeps
};

// Spatial hash over square buckets of side = query radius. Works on plain
// coordinate arrays so sparse-grid cell centers can be indexed the same way
// as radar points.
class NeighborIndex {
public:
    NeighborIndex(const std::vector<double>& xs, const std::vector<double>& ys, double radius);
    NeighborIndex(const PointCloud& cloud, double radius);

    // Indices i with dist(p_i, center) <= radius (closed ball), ascending.
    std::vector<int> query(double cx, double cy) const;

    double radius() const { return radius_; }

private:
    double radius_;
    std::vector<double> xs_, ys_;
    std::unordered_map<uint64_t, std::vector<int>> buckets_;
};

std::vector<int> radius_neighbors(const PointCloud& cloud, double cx, double cy, double radius);
std::vector<int> brute_force_neighbors(const PointCloud& cloud, double cx, double cy, double radius);

PointCloud augment_rcs(const PointCloud& cloud, double sigma, uint64_t seed);

enum class ObjectClass : int { car = 0, vru = 1 };

const char* class_name(ObjectClass c);
ObjectClass class_from_name(const std::string& name); // throws on unknown

struct SceneObject {
    OBB box;
    double vx = 0, vy = 0; // object velocity, m/s
    ObjectClass cls = ObjectClass::car;
};

struct SceneSpec {
    std::vector<SceneObject> objects;
    int clutter_count = 0;
    int points_per_object = 20;
    uint64_t seed = 0;
};

struct Scene {
    PointCloud cloud;
    std::vector<SceneObject> truth;
};

// Samples points_per_object reflections on each box perimeter (vr = radial
// projection of the object velocity) plus uniform clutter with vr = 0.
Scene synth_scene(const Extent& extent, const SceneSpec& spec);

// CSV with header `frame,x,y,vr,rcs`. Parse errors name the row and column.
PointCloud load_points_csv(const std::string& path);
void save_points_csv(const std::string& path, const PointCloud& cloud);

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace skpp

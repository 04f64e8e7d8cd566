#include "skpp/points.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "skpp/rng.hpp"
#include "skpp/tensor.hpp"

namespace skpp {

namespace {

uint64_t bucket_key(int64_t bi, int64_t bj) {
    return (uint64_t(uint32_t(bi)) << 32) | uint64_t(uint32_t(bj));
}

} // namespace

NeighborIndex::NeighborIndex(const std::vector<double>& xs, const std::vector<double>& ys, double radius)
    : radius_(radius), xs_(xs), ys_(ys) {
    check(radius > 0.0, "NeighborIndex: radius must be positive");
    buckets_.reserve(xs_.size() * 2);
    for (size_t i = 0; i < xs_.size(); ++i) {
        const int64_t bi = int64_t(std::floor(xs_[i] / radius_));
        const int64_t bj = int64_t(std::floor(ys_[i] / radius_));
        buckets_[bucket_key(bi, bj)].push_back(int(i));
    }
}

NeighborIndex::NeighborIndex(const PointCloud& cloud, double radius)
    : NeighborIndex(
          [&] {
              std::vector<double> xs(cloud.points.size());
              for (size_t i = 0; i < xs.size(); ++i) xs[i] = cloud.points[i].x;
              return xs;
          }(),
          [&] {
              std::vector<double> ys(cloud.points.size());
              for (size_t i = 0; i < ys.size(); ++i) ys[i] = cloud.points[i].y;
              return ys;
          }(),
          radius) {}

std::vector<int> NeighborIndex::query(double cx, double cy) const {
    std::vector<int> out;
    const double r2 = radius_ * radius_;
    const int64_t bi0 = int64_t(std::floor(cx / radius_));
    const int64_t bj0 = int64_t(std::floor(cy / radius_));
    for (int64_t bi = bi0 - 1; bi <= bi0 + 1; ++bi) {
        for (int64_t bj = bj0 - 1; bj <= bj0 + 1; ++bj) {
            auto it = buckets_.find(bucket_key(bi, bj));
            if (it == buckets_.end()) continue;
            for (int idx : it->second) {
                const double dx = xs_[idx] - cx;
                const double dy = ys_[idx] - cy;
                if (dx * dx + dy * dy <= r2) out.push_back(idx);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> radius_neighbors(const PointCloud& cloud, double cx, double cy, double radius) {
    check(radius > 0.0, "radius_neighbors: radius must be positive");
    return NeighborIndex(cloud, radius).query(cx, cy);
}

std::vector<int> brute_force_neighbors(const PointCloud& cloud, double cx, double cy, double radius) {
    check(radius > 0.0, "brute_force_neighbors: radius must be positive");
    std::vector<int> out;
    const double r2 = radius * radius;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const double dx = cloud.points[i].x - cx;
        const double dy = cloud.points[i].y - cy;
        if (dx * dx + dy * dy <= r2) out.push_back(int(i));
    }
    return out;
}

PointCloud augment_rcs(const PointCloud& cloud, double sigma, uint64_t seed) {
    check(sigma >= 0.0, "augment_rcs: sigma must be non-negative");
    PointCloud out = cloud;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (auto& p : out.points) p.rcs += rng.normal(0.0, sigma);
    return out;
}

const char* class_name(ObjectClass c) { return c == ObjectClass::car ? "car" : "vru"; }

ObjectClass class_from_name(const std::string& name) {
    if (name == "car") return ObjectClass::car;
    if (name == "vru") return ObjectClass::vru;
    throw ParseError("unknown class name: '" + name + "' (expected car or vru)");
}

Scene synth_scene(const Extent& extent, const SceneSpec& spec) {
    for (const auto& obj : spec.objects) {
        for (const auto& c : obj.box.corners()) {
            check(extent.contains(c[0], c[1]),
                  "synth_scene: object extends outside the grid extent");
        }
    }

    Scene scene;
    scene.truth = spec.objects;

    Rng rng(spec.seed);
    for (size_t oi = 0; oi < spec.objects.size(); ++oi) {
        Rng orng = rng.split(oi + 1);
        const SceneObject& obj = spec.objects[oi];
        const OBB& b = obj.box;
        const double cy_ = std::cos(b.yaw), sy_ = std::sin(b.yaw);
        const double half_perim = b.w + b.l;
        const double base_rcs = orng.uniform(5.0, 15.0);
        for (int k = 0; k < spec.points_per_object; ++k) {
            // walk the perimeter: parameter t in [0, 2*(w+l))
            const double t = orng.uniform(0.0, 2.0 * half_perim);
            double lx, ly;
            if (t < b.l) {
                lx = +0.5 * b.w; ly = t - 0.5 * b.l;
            } else if (t < b.l + b.w) {
                lx = 0.5 * b.w - (t - b.l); ly = +0.5 * b.l;
            } else if (t < 2.0 * b.l + b.w) {
                lx = -0.5 * b.w; ly = 0.5 * b.l - (t - b.l - b.w);
            } else {
                lx = (t - 2.0 * b.l - b.w) - 0.5 * b.w; ly = -0.5 * b.l;
            }
            RadarPoint p;
            p.x = b.cx + cy_ * lx - sy_ * ly;
            p.y = b.cy + sy_ * lx + cy_ * ly;
            const double range = std::hypot(p.x, p.y);
            if (range > 1e-9) {
                p.vr = (obj.vx * p.x + obj.vy * p.y) / range;
            } else {
                p.vr = 0.0;
            }
            p.rcs = base_rcs + orng.normal(0.0, 1.0);
            scene.cloud.points.push_back(p);
        }
    }

    Rng crng = rng.split(0);
    for (int k = 0; k < spec.clutter_count; ++k) {
        RadarPoint p;
        p.x = crng.uniform(extent.x_min, extent.x_max);
        p.y = crng.uniform(extent.y_min, extent.y_max);
        p.vr = 0.0;
        p.rcs = crng.uniform(-5.0, 5.0);
        scene.cloud.points.push_back(p);
    }
    return scene;
}

namespace {

double parse_field(const std::string& field, int row, const char* col) {
    size_t pos = 0;
    double val = 0;
    try {
        val = std::stod(field, &pos);
    } catch (const std::exception&) {
        throw ParseError("points csv: row " + std::to_string(row) + ", column `" + col +
                         "`: not a number: '" + field + "'");
    }
    if (pos != field.size())
        throw ParseError("points csv: row " + std::to_string(row) + ", column `" + col +
                         "`: trailing characters in '" + field + "'");
    return val;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

PointCloud load_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("points csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("points csv: empty file: " + path);
    {
        auto header = split_csv_line(line);
        const std::vector<std::string> want = {"frame", "x", "y", "vr", "rcs"};
        if (header.size() != want.size())
            throw ParseError("points csv: bad header (expected frame,x,y,vr,rcs): " + line);
        for (size_t k = 0; k < want.size(); ++k)
            if (header[k] != want[k])
                throw ParseError("points csv: missing column `" + want[k] + "` in header: " + line);
    }

    PointCloud cloud;
    long min_frame = 0, max_frame = 0;
    bool any = false;
    int row = 0;
    static const char* cols[5] = {"frame", "x", "y", "vr", "rcs"};
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw ParseError("points csv: row " + std::to_string(row) + ": expected 5 fields, got " +
                             std::to_string(fields.size()));
        double vals[5];
        for (int k = 0; k < 5; ++k) vals[k] = parse_field(fields[k], row, cols[k]);
        const long frame = long(vals[0]);
        if (!any) {
            min_frame = max_frame = frame;
            any = true;
        } else {
            min_frame = std::min(min_frame, frame);
            max_frame = std::max(max_frame, frame);
        }
        RadarPoint p{vals[1], vals[2], vals[3], vals[4]};
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.vr) || !std::isfinite(p.rcs))
            throw ParseError("points csv: row " + std::to_string(row) + ": non-finite value");
        cloud.points.push_back(p);
    }
    cloud.frame_count = any ? int(1 + max_frame - min_frame) : 1;
    return cloud;
}

void save_points_csv(const std::string& path, const PointCloud& cloud) {
    std::ofstream out(path);
    if (!out) throw ParseError("points csv: cannot write " + path);
    out << "frame,x,y,vr,rcs\n";
    char buf[256];
    for (const auto& p : cloud.points) {
        std::snprintf(buf, sizeof(buf), "0,%.17g,%.17g,%.17g,%.17g\n", p.x, p.y, p.vr, p.rcs);
        out << buf;
    }
}

} // namespace skpp

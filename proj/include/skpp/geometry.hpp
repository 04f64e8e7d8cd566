#pragma once
#include <array>
#include <cmath>

namespace skpp {

// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
    const double two_pi = 2.0 * M_PI;
    a = std::remainder(a, two_pi); // (-pi, pi] up to the boundary at -pi
    if (a <= -M_PI) a += two_pi;
    return a;
}

struct Extent {
    double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
    bool contains(double x, double y) const {
        return x >= x_min && x < x_max && y >= y_min && y < y_max;
    }
};

// Oriented birds-eye-view box. Canonical form keeps w <= l and yaw in
// (-pi, pi] so the 90-degree extent/yaw swap ambiguity is removed.
struct OBB {
    double cx = 0, cy = 0;
    double w = 1, l = 1; // extents along the box's local x / y axes
    double yaw = 0;

    OBB() = default;
    OBB(double cx_, double cy_, double w_, double l_, double yaw_)
        : cx(cx_), cy(cy_), w(w_), l(l_), yaw(yaw_) {}

    OBB canonical() const {
        OBB b = *this;
        if (b.w > b.l) {
            std::swap(b.w, b.l);
            b.yaw += M_PI / 2.0;
        }
        b.yaw = wrap_angle(b.yaw);
        return b;
    }

    double area() const { return w * l; }

    std::array<std::array<double, 2>, 4> corners() const {
        const double c = std::cos(yaw), s = std::sin(yaw);
        const double hw = 0.5 * w, hl = 0.5 * l;
        std::array<std::array<double, 2>, 4> out{};
        const double lx[4] = {+hw, -hw, -hw, +hw};
        const double ly[4] = {+hl, +hl, -hl, -hl};
        for (int k = 0; k < 4; ++k) {
            out[k][0] = cx + c * lx[k] - s * ly[k];
            out[k][1] = cy + s * lx[k] + c * ly[k];
        }
        return out;
    }
};

} // namespace skpp

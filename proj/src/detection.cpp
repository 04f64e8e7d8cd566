#include "skpp/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace skpp {

void DetectionHead::init(const std::string& name, ObjectClass c, int scale_, int channels, Rng& rng) {
    cls = c;
    scale = scale_;
    Rng r1 = rng.split(1), r2 = rng.split(2);
    ssc.init(name + ".ssc", {channels, channels, 3, 1}, r1);
    out.init(name + ".out", kRawSize, channels, r2);
}

Tensor DetectionHead::forward(const SparseGrid& map) {
    last_active = map.active;
    last_spec = map.spec;
    SparseGrid h = ssc_forward(ssc, map);
    return out.forward(h.feats);
}

Tensor DetectionHead::backward(const Tensor& d_raw) {
    Tensor d_h = out.backward(d_raw);
    return ssc.backward(d_h);
}

void DetectionHead::params(std::vector<Parameter*>& o) {
    ssc.params(o);
    out.params(o);
}

void DetectionHead::stats(std::vector<LayerStats>& o) const {
    o.push_back({ssc.name, ssc.last_pairs, ssc.last_macs, ssc.last_ms});
}

namespace {
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
} // namespace

Detection decode_obb(const GridSpec& spec, const CellIndex& cell, const double* raw, ObjectClass cls) {
    Detection d;
    d.cls = cls;
    d.score = sigmoid(raw[0]);
    OBB b;
    b.cx = spec.center_x(cell.i) + raw[1] * spec.cell_size;
    b.cy = spec.center_y(cell.j) + raw[2] * spec.cell_size;
    b.w = std::exp(raw[3]);
    b.l = std::exp(raw[4]);
    b.yaw = std::atan2(raw[5], raw[6]);
    d.box = b.canonical();
    return d;
}

void encode_obb(const GridSpec& spec, const CellIndex& cell, const OBB& box, double* raw6) {
    const OBB b = box.canonical();
    raw6[0] = (b.cx - spec.center_x(cell.i)) / spec.cell_size;
    raw6[1] = (b.cy - spec.center_y(cell.j)) / spec.cell_size;
    raw6[2] = std::log(b.w);
    raw6[3] = std::log(b.l);
    raw6[4] = std::sin(b.yaw);
    raw6[5] = std::cos(b.yaw);
}

namespace {

// Sutherland-Hodgman clip of polygon `poly` against the half-plane on the
// left of edge (a -> b).
std::vector<std::array<double, 2>> clip_edge(const std::vector<std::array<double, 2>>& poly,
                                             const std::array<double, 2>& a,
                                             const std::array<double, 2>& b) {
    std::vector<std::array<double, 2>> out;
    const double ex = b[0] - a[0], ey = b[1] - a[1];
    auto side = [&](const std::array<double, 2>& p) {
        return ex * (p[1] - a[1]) - ey * (p[0] - a[0]);
    };
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& cur = poly[i];
        const auto& nxt = poly[(i + 1) % n];
        const double sc = side(cur), sn = side(nxt);
        if (sc >= 0) out.push_back(cur);
        if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
            const double t = sc / (sc - sn);
            out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
        }
    }
    return out;
}

double polygon_area(const std::vector<std::array<double, 2>>& poly) {
    double a = 0.0;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    return 0.5 * std::abs(a);
}

} // namespace

double rotated_iou(const OBB& a, const OBB& b) {
    const auto ca = a.corners();
    const auto cb = b.corners();
    std::vector<std::array<double, 2>> poly(ca.begin(), ca.end());
    for (int k = 0; k < 4 && !poly.empty(); ++k)
        poly = clip_edge(poly, cb[k], cb[(k + 1) % 4]);
    const double inter = poly.size() >= 3 ? polygon_area(poly) : 0.0;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::min(1.0, std::max(0.0, inter / uni));
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return dets[x].score > dets[y].score; });
    std::vector<Detection> kept;
    for (int idx : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (rotated_iou(dets[idx].box, k.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[idx]);
    }
    return kept;
}

namespace {

// Greedy score-ordered matching; returns per-pred matched gt index or -1.
std::vector<int> match_by_distance(const std::vector<Detection>& preds,
                                   const std::vector<OBB>& gts, double d) {
    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return preds[x].score > preds[y].score; });
    std::vector<bool> taken(gts.size(), false);
    std::vector<int> match(preds.size(), -1);
    for (int pi : order) {
        double best = d;
        int best_gt = -1;
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            if (taken[gi]) continue;
            const double dist = std::hypot(preds[pi].box.cx - gts[gi].cx, preds[pi].box.cy - gts[gi].cy);
            if (dist <= best) {
                best = dist;
                best_gt = int(gi);
            }
        }
        if (best_gt >= 0) {
            taken[best_gt] = true;
            match[pi] = best_gt;
        }
    }
    return match;
}

} // namespace

double ap_at_distance(const std::vector<Detection>& preds, const std::vector<OBB>& gts, double d) {
    check(d > 0.0, "ap_at_distance: matching threshold must be positive");
    if (gts.empty()) return preds.empty() ? 1.0 : 0.0;
    if (preds.empty()) return 0.0;

    const std::vector<int> match = match_by_distance(preds, gts, d);
    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return preds[x].score > preds[y].score; });

    const int n = int(preds.size());
    std::vector<double> precision(n), recall(n);
    int tp = 0;
    for (int k = 0; k < n; ++k) {
        if (match[order[k]] >= 0) ++tp;
        precision[k] = double(tp) / double(k + 1);
        recall[k] = double(tp) / double(gts.size());
    }
    // all-points interpolation: integrate the precision envelope over recall
    for (int k = n - 2; k >= 0; --k) precision[k] = std::max(precision[k], precision[k + 1]);
    double ap = 0.0, prev_recall = 0.0;
    for (int k = 0; k < n; ++k) {
        if (recall[k] > prev_recall) {
            ap += (recall[k] - prev_recall) * precision[k];
            prev_recall = recall[k];
        }
    }
    return ap;
}

double ase(const OBB& pred, const OBB& gt) {
    const OBB p = pred.canonical(), g = gt.canonical();
    const double iw = std::min(p.w, g.w);
    const double il = std::min(p.l, g.l);
    const double inter = iw * il;
    const double uni = p.area() + g.area() - inter;
    return 1.0 - inter / uni;
}

double aoe(double pred_yaw, double gt_yaw) { return std::abs(wrap_angle(pred_yaw - gt_yaw)); }

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }
double smooth_l1_grad(double x) { return std::clamp(x, -1.0, 1.0); }

} // namespace

HeadLoss toy_loss(const Tensor& raw, const std::vector<CellIndex>& active, const GridSpec& spec,
                  const std::vector<OBB>& gts, const LossCfg& cfg) {
    check(raw.rows == int(active.size()) && (raw.rows == 0 || raw.cols == kRawSize),
          "toy_loss: raw prediction shape mismatch");
    HeadLoss out;
    out.d_raw = Tensor(raw.rows, kRawSize);
    out.positives.assign(gts.size(), -1);
    const int N = raw.rows;
    if (N == 0) return out;

    // the active cell nearest each gt center (within assign_radius) is positive
    std::vector<bool> cell_taken(N, false);
    for (size_t gi = 0; gi < gts.size(); ++gi) {
        double best = cfg.assign_radius;
        int best_slot = -1;
        for (int s = 0; s < N; ++s) {
            if (cell_taken[s]) continue;
            const double dist = std::hypot(spec.center_x(active[s].i) - gts[gi].cx,
                                           spec.center_y(active[s].j) - gts[gi].cy);
            if (dist <= best) {
                best = dist;
                best_slot = s;
            }
        }
        if (best_slot >= 0) {
            cell_taken[best_slot] = true;
            out.positives[gi] = best_slot;
        }
    }

    // objectness BCE over all active cells
    std::vector<char> is_pos(N, 0);
    for (int s : out.positives)
        if (s >= 0) is_pos[s] = 1;
    double cls_loss = 0.0;
    for (int s = 0; s < N; ++s) {
        const double z = raw.at(s, 0);
        if (is_pos[s]) {
            cls_loss += cfg.pos_weight * softplus(-z);
            out.d_raw.at(s, 0) = cfg.pos_weight * (sigmoid(z) - 1.0) / N;
        } else {
            cls_loss += softplus(z);
            out.d_raw.at(s, 0) = sigmoid(z) / N;
        }
    }
    cls_loss /= N;

    // smooth-L1 regression on the 6 box components at positive cells
    double reg_loss = 0.0;
    int pos_count = 0;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
        if (out.positives[gi] < 0) continue;
        ++pos_count;
    }
    if (pos_count > 0) {
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            const int s = out.positives[gi];
            if (s < 0) continue;
            double target[6];
            encode_obb(spec, active[s], gts[gi], target);
            for (int c = 0; c < 6; ++c) {
                const double diff = raw.at(s, c + 1) - target[c];
                reg_loss += smooth_l1(diff);
                out.d_raw.at(s, c + 1) += cfg.lambda_reg * smooth_l1_grad(diff) / pos_count;
            }
        }
        reg_loss /= pos_count;
    }

    out.cls_loss = cls_loss;
    out.reg_loss = reg_loss;
    out.loss = cls_loss + cfg.lambda_reg * reg_loss;
    return out;
}

void save_detections(const std::string& path, const std::vector<Detection>& dets) {
    std::ofstream out(path);
    if (!out) throw ParseError("detections: cannot write " + path);
    out << "class,score,cx,cy,w,l,yaw\n";
    char buf[256];
    for (const auto& d : dets) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      class_name(d.cls), d.score, d.box.cx, d.box.cy, d.box.w, d.box.l, d.box.yaw);
        out << buf;
    }
}

std::vector<Detection> load_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("detections: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("detections: empty file: " + path);
    std::vector<Detection> dets;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7)
            throw ParseError("detections: row " + std::to_string(row) + ": expected 7 fields");
        Detection d;
        d.cls = class_from_name(fields[0]);
        try {
            d.score = std::stod(fields[1]);
            d.box.cx = std::stod(fields[2]);
            d.box.cy = std::stod(fields[3]);
            d.box.w = std::stod(fields[4]);
            d.box.l = std::stod(fields[5]);
            d.box.yaw = std::stod(fields[6]);
        } catch (const std::exception&) {
            throw ParseError("detections: row " + std::to_string(row) + ": non-numeric field");
        }
        d.box = d.box.canonical();
        dets.push_back(d);
    }
    return dets;
}

EvalSummary evaluate_detections(const std::vector<Detection>& preds,
                                const std::vector<Detection>& gts,
                                const std::vector<double>& thresholds, double tp_match_dist) {
    EvalSummary s;
    s.thresholds = thresholds;

    auto filter_preds = [&](ObjectClass c) {
        std::vector<Detection> out;
        for (const auto& p : preds)
            if (p.cls == c) out.push_back(p);
        return out;
    };
    auto filter_gts = [&](ObjectClass c) {
        std::vector<OBB> out;
        for (const auto& g : gts)
            if (g.cls == c) out.push_back(g.box);
        return out;
    };

    const std::vector<Detection> pred_by_class[2] = {filter_preds(ObjectClass::car),
                                                     filter_preds(ObjectClass::vru)};
    const std::vector<OBB> gt_by_class[2] = {filter_gts(ObjectClass::car), filter_gts(ObjectClass::vru)};

    for (double d : thresholds) {
        double ap[2];
        for (int c = 0; c < 2; ++c) ap[c] = ap_at_distance(pred_by_class[c], gt_by_class[c], d);
        s.ap_car.push_back(ap[0]);
        s.ap_vru.push_back(ap[1]);
        // mean over classes present in the ground truth
        double sum = 0.0;
        int cnt = 0;
        for (int c = 0; c < 2; ++c) {
            if (!gt_by_class[c].empty()) {
                sum += ap[c];
                ++cnt;
            }
        }
        s.ap_mean.push_back(cnt > 0 ? sum / cnt : 1.0);
    }
    s.map = s.ap_mean.empty()
                ? 0.0
                : std::accumulate(s.ap_mean.begin(), s.ap_mean.end(), 0.0) / double(s.ap_mean.size());

    // TP metrics over matches at tp_match_dist
    double ase_sum = 0.0, aoe_sum = 0.0;
    int matches = 0;
    for (int c = 0; c < 2; ++c) {
        const auto match = match_by_distance(pred_by_class[c], gt_by_class[c], tp_match_dist);
        for (size_t pi = 0; pi < match.size(); ++pi) {
            if (match[pi] < 0) continue;
            ase_sum += ase(pred_by_class[c][pi].box, gt_by_class[c][match[pi]]);
            aoe_sum += aoe(pred_by_class[c][pi].box.yaw, gt_by_class[c][match[pi]].yaw);
            ++matches;
        }
    }
    s.tp_matches = matches;
    s.ase = matches > 0 ? ase_sum / matches : 0.0;
    s.aoe_rad = matches > 0 ? aoe_sum / matches : 0.0;
    return s;
}

} // namespace skpp

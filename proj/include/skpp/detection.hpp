#pragma once
#include <string>
#include <vector>

#include "skpp/bench.hpp"
#include "skpp/geometry.hpp"
#include "skpp/grid.hpp"
#include "skpp/nn.hpp"
#include "skpp/points.hpp"
#include "skpp/sparse_conv.hpp"

namespace skpp {

struct Detection {
    OBB box;
    double score = 0.0;
    ObjectClass cls = ObjectClass::car;
};

// Raw per-cell prediction layout:
// [objectness logit, dx, dy, log w, log l, sin yaw, cos yaw]
inline constexpr int kRawSize = 7;

// Per-class detection head: one SSC(.,.,3) then a per-cell linear map to the
// 7 raw outputs.
struct DetectionHead {
    int scale = 0; // encoder stage index this head reads
    ObjectClass cls = ObjectClass::car;
    SparseConv ssc;
    Linear out;

    std::vector<CellIndex> last_active;
    GridSpec last_spec;

    void init(const std::string& name, ObjectClass c, int scale_, int channels, Rng& rng);
    Tensor forward(const SparseGrid& map); // [|active| x 7]
    Tensor backward(const Tensor& d_raw);  // -> gradient w.r.t. map features
    void params(std::vector<Parameter*>& out);
    void stats(std::vector<LayerStats>& out) const;
};

Detection decode_obb(const GridSpec& spec, const CellIndex& cell, const double* raw, ObjectClass cls);
// Inverse of decode_obb on the 6 box components (no objectness).
void encode_obb(const GridSpec& spec, const CellIndex& cell, const OBB& box, double* raw6);

// Exact convex-polygon intersection over union.
double rotated_iou(const OBB& a, const OBB& b);

// Greedy, score-descending (stable on ties); keeps a box iff its IoU with
// every kept box is below the threshold. Call per class.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

// Greedy score-ordered one-to-one matching by center distance <= d; AP is
// the all-points precision-recall integral.
double ap_at_distance(const std::vector<Detection>& preds, const std::vector<OBB>& gts, double d);

// 1 - IoU after aligning translation and orientation.
double ase(const OBB& pred, const OBB& gt);

// Smallest absolute yaw difference on the circle, in [0, pi].
double aoe(double pred_yaw, double gt_yaw);

struct LossCfg {
    double lambda_reg = 1.0;
    double assign_radius = 2.0; // meters: gt matched to the nearest active cell within this
    double pos_weight = 1.0;    // weight of positive-cell objectness terms
};

struct HeadLoss {
    double loss = 0.0;
    double cls_loss = 0.0;
    double reg_loss = 0.0;
    Tensor d_raw;                // [|active| x 7]
    std::vector<int> positives;  // per gt: assigned active slot, or -1
};

// Objectness BCE over all active cells plus smooth-L1 box regression at the
// positive cells; total = cls + lambda * reg.
HeadLoss toy_loss(const Tensor& raw, const std::vector<CellIndex>& active, const GridSpec& spec,
                  const std::vector<OBB>& gts, const LossCfg& cfg);

// One detection per line: class,score,cx,cy,w,l,yaw
void save_detections(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::string& path);

struct EvalSummary {
    std::vector<double> thresholds;
    std::vector<double> ap_car, ap_vru, ap_mean; // per threshold
    double map = 0.0;                            // mean of ap_mean over thresholds
    double ase = 0.0;                            // mean over TP matches at tp_match_dist
    double aoe_rad = 0.0;
    int tp_matches = 0;
};

EvalSummary evaluate_detections(const std::vector<Detection>& preds,
                                const std::vector<Detection>& gts,
                                const std::vector<double>& thresholds, double tp_match_dist);

} // namespace skpp

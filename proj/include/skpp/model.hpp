#pragma once
#include <string>
#include <vector>

#include "skpp/backbone.hpp"
#include "skpp/bench.hpp"
#include "skpp/config.hpp"
#include "skpp/detection.hpp"
#include "skpp/render.hpp"

namespace skpp {

struct TrainingError : std::runtime_error {
    int step = -1;
    TrainingError(const std::string& msg, int step_) : std::runtime_error(msg), step(step_) {}
};

// Rendering -> DPVCN backbone -> per-class heads.
struct Model {
    Config cfg;
    GridSpec grid;
    Renderer renderer;
    Backbone backbone;
    DetectionHead head_car, head_vru;

    // forward cache
    SparseGrid rendered;
    Tensor raw_car, raw_vru;

    void init(const Config& c);

    void forward(const PointCloud& cloud);
    // d_raw per head; propagates through backbone and renderer.
    void backward(const Tensor& d_raw_car, const Tensor& d_raw_vru);

    std::vector<Detection> decode_and_filter() const; // threshold + per-class NMS
    std::vector<Detection> detect(const PointCloud& cloud);

    std::vector<Parameter*> parameters();
    void set_train(bool t);
    BenchReport stats() const;

    const SparseGrid& head_map(const DetectionHead& h) const { return backbone.decoder.maps[h.scale]; }
};

struct StepLoss {
    double total = 0, cls = 0, reg = 0;
};

// SGD over the scenes (round robin), deterministic per seed. Throws
// TrainingError naming the step when the loss turns non-finite.
std::vector<StepLoss> train_toy(Model& model, const std::vector<Scene>& scenes, int steps,
                                double lr, uint64_t seed);

StepLoss scene_loss(Model& model, const Scene& scene, bool with_grad);

// Versioned text container: parameter names, shapes and values.
void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params);
void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params);

// Scene list CSV: header `scene,class,cx,cy,w,l,yaw,vx,vy`; rows grouped by
// scene id. Clouds are synthesized with the [scene] config keys.
std::vector<SceneSpec> load_scenes_csv(const std::string& path, const Config& cfg);
void save_scenes_csv(const std::string& path, const std::vector<SceneSpec>& scenes);
std::vector<Scene> synthesize_scenes(const std::vector<SceneSpec>& specs, const Config& cfg);

// The fixed 2-car + 1-vru overfit fixture used by tests and docs.
SceneSpec overfit_fixture(const Config& cfg);

} // namespace skpp

#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "skpp/backbone.hpp"
#include "skpp/grid.hpp"

namespace skpp {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key-value config with sections. Defaults are the full-scale `paper`
// preset; `desk` is the small 3-stage 64x64 configuration used by tests.
struct Config {
    // [grid]
    double x_min = -60, x_max = 60, y_min = -60, y_max = 60;
    double cell_size = 0.5;

    // [render]
    std::string render_mode = "skpp";
    int f_out = 32;
    int skpbev_kernel_points = 15;
    double skpbev_radius = 1.5;
    bool skpbev_use_xy = false;
    double kp_sigma_ratio = 0.5;

    // [backbone]
    std::vector<int> encoder_channels = {72, 96, 128, 146, 160};
    std::vector<std::string> block_types = {"dpvc"}; // broadcast when a single entry
    double dpvc_kp_radius = 3.75;
    int dpvc_kp_points = 15;
    bool dpvc_radius_in_cells = false;
    std::string dpvc_branch_layout = "figure";
    std::string dpvc_branch_norm = "bn";
    int decoder_channels = 128;

    // [heads]
    int car_scale = 2;
    int vru_scale = 1;
    double score_threshold = 0.5;
    double nms_iou = 0.5;

    // [train]
    int steps = 300;
    double lr = 0.01;
    double lambda_reg = 1.0;
    double assign_radius = 2.0;
    double pos_weight = 1.0;
    double rcs_sigma = 0.7;

    // [scene]
    int points_per_object = 24;
    int clutter_count = 30;
    uint64_t scene_seed = 1;

    // [run]
    uint64_t seed = 42;
    int threads = 0; // 0: leave the OpenMP default

    // [eval]
    std::vector<double> eval_thresholds = {0.5, 1.0, 2.0, 4.0};
    double tp_match_dist = 2.0;

    static Config paper();
    static Config desk();
    static Config preset(const std::string& name); // "paper" | "desk"

    void validate() const;

    GridSpec grid_spec() const { return {x_min, x_max, y_min, y_max, cell_size}; }
    BackboneCfg backbone_cfg() const;
    std::vector<BlockType> stage_block_types() const;
    int stages() const { return int(encoder_channels.size()); }
};

// Overlays key/value pairs from an INI-style file onto `cfg`. Unknown
// sections/keys and malformed values raise ConfigError naming the line.
void load_config_overlay(const std::string& path, Config& cfg);
void dump_config(const std::string& path, const Config& cfg);
std::string config_to_string(const Config& cfg);

} // namespace skpp

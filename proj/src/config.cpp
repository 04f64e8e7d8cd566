#include "skpp/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "skpp/render.hpp"

namespace skpp {

Config Config::paper() { return Config{}; }

Config Config::desk() {
    Config c;
    c.x_min = c.y_min = -16;
    c.x_max = c.y_max = 16;
    c.cell_size = 0.5; // 64 x 64
    c.f_out = 16;
    c.skpbev_kernel_points = 9;
    c.dpvc_kp_points = 9;
    c.encoder_channels = {24, 32, 48};
    c.decoder_channels = 32;
    c.car_scale = 1;
    c.vru_scale = 0;
    c.rcs_sigma = 0.0;
    c.steps = 300;
    c.lr = 0.01;
    c.pos_weight = 20.0;
    return c;
}

Config Config::preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw ConfigError("unknown preset: '" + name + "' (expected paper or desk)");
}

std::vector<BlockType> Config::stage_block_types() const {
    std::vector<BlockType> types;
    if (block_types.size() == 1) {
        types.assign(encoder_channels.size(), block_type_from_name(block_types[0]));
    } else {
        if (block_types.size() != encoder_channels.size())
            throw ConfigError("backbone.block_types: need one entry or one per stage");
        for (const auto& t : block_types) types.push_back(block_type_from_name(t));
    }
    return types;
}

BackboneCfg Config::backbone_cfg() const {
    BackboneCfg b;
    b.encoder_channels = encoder_channels;
    b.block_types = stage_block_types();
    b.input_channels = f_out;
    b.decoder_channels = decoder_channels;
    b.head_scales = {car_scale, vru_scale};
    std::sort(b.head_scales.begin(), b.head_scales.end());
    b.head_scales.erase(std::unique(b.head_scales.begin(), b.head_scales.end()), b.head_scales.end());
    b.dpvc.kp_radius = dpvc_kp_radius;
    b.dpvc.radius_in_cells = dpvc_radius_in_cells;
    b.dpvc.kp_points = dpvc_kp_points;
    b.dpvc.kp_sigma_ratio = kp_sigma_ratio;
    b.dpvc.kp_seed = splitmix64(seed ^ 0x6b70636f6e766bULL);
    if (dpvc_branch_layout == "figure") {
        b.dpvc.layout = BranchLayout::figure;
    } else if (dpvc_branch_layout == "body") {
        b.dpvc.layout = BranchLayout::body;
    } else {
        throw ConfigError("backbone.dpvc_branch_layout: expected figure or body");
    }
    if (dpvc_branch_norm == "bn") {
        b.dpvc.branch_norm = BranchNorm::bn;
    } else if (dpvc_branch_norm == "l2") {
        b.dpvc.branch_norm = BranchNorm::l2;
    } else {
        throw ConfigError("backbone.dpvc_branch_norm: expected bn or l2");
    }
    return b;
}

void Config::validate() const {
    try {
        grid_spec().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
    if (f_out < 1) throw ConfigError("render.f_out must be >= 1");
    render_mode_from_name(render_mode);
    if (skpbev_kernel_points < 1) throw ConfigError("render.skpbev_kernel_points must be >= 1");
    if (skpbev_radius <= 0) throw ConfigError("render.skpbev_radius must be positive");
    if (kp_sigma_ratio <= 0) throw ConfigError("render.kp_sigma_ratio must be positive");
    if (encoder_channels.size() < 2) throw ConfigError("backbone.encoder_channels: need >= 2 stages");
    if (dpvc_kp_points < 1) throw ConfigError("backbone.dpvc_kp_points must be >= 1");
    if (dpvc_kp_radius <= 0) throw ConfigError("backbone.dpvc_kp_radius must be positive");
    const int K = stages();
    if (car_scale < 0 || car_scale >= K) throw ConfigError("heads.car_scale out of range");
    if (vru_scale < 0 || vru_scale >= K) throw ConfigError("heads.vru_scale out of range");
    if (score_threshold < 0 || score_threshold > 1) throw ConfigError("heads.score_threshold must be in [0,1]");
    if (nms_iou < 0 || nms_iou > 1) throw ConfigError("heads.nms_iou must be in [0,1]");
    if (steps < 1) throw ConfigError("train.steps must be >= 1");
    if (lr < 0) throw ConfigError("train.lr must be non-negative");
    if (lambda_reg < 0) throw ConfigError("train.lambda_reg must be >= 0");
    if (assign_radius <= 0) throw ConfigError("train.assign_radius must be positive");
    if (pos_weight <= 0) throw ConfigError("train.pos_weight must be positive");
    if (rcs_sigma < 0) throw ConfigError("train.rcs_sigma must be >= 0");
    if (points_per_object < 1) throw ConfigError("scene.points_per_object must be >= 1");
    if (clutter_count < 0) throw ConfigError("scene.clutter_count must be >= 0");
    if (eval_thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
    for (double t : eval_thresholds)
        if (t <= 0) throw ConfigError("eval.thresholds must be positive");
    if (tp_match_dist <= 0) throw ConfigError("eval.tp_match_dist must be positive");
    // grid dims must survive the pooling chain
    const GridSpec gs = grid_spec();
    const int div = 1 << (K - 1);
    if (gs.nx() % div != 0 || gs.ny() % div != 0)
        throw ConfigError("grid dims must be divisible by 2^(stages-1)");
    try {
        backbone_cfg().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("backbone: ") + e.what());
    }
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, int line) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line) + ": not a number: '" + v + "'");
    }
}

int parse_int(const std::string& v, int line) {
    try {
        size_t pos = 0;
        long d = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return int(d);
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line) + ": not an integer: '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v, int line) {
    try {
        size_t pos = 0;
        unsigned long long d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return uint64_t(d);
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line) + ": not an integer: '" + v + "'");
    }
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config line " + std::to_string(line) + ": not a boolean: '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& v, int line) {
    std::vector<int> out;
    for (const auto& item : split_list(v)) out.push_back(parse_int(item, line));
    if (out.empty()) throw ConfigError("config line " + std::to_string(line) + ": empty list");
    return out;
}

std::vector<double> parse_double_list(const std::string& v, int line) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(parse_double(item, line));
    if (out.empty()) throw ConfigError("config line " + std::to_string(line) + ": empty list");
    return out;
}

} // namespace

void load_config_overlay(const std::string& path, Config& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string sk = section + "." + key;

        if (sk == "grid.x_min") cfg.x_min = parse_double(val, lineno);
        else if (sk == "grid.x_max") cfg.x_max = parse_double(val, lineno);
        else if (sk == "grid.y_min") cfg.y_min = parse_double(val, lineno);
        else if (sk == "grid.y_max") cfg.y_max = parse_double(val, lineno);
        else if (sk == "grid.cell_size") cfg.cell_size = parse_double(val, lineno);
        else if (sk == "render.mode") cfg.render_mode = val;
        else if (sk == "render.f_out") cfg.f_out = parse_int(val, lineno);
        else if (sk == "render.skpbev_kernel_points") cfg.skpbev_kernel_points = parse_int(val, lineno);
        else if (sk == "render.skpbev_radius") cfg.skpbev_radius = parse_double(val, lineno);
        else if (sk == "render.skpbev_use_xy") cfg.skpbev_use_xy = parse_bool(val, lineno);
        else if (sk == "render.kp_sigma_ratio") cfg.kp_sigma_ratio = parse_double(val, lineno);
        else if (sk == "backbone.encoder_channels") cfg.encoder_channels = parse_int_list(val, lineno);
        else if (sk == "backbone.block_types") cfg.block_types = split_list(val);
        else if (sk == "backbone.dpvc_kp_radius") cfg.dpvc_kp_radius = parse_double(val, lineno);
        else if (sk == "backbone.dpvc_kp_points") cfg.dpvc_kp_points = parse_int(val, lineno);
        else if (sk == "backbone.dpvc_radius_in_cells") cfg.dpvc_radius_in_cells = parse_bool(val, lineno);
        else if (sk == "backbone.dpvc_branch_layout") cfg.dpvc_branch_layout = val;
        else if (sk == "backbone.dpvc_branch_norm") cfg.dpvc_branch_norm = val;
        else if (sk == "backbone.decoder_channels") cfg.decoder_channels = parse_int(val, lineno);
        else if (sk == "heads.car_scale") cfg.car_scale = parse_int(val, lineno);
        else if (sk == "heads.vru_scale") cfg.vru_scale = parse_int(val, lineno);
        else if (sk == "heads.score_threshold") cfg.score_threshold = parse_double(val, lineno);
        else if (sk == "heads.nms_iou") cfg.nms_iou = parse_double(val, lineno);
        else if (sk == "train.steps") cfg.steps = parse_int(val, lineno);
        else if (sk == "train.lr") cfg.lr = parse_double(val, lineno);
        else if (sk == "train.lambda_reg") cfg.lambda_reg = parse_double(val, lineno);
        else if (sk == "train.assign_radius") cfg.assign_radius = parse_double(val, lineno);
        else if (sk == "train.pos_weight") cfg.pos_weight = parse_double(val, lineno);
        else if (sk == "train.rcs_sigma") cfg.rcs_sigma = parse_double(val, lineno);
        else if (sk == "scene.points_per_object") cfg.points_per_object = parse_int(val, lineno);
        else if (sk == "scene.clutter_count") cfg.clutter_count = parse_int(val, lineno);
        else if (sk == "scene.seed") cfg.scene_seed = parse_u64(val, lineno);
        else if (sk == "run.seed") cfg.seed = parse_u64(val, lineno);
        else if (sk == "run.threads") cfg.threads = parse_int(val, lineno);
        else if (sk == "eval.thresholds") cfg.eval_thresholds = parse_double_list(val, lineno);
        else if (sk == "eval.tp_match_dist") cfg.tp_match_dist = parse_double(val, lineno);
        else
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "' in section [" + section + "]");
    }
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    char buf[64];
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        s += buf;
    }
    return s;
}

std::string join_strings(const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += v[i];
    }
    return s;
}

} // namespace

std::string config_to_string(const Config& cfg) {
    std::ostringstream out;
    char buf[64];
    auto num = [&](double d) {
        std::snprintf(buf, sizeof(buf), "%.17g", d);
        return std::string(buf);
    };
    out << "[grid]\n";
    out << "x_min = " << num(cfg.x_min) << "\n";
    out << "x_max = " << num(cfg.x_max) << "\n";
    out << "y_min = " << num(cfg.y_min) << "\n";
    out << "y_max = " << num(cfg.y_max) << "\n";
    out << "cell_size = " << num(cfg.cell_size) << "\n\n";
    out << "[render]\n";
    out << "mode = " << cfg.render_mode << "\n";
    out << "f_out = " << cfg.f_out << "\n";
    out << "skpbev_kernel_points = " << cfg.skpbev_kernel_points << "\n";
    out << "skpbev_radius = " << num(cfg.skpbev_radius) << "\n";
    out << "skpbev_use_xy = " << (cfg.skpbev_use_xy ? "true" : "false") << "\n";
    out << "kp_sigma_ratio = " << num(cfg.kp_sigma_ratio) << "\n\n";
    out << "[backbone]\n";
    out << "encoder_channels = " << join_ints(cfg.encoder_channels) << "\n";
    out << "block_types = " << join_strings(cfg.block_types) << "\n";
    out << "dpvc_kp_radius = " << num(cfg.dpvc_kp_radius) << "\n";
    out << "dpvc_kp_points = " << cfg.dpvc_kp_points << "\n";
    out << "dpvc_radius_in_cells = " << (cfg.dpvc_radius_in_cells ? "true" : "false") << "\n";
    out << "dpvc_branch_layout = " << cfg.dpvc_branch_layout << "\n";
    out << "dpvc_branch_norm = " << cfg.dpvc_branch_norm << "\n";
    out << "decoder_channels = " << cfg.decoder_channels << "\n\n";
    out << "[heads]\n";
    out << "car_scale = " << cfg.car_scale << "\n";
    out << "vru_scale = " << cfg.vru_scale << "\n";
    out << "score_threshold = " << num(cfg.score_threshold) << "\n";
    out << "nms_iou = " << num(cfg.nms_iou) << "\n\n";
    out << "[train]\n";
    out << "steps = " << cfg.steps << "\n";
    out << "lr = " << num(cfg.lr) << "\n";
    out << "lambda_reg = " << num(cfg.lambda_reg) << "\n";
    out << "assign_radius = " << num(cfg.assign_radius) << "\n";
    out << "pos_weight = " << num(cfg.pos_weight) << "\n";
    out << "rcs_sigma = " << num(cfg.rcs_sigma) << "\n\n";
    out << "[scene]\n";
    out << "points_per_object = " << cfg.points_per_object << "\n";
    out << "clutter_count = " << cfg.clutter_count << "\n";
    out << "seed = " << cfg.scene_seed << "\n\n";
    out << "[run]\n";
    out << "seed = " << cfg.seed << "\n";
    out << "threads = " << cfg.threads << "\n\n";
    out << "[eval]\n";
    out << "thresholds = " << join_doubles(cfg.eval_thresholds) << "\n";
    out << "tp_match_dist = " << num(cfg.tp_match_dist) << "\n";
    return out.str();
}

void dump_config(const std::string& path, const Config& cfg) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << config_to_string(cfg);
}

} // namespace skpp

#include "skpp/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "skpp/model.hpp"

namespace skpp {

namespace {

struct CommonOpts {
    std::string preset = "paper";
    std::string config_path;
    int64_t seed = -1;
    int threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--preset", o.preset, "configuration preset: paper or desk");
    cmd->add_option("--config", o.config_path, "config file overlaying the preset");
    cmd->add_option("--seed", o.seed, "override run seed");
    cmd->add_option("--threads", o.threads, "worker thread count (0 = library default)");
}

Config resolve_config(const CommonOpts& o) {
    Config cfg = Config::preset(o.preset);
    if (!o.config_path.empty()) load_config_overlay(o.config_path, cfg);
    if (o.seed >= 0) cfg.seed = uint64_t(o.seed);
    if (o.threads >= 0) cfg.threads = o.threads;
    cfg.validate();
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
    return cfg;
}

std::vector<SceneSpec> resolve_scenes(const std::string& arg, const Config& cfg) {
    if (arg == "fixture") return {overfit_fixture(cfg)};
    return load_scenes_csv(arg, cfg);
}

std::vector<Detection> truth_as_detections(const Scene& scene) {
    std::vector<Detection> out;
    for (const auto& obj : scene.truth) out.push_back({obj.box.canonical(), 1.0, obj.cls});
    return out;
}

void write_metrics_csv(std::ostream& out, const EvalSummary& s) {
    char buf[128];
    out << "metric,threshold,value\n";
    for (size_t k = 0; k < s.thresholds.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "ap_car,%g,%.17g\n", s.thresholds[k], s.ap_car[k]);
        out << buf;
        std::snprintf(buf, sizeof(buf), "ap_vru,%g,%.17g\n", s.thresholds[k], s.ap_vru[k]);
        out << buf;
        std::snprintf(buf, sizeof(buf), "ap_mean,%g,%.17g\n", s.thresholds[k], s.ap_mean[k]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "map,,%.17g\n", s.map);
    out << buf;
    std::snprintf(buf, sizeof(buf), "ase,,%.17g\n", s.ase);
    out << buf;
    std::snprintf(buf, sizeof(buf), "aoe_deg,,%.17g\n", s.aoe_rad * 180.0 / M_PI);
    out << buf;
}

void print_eval_table(const EvalSummary& s) {
    std::printf("%-10s %10s %10s %10s\n", "threshold", "AP car", "AP vru", "AP mean");
    for (size_t k = 0; k < s.thresholds.size(); ++k)
        std::printf("%-10g %10.4f %10.4f %10.4f\n", s.thresholds[k], s.ap_car[k], s.ap_vru[k],
                    s.ap_mean[k]);
    std::printf("mAP   %.4f\n", s.map);
    std::printf("ASE   %.4f\n", s.ase);
    std::printf("AOE   %.4f deg\n", s.aoe_rad * 180.0 / M_PI);
}

int cmd_render(const CommonOpts& common, const std::string& points_path, const std::string& mode,
               const std::string& out_path) {
    Config cfg = resolve_config(common);
    if (!mode.empty()) {
        try {
            render_mode_from_name(mode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("--mode: ") + e.what());
        }
        cfg.render_mode = mode;
    }
    Model model;
    model.init(cfg);
    model.set_train(false);
    const PointCloud cloud = load_points_csv(points_path);
    const SparseGrid g = model.renderer.forward(model.grid, cloud);
    dump_grid(g, out_path);
    std::printf("mode=%s active_cells=%d density=%.6f channels=%d\n", cfg.render_mode.c_str(),
                g.size(), g.density(), g.channels);
    return 0;
}

int cmd_forward(const CommonOpts& common, const std::string& points_path,
                const std::string& params_path, const std::string& out_path) {
    Config cfg = resolve_config(common);
    Model model;
    model.init(cfg);
    load_checkpoint(params_path, model.parameters());
    model.set_train(false);
    const PointCloud cloud = load_points_csv(points_path);
    const std::vector<Detection> dets = model.detect(cloud);
    save_detections(out_path, dets);
    std::printf("detections=%zu\n", dets.size());
    return 0;
}

int cmd_train_toy(const CommonOpts& common, const std::string& scenes_arg,
                  const std::string& out_params, const std::string& loss_out) {
    Config cfg = resolve_config(common);
    Model model;
    model.init(cfg);
    const std::vector<SceneSpec> specs = resolve_scenes(scenes_arg, cfg);
    const std::vector<Scene> scenes = synthesize_scenes(specs, cfg);
    const std::vector<StepLoss> trace = train_toy(model, scenes, cfg.steps, cfg.lr, cfg.seed);
    save_checkpoint(out_params, model.parameters());
    if (!loss_out.empty()) {
        std::ofstream out(loss_out);
        if (!out) throw ParseError("cannot write loss trace: " + loss_out);
        out << "step,total,cls,reg\n";
        char buf[160];
        for (size_t k = 0; k < trace.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", k, trace[k].total,
                          trace[k].cls, trace[k].reg);
            out << buf;
        }
    }
    std::printf("steps=%zu initial_loss=%.6f final_loss=%.6f\n", trace.size(),
                trace.front().total, trace.back().total);
    return 0;
}

int cmd_synth(const CommonOpts& common, const std::string& scenes_arg, const std::string& out_dir) {
    Config cfg = resolve_config(common);
    const std::vector<SceneSpec> specs = resolve_scenes(scenes_arg, cfg);
    const std::vector<Scene> scenes = synthesize_scenes(specs, cfg);
    std::filesystem::create_directories(out_dir);
    if (scenes_arg == "fixture") save_scenes_csv(out_dir + "/scenes.csv", specs);
    for (size_t k = 0; k < scenes.size(); ++k) {
        save_points_csv(out_dir + "/points_" + std::to_string(k) + ".csv", scenes[k].cloud);
        save_detections(out_dir + "/gt_" + std::to_string(k) + ".csv", truth_as_detections(scenes[k]));
    }
    std::printf("scenes=%zu out_dir=%s\n", scenes.size(), out_dir.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& det_path, const std::string& gt_path,
             const std::string& thresholds_arg, const std::string& out_csv) {
    Config cfg = resolve_config(common);
    std::vector<double> thresholds = cfg.eval_thresholds;
    if (!thresholds_arg.empty()) {
        thresholds.clear();
        std::stringstream ss(thresholds_arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                thresholds.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("--thresholds: not a number: '" + item + "'");
            }
        }
        if (thresholds.empty()) throw ConfigError("--thresholds: empty list");
    }
    const std::vector<Detection> dets = load_detections(det_path);
    const std::vector<Detection> gts = load_detections(gt_path);
    const EvalSummary s = evaluate_detections(dets, gts, thresholds, cfg.tp_match_dist);
    print_eval_table(s);
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw ParseError("cannot write metrics csv: " + out_csv);
        write_metrics_csv(out, s);
    }
    return 0;
}

int64_t network_macs(const BenchReport& r) {
    int64_t total = 0;
    for (const auto& l : r.layers)
        if (l.name.rfind("backbone.", 0) == 0 || l.name.rfind("head.", 0) == 0) total += l.macs;
    return total;
}

int cmd_bench(const CommonOpts& common, const std::string& points_path, int repeat,
              const std::string& out_csv) {
    Config cfg = resolve_config(common);
    if (repeat < 1) throw ConfigError("--repeat must be >= 1");
    Model model;
    model.init(cfg);
    model.set_train(false);
    const PointCloud cloud = load_points_csv(points_path);

    auto run_once = [&](bool dense) {
        const SparseGrid rendered = model.renderer.forward(model.grid, cloud);
        const SparseGrid input = dense ? from_dense_all(to_dense(rendered)) : rendered;
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<SparseGrid>& maps = model.backbone.forward(input);
        model.head_car.forward(maps[model.head_car.scale]);
        model.head_vru.forward(maps[model.head_vru.scale]);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return std::make_pair(model.stats(), ms);
    };

    std::vector<double> sparse_ms, dense_ms;
    BenchReport sparse_report, dense_report;
    double density = 0.0;
    {
        const SparseGrid rendered = model.renderer.forward(model.grid, cloud);
        density = rendered.density();
    }
    for (int k = 0; k < repeat; ++k) {
        auto [rep, ms] = run_once(false);
        sparse_report = rep;
        sparse_ms.push_back(ms);
    }
    for (int k = 0; k < repeat; ++k) {
        auto [rep, ms] = run_once(true);
        dense_report = rep;
        dense_ms.push_back(ms);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };

    const int64_t smacs = network_macs(sparse_report);
    const int64_t dmacs = network_macs(dense_report);
    std::printf("%-28s %14s %14s %10s\n", "layer", "pairs", "macs", "ms");
    for (const auto& l : sparse_report.layers)
        std::printf("%-28s %14lld %14lld %10.3f\n", l.name.c_str(), (long long)l.pairs,
                    (long long)l.macs, l.ms);
    std::printf("density=%.6f\n", density);
    std::printf("sparse_macs=%lld dense_macs=%lld mac_ratio=%.6f\n", (long long)smacs,
                (long long)dmacs, dmacs > 0 ? double(smacs) / double(dmacs) : 0.0);
    std::printf("sparse_ms_median=%.3f dense_ms_median=%.3f\n", median(sparse_ms), median(dense_ms));

    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw ParseError("cannot write bench csv: " + out_csv);
        out << "layer,pairs,macs,ms\n";
        char buf[256];
        for (const auto& l : sparse_report.layers) {
            std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%.6f\n", l.name.c_str(), (long long)l.pairs,
                          (long long)l.macs, l.ms);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), "total_sparse,,%lld,%.6f\n", (long long)smacs,
                      median(sparse_ms));
        out << buf;
        std::snprintf(buf, sizeof(buf), "total_dense,,%lld,%.6f\n", (long long)dmacs, median(dense_ms));
        out << buf;
    }
    return 0;
}

int cmd_ablation(const CommonOpts& common, const std::string& scenes_arg, int steps,
                 const std::string& out_csv) {
    Config base = resolve_config(common);
    if (steps > 0) base.steps = steps;
    const std::vector<SceneSpec> specs = resolve_scenes(scenes_arg, base);

    const char* renderings[3] = {"spp", "skpbev", "skpp"};
    const char* backbones[2] = {"sscn", "dpvcn"};

    std::ofstream csv;
    if (!out_csv.empty()) {
        csv.open(out_csv);
        if (!csv) throw ParseError("cannot write ablation csv: " + out_csv);
        csv << "rendering,backbone,ap4.0,map,ase,aoe_deg\n";
    }
    std::printf("%-8s %-6s %8s %8s %8s %8s\n", "render", "bb", "AP4.0", "mAP", "ASE", "AOE");
    for (const char* bb : backbones) {
        for (const char* rm : renderings) {
            Config cfg = base;
            cfg.render_mode = rm;
            cfg.block_types = {std::string(bb) == "dpvcn" ? "dpvc" : "sscn"};
            cfg.validate();
            Model model;
            model.init(cfg);
            const std::vector<Scene> scenes = synthesize_scenes(specs, cfg);
            train_toy(model, scenes, cfg.steps, cfg.lr, cfg.seed);

            std::vector<Detection> preds, gts;
            for (const auto& scene : scenes) {
                const std::vector<Detection> d = model.detect(scene.cloud);
                preds.insert(preds.end(), d.begin(), d.end());
                const std::vector<Detection> t = truth_as_detections(scene);
                gts.insert(gts.end(), t.begin(), t.end());
            }
            const EvalSummary s = evaluate_detections(preds, gts, cfg.eval_thresholds, cfg.tp_match_dist);
            const double ap4 = s.ap_mean.back(); // thresholds end at 4 m by default
            std::printf("%-8s %-6s %8.4f %8.4f %8.4f %8.4f\n", rm, bb, ap4, s.map, s.ase,
                        s.aoe_rad * 180.0 / M_PI);
            if (csv.is_open()) {
                char buf[256];
                std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g\n", rm, bb, ap4, s.map,
                              s.ase, s.aoe_rad * 180.0 / M_PI);
                csv << buf;
            }
        }
    }
    return 0;
}

int cmd_dump_config(const CommonOpts& common, const std::string& out_path) {
    const Config cfg = resolve_config(common);
    if (out_path.empty()) {
        std::cout << config_to_string(cfg);
    } else {
        dump_config(out_path, cfg);
    }
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"sparse radar BEV object detection (SKPP rendering + DPVCN backbone)"};
    app.require_subcommand(1);

    CommonOpts render_common, forward_common, train_common, synth_common, eval_common, bench_common,
        ablation_common, dump_common;

    auto* render = app.add_subcommand("render", "render a point cloud to a sparse grid dump");
    std::string render_points, render_mode, render_out;
    add_common(render, render_common);
    render->add_option("--points", render_points, "input points CSV")->required();
    render->add_option("--mode", render_mode, "rendering mode: spp, skpbev or skpp");
    render->add_option("--out", render_out, "grid dump output path")->required();

    auto* fwd = app.add_subcommand("forward", "run the full pipeline and write detections");
    std::string fwd_points, fwd_params, fwd_out;
    add_common(fwd, forward_common);
    fwd->add_option("--points", fwd_points, "input points CSV")->required();
    fwd->add_option("--params", fwd_params, "parameter checkpoint")->required();
    fwd->add_option("--out", fwd_out, "detections output path")->required();

    auto* train = app.add_subcommand("train-toy", "overfit the toy model on synthetic scenes");
    std::string train_scenes = "fixture", train_out, train_loss;
    add_common(train, train_common);
    train->add_option("--scenes", train_scenes, "scenes CSV path, or 'fixture'");
    train->add_option("--out", train_out, "checkpoint output path")->required();
    train->add_option("--loss-out", train_loss, "per-step loss trace CSV");

    auto* synth = app.add_subcommand("synth", "write synthetic scene points and ground truth");
    std::string synth_scenes = "fixture", synth_dir;
    add_common(synth, synth_common);
    synth->add_option("--scenes", synth_scenes, "scenes CSV path, or 'fixture'");
    synth->add_option("--out-dir", synth_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate detections against ground truth");
    std::string eval_dets, eval_gt, eval_thresholds, eval_csv;
    add_common(eval, eval_common);
    eval->add_option("--detections", eval_dets, "detections CSV")->required();
    eval->add_option("--ground-truth", eval_gt, "ground-truth CSV")->required();
    eval->add_option("--thresholds", eval_thresholds, "comma list of match distances (meters)");
    eval->add_option("--out-csv", eval_csv, "machine-readable metrics CSV");

    auto* bench = app.add_subcommand("bench", "compare the sparse pipeline against dense execution");
    std::string bench_points, bench_csv;
    int bench_repeat = 1;
    add_common(bench, bench_common);
    bench->add_option("--points", bench_points, "input points CSV")->required();
    bench->add_option("--repeat", bench_repeat, "timing repetitions (median reported)");
    bench->add_option("--out-csv", bench_csv, "per-layer counters CSV");

    auto* ablation = app.add_subcommand("ablation", "train/eval all rendering x backbone combinations");
    std::string ablation_scenes = "fixture", ablation_csv;
    int ablation_steps = 0;
    add_common(ablation, ablation_common);
    ablation->add_option("--scenes", ablation_scenes, "scenes CSV path, or 'fixture'");
    ablation->add_option("--steps", ablation_steps, "training steps per combination");
    ablation->add_option("--out", ablation_csv, "metrics CSV, one row per combination");

    auto* dump = app.add_subcommand("dump-config", "print or write the resolved configuration");
    std::string dump_out;
    add_common(dump, dump_common);
    dump->add_option("--out", dump_out, "output path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (render->parsed()) return cmd_render(render_common, render_points, render_mode, render_out);
        if (fwd->parsed()) return cmd_forward(forward_common, fwd_points, fwd_params, fwd_out);
        if (train->parsed()) return cmd_train_toy(train_common, train_scenes, train_out, train_loss);
        if (synth->parsed()) return cmd_synth(synth_common, synth_scenes, synth_dir);
        if (eval->parsed()) return cmd_eval(eval_common, eval_dets, eval_gt, eval_thresholds, eval_csv);
        if (bench->parsed()) return cmd_bench(bench_common, bench_points, bench_repeat, bench_csv);
        if (ablation->parsed())
            return cmd_ablation(ablation_common, ablation_scenes, ablation_steps, ablation_csv);
        if (dump->parsed()) return cmd_dump_config(dump_common, dump_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}

} // namespace skpp

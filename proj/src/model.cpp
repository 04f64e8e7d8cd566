#include "skpp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace skpp {

void Model::init(const Config& c) {
    c.validate();
    cfg = c;
    grid = c.grid_spec();

    Rng rng(c.seed);
    Rng r_render = rng.split(1), r_backbone = rng.split(2), r_heads = rng.split(3);

    renderer.mode = render_mode_from_name(c.render_mode);
    renderer.spp.init("render.spp", c.f_out, r_render);
    const KernelPointSet skpbev_kernel = place_kernel_points(
        c.skpbev_kernel_points, c.skpbev_radius, splitmix64(c.seed ^ 0x736b706265764bULL),
        c.kp_sigma_ratio);
    renderer.skpbev.init("render.skpbev", skpbev_kernel, c.f_out, c.skpbev_use_xy, r_render);
    renderer.agg.init("render.agg", 2, c.f_out);

    backbone.init("backbone", c.backbone_cfg(), r_backbone);

    Rng rh1 = r_heads.split(1), rh2 = r_heads.split(2);
    head_car.init("head.car", ObjectClass::car, c.car_scale, c.decoder_channels, rh1);
    head_vru.init("head.vru", ObjectClass::vru, c.vru_scale, c.decoder_channels, rh2);
}

void Model::forward(const PointCloud& cloud) {
    rendered = renderer.forward(grid, cloud);
    const std::vector<SparseGrid>& maps = backbone.forward(rendered);
    raw_car = head_car.forward(maps[head_car.scale]);
    raw_vru = head_vru.forward(maps[head_vru.scale]);
}

void Model::backward(const Tensor& d_raw_car, const Tensor& d_raw_vru) {
    const int K = backbone.encoder.cfg.stages();
    std::vector<Tensor> d_maps(K);
    const int min_level = backbone.decoder.min_level;
    for (int k = min_level; k < K; ++k)
        d_maps[k] = Tensor(backbone.decoder.maps[k].size(), backbone.decoder.cfg.decoder_channels);

    const Tensor d_car_map = head_car.backward(d_raw_car);
    for (size_t i = 0; i < d_car_map.v.size(); ++i) d_maps[head_car.scale].v[i] += d_car_map.v[i];
    const Tensor d_vru_map = head_vru.backward(d_raw_vru);
    for (size_t i = 0; i < d_vru_map.v.size(); ++i) d_maps[head_vru.scale].v[i] += d_vru_map.v[i];

    const Tensor d_rendered = backbone.backward(std::move(d_maps));
    renderer.backward(d_rendered);
}

std::vector<Detection> Model::decode_and_filter() const {
    std::vector<Detection> out;
    const DetectionHead* heads[2] = {&head_car, &head_vru};
    const Tensor* raws[2] = {&raw_car, &raw_vru};
    for (int h = 0; h < 2; ++h) {
        const SparseGrid& map = head_map(*heads[h]);
        std::vector<Detection> dets;
        for (int s = 0; s < raws[h]->rows; ++s) {
            Detection d = decode_obb(map.spec, map.active[s], raws[h]->row(s), heads[h]->cls);
            if (d.score >= cfg.score_threshold) dets.push_back(d);
        }
        const std::vector<Detection> kept = nms(dets, cfg.nms_iou);
        out.insert(out.end(), kept.begin(), kept.end());
    }
    return out;
}

std::vector<Detection> Model::detect(const PointCloud& cloud) {
    forward(cloud);
    return decode_and_filter();
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    renderer.params(out);
    backbone.params(out);
    head_car.params(out);
    head_vru.params(out);
    return out;
}

void Model::set_train(bool t) {
    renderer.set_train(t);
    backbone.set_train(t);
}

BenchReport Model::stats() const {
    BenchReport r;
    renderer.stats(r.layers);
    backbone.stats(r.layers);
    head_car.stats(r.layers);
    head_vru.stats(r.layers);
    return r;
}

StepLoss scene_loss(Model& model, const Scene& scene, bool with_grad) {
    model.forward(scene.cloud);
    LossCfg lcfg{model.cfg.lambda_reg, model.cfg.assign_radius, model.cfg.pos_weight};

    std::vector<OBB> car_gts, vru_gts;
    for (const auto& obj : scene.truth)
        (obj.cls == ObjectClass::car ? car_gts : vru_gts).push_back(obj.box);

    const SparseGrid& car_map = model.head_map(model.head_car);
    const SparseGrid& vru_map = model.head_map(model.head_vru);
    HeadLoss lc = toy_loss(model.raw_car, car_map.active, car_map.spec, car_gts, lcfg);
    HeadLoss lv = toy_loss(model.raw_vru, vru_map.active, vru_map.spec, vru_gts, lcfg);

    if (with_grad) model.backward(lc.d_raw, lv.d_raw);

    StepLoss out;
    out.total = lc.loss + lv.loss;
    out.cls = lc.cls_loss + lv.cls_loss;
    out.reg = lc.reg_loss + lv.reg_loss;
    return out;
}

std::vector<StepLoss> train_toy(Model& model, const std::vector<Scene>& scenes, int steps,
                                double lr, uint64_t seed) {
    check(!scenes.empty(), "train_toy: at least one scene required");
    check(lr >= 0.0, "train_toy: lr must be non-negative");
    model.set_train(true);
    std::vector<Parameter*> params = model.parameters();
    for (Parameter* p : params) p->zero_grad();

    std::vector<StepLoss> trace;
    trace.reserve(steps);
    Rng rng(seed);
    for (int step = 0; step < steps; ++step) {
        const Scene& base = scenes[step % scenes.size()];
        Scene scene = base;
        if (model.cfg.rcs_sigma > 0.0)
            scene.cloud = augment_rcs(base.cloud, model.cfg.rcs_sigma, rng.split(step).seed());
        const StepLoss l = scene_loss(model, scene, true);
        if (!std::isfinite(l.total))
            throw TrainingError("training diverged (non-finite loss) at step " + std::to_string(step),
                                step);
        if (lr > 0.0) {
            sgd_step(params, lr);
        } else {
            for (Parameter* p : params) p->zero_grad();
        }
        trace.push_back(l);
    }
    model.set_train(false);
    return trace;
}

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ofstream out(path);
    if (!out) throw ParseError("checkpoint: cannot write " + path);
    out << "skpp-checkpoint v1\n";
    char buf[64];
    for (const Parameter* p : params) {
        out << "param " << p->name << " " << p->shape.size();
        for (int d : p->shape) out << " " << d;
        out << "\n";
        for (size_t k = 0; k < p->w.size(); ++k) {
            std::snprintf(buf, sizeof(buf), k + 1 < p->w.size() ? "%.17g " : "%.17g", p->w[k]);
            out << buf;
        }
        out << "\n";
    }
}

void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ifstream in(path);
    if (!in) throw ParseError("checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "skpp-checkpoint v1")
        throw ParseError("checkpoint: bad or missing version header in " + path);

    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : params) by_name[p->name] = p;
    std::map<std::string, bool> seen;

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream hs(line);
        std::string tag, name;
        size_t rank = 0;
        hs >> tag >> name >> rank;
        if (tag != "param" || hs.fail())
            throw ParseError("checkpoint: malformed parameter header: " + line);
        std::vector<int> shape(rank);
        for (size_t d = 0; d < rank; ++d) hs >> shape[d];
        if (hs.fail()) throw ParseError("checkpoint: malformed shape for " + name);

        auto it = by_name.find(name);
        if (it == by_name.end())
            throw ConfigError("checkpoint: unknown parameter '" + name + "'");
        Parameter* p = it->second;
        if (p->shape != shape)
            throw ConfigError("checkpoint: shape mismatch for parameter '" + name + "'");

        if (!std::getline(in, line))
            throw ParseError("checkpoint: missing values for parameter '" + name + "'");
        std::istringstream vs(line);
        for (size_t k = 0; k < p->w.size(); ++k) {
            vs >> p->w[k];
            if (vs.fail())
                throw ParseError("checkpoint: malformed values for parameter '" + name + "'");
        }
        seen[name] = true;
    }
    for (const Parameter* p : params) {
        if (!seen.count(p->name))
            throw ConfigError("checkpoint: missing parameter '" + p->name + "'");
    }
}

std::vector<SceneSpec> load_scenes_csv(const std::string& path, const Config& cfg) {
    std::ifstream in(path);
    if (!in) throw ParseError("scenes csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("scenes csv: empty file: " + path);
    const std::string want = "scene,class,cx,cy,w,l,yaw,vx,vy";
    {
        std::string norm;
        for (char ch : line)
            if (ch != '\r' && ch != ' ') norm.push_back(ch);
        if (norm != want) throw ParseError("scenes csv: bad header (expected " + want + ")");
    }
    std::map<int, SceneSpec> by_id;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 9)
            throw ParseError("scenes csv: row " + std::to_string(row) + ": expected 9 fields");
        try {
            const int id = std::stoi(fields[0]);
            SceneObject obj;
            obj.cls = class_from_name(fields[1]);
            obj.box.cx = std::stod(fields[2]);
            obj.box.cy = std::stod(fields[3]);
            obj.box.w = std::stod(fields[4]);
            obj.box.l = std::stod(fields[5]);
            obj.box.yaw = std::stod(fields[6]);
            obj.box = obj.box.canonical();
            obj.vx = std::stod(fields[7]);
            obj.vy = std::stod(fields[8]);
            by_id[id].objects.push_back(obj);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("scenes csv: row " + std::to_string(row) + ": non-numeric field");
        }
    }
    std::vector<SceneSpec> out;
    for (auto& [id, spec] : by_id) {
        spec.clutter_count = cfg.clutter_count;
        spec.points_per_object = cfg.points_per_object;
        spec.seed = splitmix64(cfg.scene_seed ^ uint64_t(id + 1));
        out.push_back(std::move(spec));
    }
    return out;
}

void save_scenes_csv(const std::string& path, const std::vector<SceneSpec>& scenes) {
    std::ofstream out(path);
    if (!out) throw ParseError("scenes csv: cannot write " + path);
    out << "scene,class,cx,cy,w,l,yaw,vx,vy\n";
    char buf[256];
    for (size_t id = 0; id < scenes.size(); ++id) {
        for (const auto& obj : scenes[id].objects) {
            std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", id,
                          class_name(obj.cls), obj.box.cx, obj.box.cy, obj.box.w, obj.box.l,
                          obj.box.yaw, obj.vx, obj.vy);
            out << buf;
        }
    }
}

std::vector<Scene> synthesize_scenes(const std::vector<SceneSpec>& specs, const Config& cfg) {
    std::vector<Scene> out;
    out.reserve(specs.size());
    const Extent extent = cfg.grid_spec().extent();
    for (const auto& spec : specs) out.push_back(synth_scene(extent, spec));
    return out;
}

SceneSpec overfit_fixture(const Config& cfg) {
    SceneSpec spec;
    spec.points_per_object = cfg.points_per_object;
    spec.clutter_count = cfg.clutter_count;
    spec.seed = splitmix64(cfg.scene_seed ^ 0xf1f7u);

    SceneObject car1;
    car1.box = OBB(5.0, 3.0, 2.0, 4.5, 0.3);
    car1.vx = 8.0;
    car1.vy = 0.0;
    car1.cls = ObjectClass::car;
    SceneObject car2;
    car2.box = OBB(-6.0, -4.0, 1.9, 4.2, -1.1);
    car2.vx = -3.0;
    car2.vy = 5.0;
    car2.cls = ObjectClass::car;
    SceneObject vru;
    vru.box = OBB(-2.0, 6.5, 0.7, 0.8, 1.9);
    vru.vx = 1.0;
    vru.vy = -1.0;
    vru.cls = ObjectClass::vru;
    spec.objects = {car1, car2, vru};
    return spec;
}

} // namespace skpp

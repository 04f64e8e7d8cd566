#include "skpp/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace skpp {

namespace {

// Per-site L2 normalization with its gradient.
Tensor l2norm_forward(const Tensor& x) {
    Tensor y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double norm = 0.0;
        for (int c = 0; c < x.cols; ++c) norm += x.at(i, c) * x.at(i, c);
        norm = std::sqrt(std::max(norm, 1e-24));
        for (int c = 0; c < x.cols; ++c) y.at(i, c) = x.at(i, c) / norm;
    }
    return y;
}

Tensor l2norm_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double norm2 = 0.0, dot = 0.0;
        for (int c = 0; c < x.cols; ++c) norm2 += x.at(i, c) * x.at(i, c);
        norm2 = std::max(norm2, 1e-24);
        const double norm = std::sqrt(norm2);
        for (int c = 0; c < x.cols; ++c) dot += dy.at(i, c) * x.at(i, c);
        for (int c = 0; c < x.cols; ++c)
            dx.at(i, c) = dy.at(i, c) / norm - x.at(i, c) * dot / (norm2 * norm);
    }
    return dx;
}

SparseGrid with_feats(const SparseGrid& structure, Tensor feats) {
    SparseGrid g;
    g.spec = structure.spec;
    g.active = structure.active;
    g.channels = feats.cols;
    g.feats = std::move(feats);
    return g;
}

} // namespace

void DPVCBlock::init(const std::string& name, int m, int n, const DPVCOptions& o, Rng& rng) {
    opt = o;
    c_in = m;
    c_out = n;
    Rng r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3), r4 = rng.split(4);
    ssc1.init(name + ".ssc1", {m, n, 3, 1}, r1);
    ssc2.init(name + ".ssc2", {n, n, 3, 1}, r2);
    bn_s1.init(name + ".bn_s1", n);
    bn_s2.init(name + ".bn_s2", n);
    bn_s_final.init(name + ".bn_s_final", n);
    // the radius is resolved at forward time when counted in cells
    const KernelPointSet kset = place_kernel_points(o.kp_points, o.kp_radius, o.kp_seed, o.kp_sigma_ratio);
    kp1.init(name + ".kp1", kset, m, n, r3);
    kp2.init(name + ".kp2", kset, n, n, r4);
    bn_k1.init(name + ".bn_k1", n);
    bn_k2.init(name + ".bn_k2", n);
    bn_k_final.init(name + ".bn_k_final", n);
}

SparseGrid DPVCBlock::forward(const SparseGrid& g) {
    check(g.channels == c_in, "dpvc block: input channel mismatch");
    last_in_active = g.active;
    last_padded = voxel_pad(g);

    if (opt.radius_in_cells) {
        const double r = opt.kp_radius * g.spec.cell_size;
        kp1.set_kernel(place_kernel_points(opt.kp_points, r, opt.kp_seed, opt.kp_sigma_ratio));
        kp2.set_kernel(kp1.kernel);
    }

    // shared structures: one rulebook for both SSC layers, one neighbor set
    // for both KPConv layers
    auto rb = std::make_shared<Rulebook>(
        build_rulebook(last_padded.spec, last_padded.active, ssc1.spec, ConvMode::submanifold));

    SparseGrid s = ssc1.forward(last_padded, ConvMode::submanifold, rb);
    s_pre1 = bn_s1.forward(s.feats);
    s = with_feats(s, relu_forward(s_pre1));
    s = ssc2.forward(s, ConvMode::submanifold, rb);
    Tensor s_branch;
    if (opt.layout == BranchLayout::figure) {
        s_pre2 = bn_s2.forward(s.feats);
        s_branch = relu_forward(s_pre2);
    } else {
        s_branch = s.feats;
    }
    if (opt.branch_norm == BranchNorm::bn) {
        s_branch = bn_s_final.forward(s_branch);
    } else {
        s_l2_in = s_branch;
        s_branch = l2norm_forward(s_branch);
    }

    SparseGrid k = kp1.forward_on_grid(last_padded);
    k_pre1 = bn_k1.forward(k.feats);
    k = with_feats(k, relu_forward(k_pre1));
    {
        // reuse kp1's neighbor lists; the active set is unchanged
        SparseGrid k2;
        k2.spec = k.spec;
        k2.active = k.active;
        k2.channels = c_out;
        k2.feats = kp2.forward(kp1.last_ref_x, kp1.last_ref_y, kp1.last_sup_x, kp1.last_sup_y,
                               k.feats, kp1.last_neighbors);
        k = std::move(k2);
    }
    Tensor k_branch;
    if (opt.layout == BranchLayout::figure) {
        k_pre2 = bn_k2.forward(k.feats);
        k_branch = relu_forward(k_pre2);
    } else {
        k_branch = k.feats;
    }
    if (opt.branch_norm == BranchNorm::bn) {
        k_branch = bn_k_final.forward(k_branch);
    } else {
        k_l2_in = k_branch;
        k_branch = l2norm_forward(k_branch);
    }

    Tensor sum(s_branch.rows, s_branch.cols);
    for (size_t i = 0; i < sum.v.size(); ++i) sum.v[i] = s_branch.v[i] + k_branch.v[i];
    return with_feats(last_padded, std::move(sum));
}

Tensor DPVCBlock::backward(const Tensor& dout) {
    // SSC branch
    Tensor ds = dout;
    if (opt.branch_norm == BranchNorm::bn) {
        ds = bn_s_final.backward(ds);
    } else {
        ds = l2norm_backward(s_l2_in, ds);
    }
    if (opt.layout == BranchLayout::figure) {
        ds = relu_backward(s_pre2, ds);
        ds = bn_s2.backward(ds);
    }
    ds = ssc2.backward(ds);
    ds = relu_backward(s_pre1, ds);
    ds = bn_s1.backward(ds);
    ds = ssc1.backward(ds);

    // KP branch
    Tensor dk = dout;
    if (opt.branch_norm == BranchNorm::bn) {
        dk = bn_k_final.backward(dk);
    } else {
        dk = l2norm_backward(k_l2_in, dk);
    }
    if (opt.layout == BranchLayout::figure) {
        dk = relu_backward(k_pre2, dk);
        dk = bn_k2.backward(dk);
    }
    dk = kp2.backward(dk);
    dk = relu_backward(k_pre1, dk);
    dk = bn_k1.backward(dk);
    dk = kp1.backward(dk);

    // combine on the padded set and restrict to the original active set
    Tensor d_pad(int(last_padded.active.size()), c_in);
    for (size_t i = 0; i < d_pad.v.size(); ++i) d_pad.v[i] = ds.v[i] + dk.v[i];
    Tensor d_in(int(last_in_active.size()), c_in);
    for (size_t s = 0; s < last_in_active.size(); ++s) {
        const int slot = last_padded.find(last_in_active[s]);
        for (int c = 0; c < c_in; ++c) d_in.at(int(s), c) = d_pad.at(slot, c);
    }
    return d_in;
}

void DPVCBlock::params(std::vector<Parameter*>& out) {
    ssc1.params(out);
    bn_s1.params(out);
    ssc2.params(out);
    if (opt.layout == BranchLayout::figure) bn_s2.params(out);
    if (opt.branch_norm == BranchNorm::bn) bn_s_final.params(out);
    kp1.params(out);
    bn_k1.params(out);
    kp2.params(out);
    if (opt.layout == BranchLayout::figure) bn_k2.params(out);
    if (opt.branch_norm == BranchNorm::bn) bn_k_final.params(out);
}

void DPVCBlock::set_train(bool t) {
    bn_s1.train = bn_s2.train = bn_s_final.train = t;
    bn_k1.train = bn_k2.train = bn_k_final.train = t;
}

void DPVCBlock::stats(std::vector<LayerStats>& out) const {
    out.push_back({ssc1.name, ssc1.last_pairs, ssc1.last_macs, ssc1.last_ms});
    out.push_back({ssc2.name, ssc2.last_pairs, ssc2.last_macs, ssc2.last_ms});
    out.push_back({kp1.name, kp1.last_pairs, kp1.last_macs, kp1.last_ms});
    out.push_back({kp2.name, kp2.last_pairs, kp2.last_macs, kp2.last_ms});
}

void SSCNBlock::init(const std::string& name, int m, int n, Rng& rng) {
    c_in = m;
    c_out = n;
    Rng r1 = rng.split(1), r2 = rng.split(2);
    bn1.init(name + ".bn1", m);
    ssc1.init(name + ".ssc1", {m, n, 3, 1}, r1);
    bn2.init(name + ".bn2", n);
    ssc2.init(name + ".ssc2", {n, n, 3, 1}, r2);
}

SparseGrid SSCNBlock::forward(const SparseGrid& g) {
    check(g.channels == c_in, "sscn block: input channel mismatch");
    auto rb = std::make_shared<Rulebook>(
        build_rulebook(g.spec, g.active, ssc1.spec, ConvMode::submanifold));

    pre1 = bn1.forward(g.feats);
    SparseGrid h = with_feats(g, relu_forward(pre1));
    h = ssc1.forward(h, ConvMode::submanifold, rb);
    pre2 = bn2.forward(h.feats);
    h = with_feats(h, relu_forward(pre2));
    h = ssc2.forward(h, ConvMode::submanifold, rb);
    return h;
}

Tensor SSCNBlock::backward(const Tensor& dout) {
    Tensor d = ssc2.backward(dout);
    d = relu_backward(pre2, d);
    d = bn2.backward(d);
    d = ssc1.backward(d);
    d = relu_backward(pre1, d);
    d = bn1.backward(d);
    return d;
}

void SSCNBlock::params(std::vector<Parameter*>& out) {
    bn1.params(out);
    ssc1.params(out);
    bn2.params(out);
    ssc2.params(out);
}

void SSCNBlock::set_train(bool t) { bn1.train = bn2.train = t; }

void SSCNBlock::stats(std::vector<LayerStats>& out) const {
    out.push_back({ssc1.name, ssc1.last_pairs, ssc1.last_macs, ssc1.last_ms});
    out.push_back({ssc2.name, ssc2.last_pairs, ssc2.last_macs, ssc2.last_ms});
}

BlockType block_type_from_name(const std::string& name) {
    if (name == "dpvc") return BlockType::dpvc;
    if (name == "sscn") return BlockType::sscn;
    throw std::invalid_argument("unknown block type: '" + name + "' (expected dpvc or sscn)");
}

const char* block_type_name(BlockType t) { return t == BlockType::dpvc ? "dpvc" : "sscn"; }

void BackboneCfg::validate() const {
    check(stages() >= 2, "backbone: needs at least 2 stages");
    check(block_types.size() == encoder_channels.size(), "backbone: block type per stage required");
    for (int c : encoder_channels) check(c >= 1, "backbone: channels must be >= 1");
    check(!head_scales.empty(), "backbone: at least one head scale required");
    for (int h : head_scales)
        check(h >= 0 && h < stages(), "backbone: head scale out of range");
    check(decoder_channels >= 1, "backbone: decoder channels must be >= 1");
}

void Encoder::init(const std::string& name, const BackboneCfg& c, Rng& rng) {
    cfg = c;
    cfg.validate();
    blocks.clear();
    int in_ch = cfg.input_channels;
    for (int k = 0; k < cfg.stages(); ++k) {
        Rng r = rng.split(1000 + k);
        const std::string bname = name + ".stage" + std::to_string(k);
        if (cfg.block_types[k] == BlockType::dpvc) {
            auto blk = std::make_unique<DPVCBlock>();
            blk->init(bname, in_ch, cfg.encoder_channels[k], cfg.dpvc, r);
            blocks.push_back(std::move(blk));
        } else {
            auto blk = std::make_unique<SSCNBlock>();
            blk->init(bname, in_ch, cfg.encoder_channels[k], r);
            blocks.push_back(std::move(blk));
        }
        in_ch = cfg.encoder_channels[k];
    }
}

void Encoder::forward(const SparseGrid& g0) {
    const int K = cfg.stages();
    check(g0.spec.nx() % (1 << (K - 1)) == 0 && g0.spec.ny() % (1 << (K - 1)) == 0,
          "encoder: grid dims must be divisible by 2^(stages-1)");
    stage_out.assign(K, {});
    provs.assign(K - 1, {});
    SparseGrid cur = g0;
    for (int k = 0; k < K; ++k) {
        stage_out[k] = blocks[k]->forward(cur);
        if (k + 1 < K) {
            auto [pooled, prov] = max_pool2(stage_out[k]);
            provs[k] = std::move(prov);
            cur = std::move(pooled);
        }
    }
}

Tensor Encoder::backward(std::vector<Tensor> d_stage) {
    const int K = cfg.stages();
    check(int(d_stage.size()) == K, "encoder backward: gradient per stage required");
    Tensor d_in;
    for (int k = K - 1; k >= 0; --k) {
        d_in = blocks[k]->backward(d_stage[k]);
        if (k > 0) {
            const Tensor d_prev = max_pool2_backward(provs[k - 1], d_in);
            for (size_t i = 0; i < d_prev.v.size(); ++i) d_stage[k - 1].v[i] += d_prev.v[i];
        }
    }
    return d_in;
}

void Encoder::params(std::vector<Parameter*>& out) {
    for (auto& b : blocks) b->params(out);
}

void Encoder::set_train(bool t) {
    for (auto& b : blocks) b->set_train(t);
}

void Encoder::stats(std::vector<LayerStats>& out) const {
    for (const auto& b : blocks) b->stats(out);
}

void FPNDecoder::init(const std::string& name, const BackboneCfg& c, Rng& rng) {
    cfg = c;
    min_level = *std::min_element(cfg.head_scales.begin(), cfg.head_scales.end());
    const int K = cfg.stages();
    laterals.assign(K, {});
    blocks.clear();
    blocks.resize(K);
    for (int k = min_level; k < K; ++k) {
        Rng r = rng.split(2000 + k);
        laterals[k].init(name + ".lateral" + std::to_string(k), cfg.decoder_channels,
                         cfg.encoder_channels[k], r);
        if (k < K - 1) {
            auto blk = std::make_unique<SSCNBlock>();
            Rng rb = rng.split(3000 + k);
            blk->init(name + ".fpn" + std::to_string(k), cfg.decoder_channels, cfg.decoder_channels, rb);
            blocks[k] = std::move(blk);
        }
    }
}

void FPNDecoder::forward(const std::vector<SparseGrid>& stage_out,
                         const std::vector<PoolProvenance>& provs) {
    const int K = cfg.stages();
    maps.assign(K, {});
    maps[K - 1] = with_feats(stage_out[K - 1], laterals[K - 1].forward(stage_out[K - 1].feats));
    for (int k = K - 2; k >= min_level; --k) {
        SparseGrid up = voxel_unpool(maps[k + 1], provs[k]);
        const Tensor lat = laterals[k].forward(stage_out[k].feats);
        Tensor sum(up.feats.rows, up.feats.cols);
        for (size_t i = 0; i < sum.v.size(); ++i) sum.v[i] = up.feats.v[i] + lat.v[i];
        maps[k] = blocks[k]->forward(with_feats(stage_out[k], std::move(sum)));
    }
}

std::vector<Tensor> FPNDecoder::backward(std::vector<Tensor> d_maps,
                                         const std::vector<SparseGrid>& stage_out,
                                         const std::vector<PoolProvenance>& provs) {
    const int K = cfg.stages();
    std::vector<Tensor> d_stage(K);
    for (int k = 0; k < K; ++k) d_stage[k] = Tensor(stage_out[k].size(), cfg.encoder_channels[k]);

    for (int k = min_level; k <= K - 2; ++k) {
        Tensor d_sum = blocks[k]->backward(d_maps[k]);
        const Tensor d_lat = laterals[k].backward(d_sum);
        for (size_t i = 0; i < d_lat.v.size(); ++i) d_stage[k].v[i] += d_lat.v[i];
        const Tensor d_up = voxel_unpool_backward(maps[k + 1], provs[k], d_sum);
        if (d_maps[k + 1].rows == 0) d_maps[k + 1] = Tensor(d_up.rows, d_up.cols);
        for (size_t i = 0; i < d_up.v.size(); ++i) d_maps[k + 1].v[i] += d_up.v[i];
    }
    {
        const Tensor d_lat = laterals[K - 1].backward(d_maps[K - 1]);
        for (size_t i = 0; i < d_lat.v.size(); ++i) d_stage[K - 1].v[i] += d_lat.v[i];
    }
    return d_stage;
}

void FPNDecoder::params(std::vector<Parameter*>& out) {
    const int K = cfg.stages();
    for (int k = min_level; k < K; ++k) {
        laterals[k].params(out);
        if (blocks[k]) blocks[k]->params(out);
    }
}

void FPNDecoder::set_train(bool t) {
    for (auto& b : blocks)
        if (b) b->set_train(t);
}

void FPNDecoder::stats(std::vector<LayerStats>& out) const {
    const int K = cfg.stages();
    for (int k = min_level; k < K; ++k) {
        if (blocks[k]) blocks[k]->stats(out);
    }
}

void Backbone::init(const std::string& name, const BackboneCfg& cfg, Rng& rng) {
    Rng re = rng.split(10), rd = rng.split(20);
    encoder.init(name + ".enc", cfg, re);
    decoder.init(name + ".dec", cfg, rd);
}

const std::vector<SparseGrid>& Backbone::forward(const SparseGrid& g0) {
    encoder.forward(g0);
    decoder.forward(encoder.stage_out, encoder.provs);
    return decoder.maps;
}

Tensor Backbone::backward(std::vector<Tensor> d_maps) {
    std::vector<Tensor> d_stage = decoder.backward(std::move(d_maps), encoder.stage_out, encoder.provs);
    return encoder.backward(std::move(d_stage));
}

void Backbone::params(std::vector<Parameter*>& out) {
    encoder.params(out);
    decoder.params(out);
}

void Backbone::set_train(bool t) {
    encoder.set_train(t);
    decoder.set_train(t);
}

void Backbone::stats(std::vector<LayerStats>& out) const {
    encoder.stats(out);
    decoder.stats(out);
}

} // namespace skpp

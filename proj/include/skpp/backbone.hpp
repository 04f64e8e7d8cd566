#pragma once
#include <memory>
#include <string>
#include <vector>

#include "skpp/bench.hpp"
#include "skpp/grid.hpp"
#include "skpp/kpconv.hpp"
#include "skpp/nn.hpp"
#include "skpp/sparse_conv.hpp"

namespace skpp {

// Branch arrangement inside a DPVC block. `figure`: every conv is followed
// by BN+ReLU and a final per-branch BN precedes the sum. `body`: the second
// conv feeds the final branch BN directly.
enum class BranchLayout { figure, body };
// Per-branch normalization before the sum: learned BN or plain L2.
enum class BranchNorm { bn, l2 };

struct Block {
    virtual ~Block() = default;
    virtual SparseGrid forward(const SparseGrid& g) = 0;
    virtual Tensor backward(const Tensor& dout) = 0; // grad w.r.t. input features
    virtual void params(std::vector<Parameter*>& out) = 0;
    virtual void set_train(bool t) = 0;
    virtual void stats(std::vector<LayerStats>& out) const = 0;
};

struct DPVCOptions {
    BranchLayout layout = BranchLayout::figure;
    BranchNorm branch_norm = BranchNorm::bn;
    double kp_radius = 3.75;     // meters (interpreted per radius_in_cells)
    bool radius_in_cells = false; // if true, kp_radius counts cells of the current stage
    int kp_points = 15;
    uint64_t kp_seed = 12345;
    double kp_sigma_ratio = 0.5;
};

// Dual-branch block: voxel padding, then an SSC branch and a KPConv branch
// over the padded active set, normalized per branch and summed.
struct DPVCBlock final : Block {
    SparseConv ssc1, ssc2;
    BatchNorm bn_s1, bn_s2, bn_s_final;
    KPConv kp1, kp2;
    BatchNorm bn_k1, bn_k2, bn_k_final;
    DPVCOptions opt;
    int c_in = 0, c_out = 0;

    // forward cache
    SparseGrid last_padded;
    std::vector<CellIndex> last_in_active;
    Tensor s_pre1, s_pre2;   // BN outputs feeding ReLU (SSC branch)
    Tensor k_pre1, k_pre2;   // same for the KP branch
    Tensor s_l2_in, k_l2_in; // branch-norm inputs when using L2

    void init(const std::string& name, int m, int n, const DPVCOptions& o, Rng& rng);
    SparseGrid forward(const SparseGrid& g) override;
    Tensor backward(const Tensor& dout) override;
    void params(std::vector<Parameter*>& out) override;
    void set_train(bool t) override;
    void stats(std::vector<LayerStats>& out) const override;
};

// Pre-activated baseline block: (BN -> ReLU -> SSC) x 2; active set kept.
struct SSCNBlock final : Block {
    BatchNorm bn1, bn2;
    SparseConv ssc1, ssc2;
    int c_in = 0, c_out = 0;

    Tensor pre1, pre2; // BN outputs feeding ReLU

    void init(const std::string& name, int m, int n, Rng& rng);
    SparseGrid forward(const SparseGrid& g) override;
    Tensor backward(const Tensor& dout) override;
    void params(std::vector<Parameter*>& out) override;
    void set_train(bool t) override;
    void stats(std::vector<LayerStats>& out) const override;
};

enum class BlockType { dpvc, sscn };

BlockType block_type_from_name(const std::string& name);
const char* block_type_name(BlockType t);

struct BackboneCfg {
    std::vector<int> encoder_channels;   // per stage
    std::vector<BlockType> block_types;  // per stage
    int input_channels = 32;             // F_out of the rendering
    int decoder_channels = 64;
    std::vector<int> head_scales;        // encoder stage indices to emit
    DPVCOptions dpvc;

    int stages() const { return int(encoder_channels.size()); }
    void validate() const;
};

// Stage k: block at resolution dims / 2^k, then max-pool 2 (except after the
// last stage). Stage outputs (pre-pool) are kept for lateral connections.
struct Encoder {
    BackboneCfg cfg;
    std::vector<std::unique_ptr<Block>> blocks;

    std::vector<SparseGrid> stage_out;
    std::vector<PoolProvenance> provs; // one per stage except the last

    void init(const std::string& name, const BackboneCfg& c, Rng& rng);
    void forward(const SparseGrid& g0);
    // d_stage[k] is the gradient arriving at stage k's output; returns the
    // gradient w.r.t. the input grid features.
    Tensor backward(std::vector<Tensor> d_stage);
    void params(std::vector<Parameter*>& out);
    void set_train(bool t);
    void stats(std::vector<LayerStats>& out) const;
};

// Top-down FPN: start from the deepest map, unpool, add a 1x1 lateral
// projection of the encoder map, then one SSCN block per level.
struct FPNDecoder {
    BackboneCfg cfg;
    int min_level = 0;
    std::vector<Linear> laterals;   // per level [min_level .. stages-1]
    std::vector<std::unique_ptr<SSCNBlock>> blocks; // per level [min_level .. stages-2]

    std::vector<SparseGrid> maps;   // decoder maps per level (valid >= min_level)
    std::vector<SparseGrid> lateral_in; // encoder maps (structure) per level

    void init(const std::string& name, const BackboneCfg& c, Rng& rng);
    void forward(const std::vector<SparseGrid>& stage_out, const std::vector<PoolProvenance>& provs);
    // d_maps[k] arrives at decoder map k; returns d_stage vector for Encoder::backward.
    std::vector<Tensor> backward(std::vector<Tensor> d_maps,
                                 const std::vector<SparseGrid>& stage_out,
                                 const std::vector<PoolProvenance>& provs);
    void params(std::vector<Parameter*>& out);
    void set_train(bool t);
    void stats(std::vector<LayerStats>& out) const;
};

struct Backbone {
    Encoder encoder;
    FPNDecoder decoder;

    void init(const std::string& name, const BackboneCfg& cfg, Rng& rng);
    // returns decoder maps indexed by encoder stage (valid at cfg.head_scales)
    const std::vector<SparseGrid>& forward(const SparseGrid& g0);
    Tensor backward(std::vector<Tensor> d_maps);
    void params(std::vector<Parameter*>& out);
    void set_train(bool t);
    void stats(std::vector<LayerStats>& out) const;
};

} // namespace skpp

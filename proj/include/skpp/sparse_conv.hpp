#pragma once
#include <memory>
#include <string>
#include <vector>

#include "skpp/grid.hpp"
#include "skpp/nn.hpp"
#include "skpp/rng.hpp"
#include "skpp/tensor.hpp"

namespace skpp {

// SC(m, n, f, s): m input channels, n output channels, filter size f,
// stride s. SSC is SC with s = 1 and the output active set pinned to the
// input's. DC reverses the connectivity of a matching strided SC.
struct ConvSpec {
    int m = 1, n = 1, f = 3, s = 1;
};

enum class ConvMode { submanifold, strided, deconv };

// Kernel offsets in fixed iteration order: centered for odd f, corner
// aligned ([0, f)) for even f.
std::vector<std::pair<int, int>> kernel_offsets(int f);

// Gather/scatter index pairs per kernel offset. Within one offset every
// output slot appears at most once, so per-offset scatter is race-free.
struct Rulebook {
    GridSpec in_spec, out_spec;
    std::vector<std::pair<int, int>> offsets;
    std::vector<std::vector<std::pair<int, int>>> pairs; // (input slot, output slot)
    std::vector<CellIndex> out_active;                   // canonical order

    int64_t pair_count() const {
        int64_t n = 0;
        for (const auto& v : pairs) n += int64_t(v.size());
        return n;
    }
};

// mode submanifold: output active set = input active set.
// mode strided:     output active iff >= 1 input active cell in the kernel
//                   footprint; out dims = in dims / s.
// mode deconv:      requires reference_out (the matching SC's input active
//                   set); pairs are the matching strided rulebook reversed.
Rulebook build_rulebook(const GridSpec& in_spec, const std::vector<CellIndex>& active_in,
                        const ConvSpec& spec, ConvMode mode,
                        const std::vector<CellIndex>* reference_out = nullptr);

struct SparseConv {
    ConvSpec spec;
    Parameter W; // [f*f, n, m]
    Parameter b; // [n]
    std::string name;

    // forward cache
    std::shared_ptr<const Rulebook> last_rb;
    Tensor last_in;

    // per-layer benchmark counters (most recent forward)
    int64_t last_pairs = 0;
    int64_t last_macs = 0;
    double last_ms = 0.0;

    void init(const std::string& name_, const ConvSpec& cs, Rng& rng);

    SparseGrid forward(const SparseGrid& g, ConvMode mode,
                       std::shared_ptr<const Rulebook> rb = nullptr,
                       const std::vector<CellIndex>* reference_out = nullptr);

    // Accumulates W.g / b.g and returns the gradient w.r.t. the input
    // features of the cached forward.
    Tensor backward(const Tensor& dout);

    void params(std::vector<Parameter*>& out) { out.push_back(&W); out.push_back(&b); }
};

SparseGrid ssc_forward(SparseConv& layer, const SparseGrid& g,
                       std::shared_ptr<const Rulebook> rb = nullptr);
SparseGrid sc_forward(SparseConv& layer, const SparseGrid& g);
SparseGrid dc_forward(SparseConv& layer, const SparseGrid& g,
                      const std::vector<CellIndex>& reference);

// Serial reference: textbook zero-padded 2D cross-correlation with stride.
DenseGrid dense_conv_oracle(const DenseGrid& in, const Parameter& W, const Parameter& b,
                            const ConvSpec& spec);

} // namespace skpp

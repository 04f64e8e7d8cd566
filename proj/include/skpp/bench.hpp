#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace skpp {

// Per-layer counters from the most recent forward pass.
struct LayerStats {
    std::string name;
    int64_t pairs = 0; // gather/scatter pairs (or reference-neighbor pairs)
    int64_t macs = 0;  // multiply-accumulates executed
    double ms = 0.0;   // wall time
};

struct BenchReport {
    std::vector<LayerStats> layers;
    int64_t total_macs() const {
        int64_t t = 0;
        for (const auto& l : layers) t += l.macs;
        return t;
    }
    double total_ms() const {
        double t = 0;
        for (const auto& l : layers) t += l.ms;
        return t;
    }
};

} // namespace skpp

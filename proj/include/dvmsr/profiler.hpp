#pragma once

#include "dvmsr/model.hpp"

namespace dvmsr {

// Counting rules for count_flops. One multiply-accumulate costs mac_flops;
// elementwise work (activations, norms, gates, residuals, ZOH discretization)
// is excluded unless include_elementwise is set, in which case it costs one
// flop per produced element. The scan recurrence costs scan_macs_per_state
// MACs per (token, channel, state) element: two for the state update and one
// for the readout under the default of 3.
struct FlopsConvention {
    int mac_flops = 1;
    bool include_elementwise = false;
    int scan_macs_per_state = 3;
    std::string tag() const;
};

struct ProfileReport {
    int64_t params = 0;
    int64_t flops = 0;
    double activations_m = 0.0;  // conv2d output elements, in millions
    int input_h = 0, input_w = 0;
    std::string convention;
    // Largest single intermediate, in MB of 64-bit values. A theoretical
    // bound only; not comparable to allocator peak-memory figures.
    double peak_activation_bound_mb = 0.0;

    std::string to_json() const;
    std::string table() const;
};

// Exact parameter count from the manifest shape law, no allocation.
int64_t count_params(const ModelConfig& cfg);

int64_t count_flops(const ModelConfig& cfg, int h, int w, const FlopsConvention& conv = {});

// Sum of conv2d output elements in millions; conv1d and linear layers are
// excluded, which makes the figure invariant under the bidirectional switch.
double count_activations_m(const ModelConfig& cfg, int h, int w);

ProfileReport profile_model(const ModelConfig& cfg, int h, int w, const FlopsConvention& conv = {});

struct BenchmarkResult {
    double median_seconds = 0.0;
    int repeats = 0;
    std::string hardware;
};

// Median wall-clock forward time after one warmup pass; repeats >= 3.
BenchmarkResult benchmark_inference(const DvmsrModel& model, int h, int w, int repeats);

// The published parameter counts this implementation is calibrated against,
// with the exact configs that produce them.
struct ParamTarget {
    std::string label;
    ModelConfig config;
    double params_m;
};
std::vector<ParamTarget> published_param_targets();

// Grid fit over the undocumented hyperparameters; entries sorted by the
// max relative error across all published targets. The frozen ModelConfig
// defaults are the argmin (see docs/calibration.md).
struct CalibrationEntry {
    int n_state;
    int d_conv;
    double expand;
    bool dt_rank_scaled;  // true: ceil(C/16); false: rank 1
    double max_rel_err;
};
std::vector<CalibrationEntry> calibration_grid();

}  // namespace dvmsr

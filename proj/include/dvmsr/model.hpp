#pragma once

#include <unordered_map>
#include <utility>

#include "dvmsr/ops.hpp"
#include "dvmsr/ssm.hpp"

namespace dvmsr {

// Architecture hyperparameters. The defaults for n_state / d_conv / expand /
// dt_rank are frozen from a grid fit against the published parameter counts
// of the model family (see docs/calibration.md); dt_rank = 0 means
// ceil(channels / 16).
struct ModelConfig {
    int n_rssb = 4;
    std::vector<int> vimm_per_rssb = {2};  // broadcast to n_rssb when a single entry
    int channels = 60;
    int scale = 4;
    double expand = 2.0;
    int n_state = 16;
    int d_conv = 3;
    int dt_rank = 0;
    bool bidirectional = false;
    bool x1_activation = false;  // SiLU on the SSM branch after conv1d (off = literal gate-only)
    bool separate_norms = false;
    bool use_d_skip = true;
    std::string upsampler = "direct";  // "direct": conv to 3*r^2 + shuffle; "classical": staged
    int in_channels = 3;

    int inner_dim() const;          // lambda * C, validated integral
    int resolved_dt_rank() const;   // dt_rank or ceil(channels/16)
    std::vector<int> vimm_counts() const;
    void validate() const;          // throws std::invalid_argument listing every problem
};

ModelConfig student_config();
ModelConfig teacher_small_config();  // 4 RSSB, 2 ViMM, 192 channels
ModelConfig teacher_large_config();  // 8 RSSB, 2 ViMM, 192 channels

// Shape law of the whole parameter set. build_model allocates exactly this
// list, in this order; the profiler sums it without allocating.
enum class ParamInit { ConvFanIn, TruncNormal, Zeros, Ones, ALog, DtBias };

struct ParamSpec {
    std::string name;
    Shape shape;
    ParamInit init;
};

std::vector<ParamSpec> parameter_manifest(const ModelConfig& cfg);

// Trainable weights of one SSM direction.
struct SsmBranchWeights {
    Tensor a_log;      // [E, S]
    Tensor x_proj_w;   // [R+2S, E]
    Tensor dt_proj_w;  // [E, R]
    Tensor dt_bias;    // [E]
    Tensor d_skip;     // [E], undefined when use_d_skip is off
};

struct VimmWeights {
    Tensor ln_gamma, ln_beta;
    Tensor ln2_gamma, ln2_beta;  // defined only with separate_norms
    Tensor in_proj_w, in_proj_b;
    Tensor gate_proj_w, gate_proj_b;
    Tensor conv1d_w, conv1d_b;
    SsmBranchWeights ssm;
    Tensor conv1d_rev_w, conv1d_rev_b;  // bidirectional only
    SsmBranchWeights ssm_rev;
    Tensor out_proj_w;
};

struct RssbWeights {
    std::vector<VimmWeights> vimms;
    Tensor tail_w, tail_b;
};

// Kernel-side parameter view (A = -exp(a_log)); used to cross-check the
// fused training path against the plain selectivize/selective_scan pair.
SsmParams to_kernel_params(const SsmBranchWeights& w, int inner_dim);

// The gated token mixer: one shared normalization feeding the SSM branch
// (linear -> causal conv1d -> selective scan) and the gate branch
// (linear -> SiLU), fused by Hadamard product, projected back, residual add.
Tensor vimm_forward(const Tensor& tokens, const VimmWeights& w, const ModelConfig& cfg);

// Token mixers in raster order, a 3x3 conv tail, block-level residual.
Tensor rssb_forward(const Tensor& fmap, const RssbWeights& w, const ModelConfig& cfg);

class DvmsrModel {
public:
    // Deterministic initialization from the seed; parameter names and order
    // are stable across versions.
    DvmsrModel(ModelConfig cfg, uint64_t seed);

    // Adopt externally provided tensors (checkpoint load). Validates every
    // name and shape against the manifest.
    static DvmsrModel from_parameters(ModelConfig cfg,
                                      std::vector<std::pair<std::string, Tensor>> params);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor param(const std::string& name) const;
    int64_t parameter_count() const;
    void set_trainable(bool on);
    void zero_grads();

    struct ForwardTaps {
        Tensor sr;             // [N, 3, rH, rW]
        Tensor deep_features;  // [N, C, H, W], output of the closing 3x3 conv
    };

    Tensor forward(const Tensor& lr_input) const;
    ForwardTaps forward_with_taps(const Tensor& lr_input) const;

private:
    DvmsrModel() = default;
    void build_views();

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::unordered_map<std::string, size_t> index_;

    Tensor head_w_, head_b_;
    std::vector<RssbWeights> blocks_;
    Tensor hconv_w_, hconv_b_;
    // direct upsampler
    Tensor recon_w_, recon_b_;
    // classical upsampler
    Tensor pre_w_, pre_b_, last_w_, last_b_;
    std::vector<std::pair<Tensor, Tensor>> up_stages_;
    std::vector<int> stage_factors_;
};

}  // namespace dvmsr

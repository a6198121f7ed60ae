#pragma once

#include "dvmsr/model.hpp"

namespace dvmsr {

struct CheckpointFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointTruncatedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// On disk: "DVMSRCKP" magic, u32 version, u64 manifest length, a JSON
// manifest (config, tensor names/shapes/offsets, iteration, rng state),
// then little-endian IEEE-754 64-bit payloads in manifest order.
struct Checkpoint {
    ModelConfig model_config;
    std::vector<std::pair<std::string, Tensor>> tensors;  // model params, manifest order
    // Trainer-owned tensors outside the model manifest (e.g. the mid-level
    // distillation adapter).
    std::vector<std::pair<std::string, Tensor>> aux_tensors;
    bool has_optimizer = false;
    std::vector<std::pair<std::string, Tensor>> opt_m, opt_v;
    int64_t adam_t = 0;
    int64_t iteration = 0;
    std::string rng_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Validates every name/shape against the config's manifest; the first
// offending tensor is named in the error.
DvmsrModel model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint checkpoint_from_model(const DvmsrModel& model);

std::string model_config_to_json(const ModelConfig& cfg);
// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const std::string& text);

}  // namespace dvmsr

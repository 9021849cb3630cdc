#pragma once

#include <optional>
#include <string>

#include "mpose/pipeline.hpp"
#include "mpose/training.hpp"

namespace mpose {

struct Checkpoint {
    PipelineConfig config;
    ModelParams params;
    std::optional<OptimizerState> optimizer;
};

// Versioned binary container: magic "MPCK", u32 version, config JSON echo,
// then per-tensor shape + little-endian float32 payload. Round-trips
// parameters bitwise.
void save_checkpoint(const std::string& path, const PipelineConfig& config,
                     const ModelParams& params, const OptimizerState* optimizer = nullptr);

// Throws CheckpointError on bad magic, version mismatch, truncation, or a
// parameter set that does not fit the embedded config.
Checkpoint load_checkpoint(const std::string& path);

} // namespace mpose

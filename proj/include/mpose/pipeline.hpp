#pragma once

#include <string>
#include <vector>

#include "mpose/convnet.hpp"
#include "mpose/image.hpp"
#include "mpose/motion.hpp"

namespace mpose {

// Reflective padding that aligns the response grid with the image: with
// window 64 / stride 4, 30 px of context go before the first pixel so
// cell g is centered at original coordinate 1.5 + 4g, and the tail is
// extended until the grid covers ceil(extent/stride) cells and every bank
// extent divides cleanly.
struct PadSpec {
    int before_y = 0, before_x = 0;
    int height = 0, width = 0; // padded extents
};

PadSpec pad_for_grid(int height, int width, const NetworkConfig& cfg);

// Fold-reflect (edge repeated) into the padded extents.
Image pad_reflect(const Image& img, const PadSpec& pad);

Tensor image_to_tensor(const Image& img); // HWC -> [C,H,W]

// Everything the checkpoint needs to reproduce preprocessing + model shape.
struct PipelineConfig {
    NetworkConfig net;
    MotionFeatureConfig motion;
    PyramidSpec pyramid;
    double target_sigma = 1.0; // px, heatmap bump width
};

// Pyramid spec consistent with the net and the feature kind (bank count,
// first motion channel).
PipelineConfig make_pipeline_config(FeatureKind kind, int delta, bool compensate,
                                    const NetworkConfig& net);

std::string pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const std::string& text);

const char* feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

// Pad, build the normalized pyramid, run the one-shot forward; the
// returned grid origin is in the unpadded image's coordinates.
ResponseMaps infer_maps(const ModelParams& params, const Image& features,
                        const PipelineConfig& cfg);

} // namespace mpose

#pragma once

#include <array>
#include <vector>

#include "mpose/rng.hpp"
#include "mpose/tensor.hpp"

namespace mpose {

// Per-bank pipeline: [conv5 + ReLU + pool2] × pool_stages, then a final
// conv5 + ReLU. Banks are nearest-upsampled onto the stride-4 grid,
// concatenated, and consumed by the trunk: conv(k) + ReLU, 1×1 + ReLU,
// 1×1 linear. With window 64 the pipeline takes two poolings and the trunk
// kernel works out to 9: (((64−4)/2−4)/2−4)−8 = 1.
struct NetworkConfig {
    int conv_features = 16; // 16 = small model, 128 = big
    int banks = 3;
    int window = 64;
    int stride_out = 4;
    int joints = 6;
    std::array<int, 2> fc_widths{512, 256};
    int input_channels = 3;

    int pool_stages() const;  // log2(stride_out)
    int trunk_kernel() const; // window reduced through the bank pipeline
    void validate() const;
};

struct ConvLayer {
    Tensor kernel;
    Tensor bias;
};

struct ModelParams {
    NetworkConfig config;
    std::vector<std::vector<ConvLayer>> banks; // [bank][conv stage]
    std::vector<ConvLayer> trunk;              // 3 stages
};

struct ModelGrads {
    std::vector<std::vector<ConvLayer>> banks;
    std::vector<ConvLayer> trunk;
};

// Joint energy grid plus the metadata to map cells back to pixels:
// cell (gy,gx) is centered at (origin_y + stride·gy, origin_x + stride·gx).
struct ResponseMaps {
    Tensor maps; // [joints, Gy, Gx]
    int stride = 4;
    double origin_y = 0.0;
    double origin_x = 0.0;
};

// Everything backward needs from a forward pass.
struct BankTrace {
    std::vector<Tensor> conv_in;
    std::vector<Tensor> conv_out;
    std::vector<PoolIndices> pools;
    Tensor feature; // after final ReLU
};
struct ForwardTrace {
    std::vector<BankTrace> banks;
    Tensor concat;
    std::vector<Tensor> trunk_in;
    std::vector<Tensor> trunk_out;
};

// Uniform ±1/√fan_in weights, zero biases; draw order is fixed, so equal
// seeds give equal models.
ModelParams build(const NetworkConfig& config, Rng& rng);

// Same layer structure with all parameters zero; checkpoint loading fills it.
ModelParams build_uninitialized(const NetworkConfig& config);

// Response cells produced along one axis by an input extent, after the
// multi-bank crop and the trunk; throws when the extent does not reduce
// cleanly or is too small.
int response_cells(const NetworkConfig& config, int input_extent);

// Flat view of all parameter tensors in a stable order (banks outer-to-
// inner, kernel before bias, then trunk); optimizer and checkpoint rely
// on this order.
std::vector<Tensor*> param_tensors(ModelParams& params);
std::vector<const Tensor*> param_tensors(const ModelParams& params);
std::vector<Tensor*> grad_tensors(ModelGrads& grads);
std::vector<const Tensor*> grad_tensors(const ModelGrads& grads);

// Whole-image convolutional evaluation: one output cell per
// stride_out × stride_out input pixels.
ResponseMaps forward_oneshot(const ModelParams& params, const std::vector<Tensor>& pyramid,
                             ForwardTrace* trace = nullptr);

// Reference sliding-window evaluation: every window is cropped (with the
// matching pyramid crops) and run through the per-window network. Slow by
// design; exists to witness the equivalence. window/step of 0 mean "from
// config"; anything else must agree with the config.
ResponseMaps forward_patchwise(const ModelParams& params, const std::vector<Tensor>& pyramid,
                               int window = 0, int step = 0);

// Exact gradients of forward_oneshot with respect to all parameters.
ModelGrads backward(const ModelParams& params, const ForwardTrace& trace, const Tensor& grad_maps);
ModelGrads backward(const ModelParams& params, const std::vector<Tensor>& pyramid,
                    const Tensor& grad_maps);

} // namespace mpose

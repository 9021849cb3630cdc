#pragma once

#include <string>
#include <vector>

#include "mpose/annotation.hpp"
#include "mpose/convnet.hpp"
#include "mpose/pipeline.hpp"
#include "mpose/rng.hpp"

namespace mpose {

struct TrainSample {
    Image features; // RGB plus the configured motion channels
    Annotation ann;
    std::string clip_id;
};

// lr and momentum plus one velocity tensor per parameter, in
// param_tensors order.
struct OptimizerState {
    double lr = 0.01;
    double momentum = 0.9;
    std::vector<Tensor> velocity;
};

OptimizerState make_optimizer(const ModelParams& params, double lr, double momentum);

// Where response-grid cells sit in image coordinates.
struct GridSpec {
    int joints = 0, height = 0, width = 0, stride = 4;
    double origin_y = 0.0, origin_x = 0.0;
};
GridSpec grid_of(const ResponseMaps& maps);

// Per joint, unnormalized Gaussian (peak 1 at the joint) evaluated at cell
// centers; occluded joints (absent from the annotation) give zero maps.
Tensor make_target(const Annotation& ann, const std::vector<std::string>& names,
                   const GridSpec& grid, double sigma_px);

struct LossGrad {
    double loss = 0.0;
    Tensor grad; // 2(pred − target)/N
};
LossGrad mse_loss(const Tensor& pred, const Tensor& target);

// v ← μv − lr·g; θ ← θ + v. Nesterov form: the caller computes `grads`
// at the lookahead point θ + μv.
void sgd_nesterov_step(ModelParams& params, const ModelGrads& grads, OptimizerState& state);

// Deterministic core of augment: mirror (negating flow-u, swapping
// left/right labels) then uniform scale about the neck.
TrainSample augment_with(const TrainSample& sample, FeatureKind kind, bool flip, double scale);

// p=0.5 flip, scale ~ U[0.85, 1.15].
TrainSample augment(const TrainSample& sample, FeatureKind kind, Rng& rng);

struct TrainHyper {
    double lr = 0.01;
    double momentum = 0.9;
    double lr_decay = 0.5;
    int lr_decay_every = 20; // epochs
    int batch = 8;
    int epochs = 1;
    int crop_span = 80; // px around the neck; multiple of the output stride
    uint64_t seed = 1;
    std::string checkpoint_dir; // per-epoch checkpoints when nonempty
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

// Neck-centered crops with ±2 px jitter, per-epoch shuffle and
// augmentation from seeds derived per (seed, epoch, sample), mini-batch
// Nesterov SGD. Loss trace is the mean per-sample loss per epoch.
TrainResult train(ModelParams& params, const std::vector<TrainSample>& dataset,
                  const PipelineConfig& cfg, const TrainHyper& hyper);

} // namespace mpose

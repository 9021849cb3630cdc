#include "mpose/training.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mpose/checkpoint.hpp"

namespace mpose {

namespace {

int fold_reflect(int i, int n) {
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

// span×span window starting at (y0, x0); out-of-range samples fold-reflect,
// so crops near the border stay well-defined.
Image crop_window(const Image& img, int y0, int x0, int span) {
    Image out(span, span, img.channels());
    for (int y = 0; y < span; ++y) {
        const int sy = fold_reflect(y0 + y, img.height());
        for (int x = 0; x < span; ++x) {
            const int sx = fold_reflect(x0 + x, img.width());
            for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Image mirror_horizontal(const Image& img) {
    Image out(img.height(), img.width(), img.channels());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
    return out;
}

ModelGrads make_grads_like(const ModelParams& params) {
    ModelGrads grads;
    grads.banks.reserve(params.banks.size());
    for (const auto& bank : params.banks) {
        std::vector<ConvLayer> stages;
        stages.reserve(bank.size());
        for (const ConvLayer& layer : bank)
            stages.push_back({Tensor(layer.kernel.shape()), Tensor(layer.bias.shape())});
        grads.banks.push_back(std::move(stages));
    }
    for (const ConvLayer& layer : params.trunk)
        grads.trunk.push_back({Tensor(layer.kernel.shape()), Tensor(layer.bias.shape())});
    return grads;
}

void add_grads(ModelGrads& dst, const ModelGrads& src) {
    std::vector<Tensor*> d = grad_tensors(dst);
    std::vector<const Tensor*> s = grad_tensors(src);
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < d[i]->size(); ++k) (*d[i])[k] += (*s[i])[k];
}

void scale_grads(ModelGrads& grads, float factor) {
    for (Tensor* t : grad_tensors(grads))
        for (std::size_t k = 0; k < t->size(); ++k) (*t)[k] *= factor;
}

struct SampleResult {
    double loss = 0.0;
    ModelGrads grads;
};

// One crop through the padded pyramid forward, heatmap target, MSE, and
// the full backward pass.
SampleResult run_sample(const ModelParams& params, const TrainSample& sample,
                        const PipelineConfig& cfg, int crop_span, Rng& rng,
                        const std::vector<std::string>& names) {
    if (sample.features.channels() != cfg.net.input_channels)
        throw ShapeError("training sample '" + sample.clip_id + "' carries " +
                         std::to_string(sample.features.channels()) +
                         " channels but the model expects " +
                         std::to_string(cfg.net.input_channels));

    TrainSample aug = augment(sample, cfg.motion.kind, rng);

    const Vec2 neck = annotation_point(aug.ann, "neck");
    const int jy = rng.uniform_int(-2, 2);
    const int jx = rng.uniform_int(-2, 2);
    const int y0 = static_cast<int>(std::lround(neck.y)) + jy - crop_span / 2;
    const int x0 = static_cast<int>(std::lround(neck.x)) + jx - crop_span / 2;

    Image crop = crop_window(aug.features, y0, x0, crop_span);
    const PadSpec pad = pad_for_grid(crop.height(), crop.width(), cfg.net);
    Image padded = pad_reflect(crop, pad);
    std::vector<Image> pyramid = build_pyramid(padded, cfg.pyramid);
    std::vector<Tensor> banks;
    banks.reserve(pyramid.size());
    for (const Image& level : pyramid) banks.push_back(image_to_tensor(level));

    ForwardTrace trace;
    ResponseMaps maps;
    try {
        maps = forward_oneshot(params, banks, &trace);
    } catch (const NumericError& e) {
        // the primitives guard against non-finite values; during training
        // that means the parameters have diverged
        throw DivergenceError("training diverged on clip '" + sample.clip_id + "': " + e.what());
    }
    maps.origin_y -= pad.before_y; // grid now in crop coordinates
    maps.origin_x -= pad.before_x;

    Annotation local;
    for (const auto& [name, p] : aug.ann.joints)
        local.joints[name] = p - Vec2{static_cast<double>(x0), static_cast<double>(y0)};

    const Tensor target = make_target(local, names, grid_of(maps), cfg.target_sigma);
    LossGrad lg = mse_loss(maps.maps, target);
    if (!std::isfinite(lg.loss))
        throw DivergenceError("training loss became non-finite on clip '" + sample.clip_id + "'");

    SampleResult result;
    result.loss = lg.loss;
    try {
        result.grads = backward(params, trace, lg.grad);
    } catch (const NumericError& e) {
        throw DivergenceError("training diverged on clip '" + sample.clip_id + "': " + e.what());
    }
    return result;
}

} // namespace

OptimizerState make_optimizer(const ModelParams& params, double lr, double momentum) {
    OptimizerState state;
    state.lr = lr;
    state.momentum = momentum;
    for (const Tensor* t : param_tensors(params)) state.velocity.push_back(Tensor(t->shape()));
    return state;
}

GridSpec grid_of(const ResponseMaps& maps) {
    if (maps.maps.rank() != 3) throw ShapeError("response maps must be rank 3");
    return {maps.maps.dim(0), maps.maps.dim(1), maps.maps.dim(2),
            maps.stride,      maps.origin_y,   maps.origin_x};
}

Tensor make_target(const Annotation& ann, const std::vector<std::string>& names,
                   const GridSpec& grid, double sigma_px) {
    if (static_cast<int>(names.size()) != grid.joints)
        throw ShapeError("target asked for " + std::to_string(names.size()) +
                         " joints on a grid with " + std::to_string(grid.joints) + " planes");
    if (sigma_px <= 0.0) throw ShapeError("target sigma must be positive");

    Tensor target({grid.joints, grid.height, grid.width});
    const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
    for (int j = 0; j < grid.joints; ++j) {
        auto it = ann.joints.find(names[static_cast<std::size_t>(j)]);
        if (it == ann.joints.end()) continue; // occluded: plane stays zero
        const Vec2 p = it->second;
        for (int gy = 0; gy < grid.height; ++gy) {
            const double dy = grid.origin_y + grid.stride * gy - p.y;
            for (int gx = 0; gx < grid.width; ++gx) {
                const double dx = grid.origin_x + grid.stride * gx - p.x;
                target.at(j, gy, gx) = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
            }
        }
    }
    return target;
}

LossGrad mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("prediction and target shapes differ");
    if (pred.size() == 0) throw ShapeError("mse over an empty tensor");

    LossGrad out;
    out.grad = Tensor(pred.shape());
    const double scale = 1.0 / static_cast<double>(pred.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
        out.grad[i] = static_cast<float>(2.0 * d * scale);
    }
    out.loss = acc * scale;
    return out;
}

void sgd_nesterov_step(ModelParams& params, const ModelGrads& grads, OptimizerState& state) {
    std::vector<Tensor*> theta = param_tensors(params);
    std::vector<const Tensor*> g = grad_tensors(grads);
    if (g.size() != theta.size() || state.velocity.size() != theta.size())
        throw ShapeError("optimizer state does not match the parameter list");

    for (std::size_t i = 0; i < theta.size(); ++i) {
        Tensor& v = state.velocity[i];
        if (v.shape() != theta[i]->shape() || g[i]->shape() != theta[i]->shape())
            throw ShapeError("optimizer tensor shapes do not match the parameters");
        const float mu = static_cast<float>(state.momentum);
        const float lr = static_cast<float>(state.lr);
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = mu * v[k] - lr * (*g[i])[k];
            (*theta[i])[k] += v[k];
        }
    }
}

TrainSample augment_with(const TrainSample& sample, FeatureKind kind, bool flip, double scale) {
    TrainSample out = sample;
    if (flip) {
        out.features = mirror_horizontal(out.features);
        if (kind == FeatureKind::flow_2d) {
            // channel 3 is flow-u; mirroring reverses horizontal motion
            const int u_channel = feature_motion_start(kind);
            for (int y = 0; y < out.features.height(); ++y)
                for (int x = 0; x < out.features.width(); ++x)
                    out.features.at(y, x, u_channel) = -out.features.at(y, x, u_channel);
        }
        Annotation flipped;
        const double w1 = out.features.width() - 1.0;
        for (const auto& [name, p] : out.ann.joints)
            flipped.joints[mirror_joint(name)] = {w1 - p.x, p.y};
        out.ann = std::move(flipped);
    }
    if (scale != 1.0) {
        if (scale <= 0.0) throw ShapeError("augmentation scale must be positive");
        const Vec2 neck = annotation_point(out.ann, "neck");
        const SimilarityTransform t{scale, 0.0, neck.x * (1.0 - scale), neck.y * (1.0 - scale)};
        out.features = warp(out.features, t);
        for (auto& [name, p] : out.ann.joints) p = t.apply(p);
    }
    return out;
}

TrainSample augment(const TrainSample& sample, FeatureKind kind, Rng& rng) {
    const bool flip = rng.coin();
    const double scale = rng.uniform(0.85, 1.15);
    return augment_with(sample, kind, flip, scale);
}

TrainResult train(ModelParams& params, const std::vector<TrainSample>& dataset,
                  const PipelineConfig& cfg, const TrainHyper& hyper) {
    if (dataset.empty()) throw DataError("training set is empty");
    if (hyper.batch < 1 || hyper.epochs < 1 || hyper.lr_decay_every < 1)
        throw ShapeError("batch, epochs, and the decay interval must be positive");
    if (hyper.crop_span % cfg.net.stride_out != 0)
        throw ShapeError("crop span must be a multiple of the output stride");
    cfg.net.validate();

    const std::vector<std::string>& names = limb_joints();
    if (cfg.net.joints != static_cast<int>(names.size()))
        throw ShapeError("model predicts " + std::to_string(cfg.net.joints) +
                         " joints but the target set has " + std::to_string(names.size()));

    OptimizerState state = make_optimizer(params, hyper.lr, hyper.momentum);
    std::vector<Tensor*> theta = param_tensors(params);

    TrainResult result;
    const std::size_t n = dataset.size();
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        state.lr = hyper.lr * std::pow(hyper.lr_decay, epoch / hyper.lr_decay_every);

        // Fisher-Yates from the per-epoch stream; sample streams key on the
        // dataset index so the visit order never changes the augmentation.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(hyper.seed, static_cast<uint64_t>(epoch), 0x50FFULL));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(hyper.batch)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(hyper.batch));

            // Nesterov: evaluate gradients at the lookahead point θ + μv,
            // then step from the saved θ.
            std::vector<Tensor> saved;
            saved.reserve(theta.size());
            for (Tensor* t : theta) saved.push_back(*t);
            for (std::size_t i = 0; i < theta.size(); ++i)
                for (std::size_t k = 0; k < theta[i]->size(); ++k)
                    (*theta[i])[k] += static_cast<float>(state.momentum) * state.velocity[i][k];

            ModelGrads batch_grads = make_grads_like(params);
            for (std::size_t pos = start; pos < stop; ++pos) {
                const std::size_t idx = order[pos];
                Rng rng(derive_seed(hyper.seed, static_cast<uint64_t>(epoch), idx, 0xA06ULL));
                SampleResult r = run_sample(params, dataset[idx], cfg, hyper.crop_span, rng, names);
                loss_sum += r.loss;
                add_grads(batch_grads, r.grads);
            }
            scale_grads(batch_grads, 1.0f / static_cast<float>(stop - start));

            for (std::size_t i = 0; i < theta.size(); ++i) *theta[i] = saved[i];
            sgd_nesterov_step(params, batch_grads, state);
        }

        result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
        if (!hyper.checkpoint_dir.empty()) {
            std::ostringstream name;
            name << hyper.checkpoint_dir << "/epoch_" << std::setw(3) << std::setfill('0')
                 << (epoch + 1) << ".ckpt";
            save_checkpoint(name.str(), cfg, params, &state);
        }
    }
    return result;
}

} // namespace mpose

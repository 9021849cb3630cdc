#include "mpose/convnet.hpp"

#include <cmath>
#include <string>

namespace mpose {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// receptive field of the bank pipeline in bank pixels (32 for two pools)
int bank_receptive_field(int pool_stages) {
    int rf = 1, jump = 1;
    for (int s = 0; s <= pool_stages; ++s) {
        rf += 4 * jump;
        if (s < pool_stages) {
            rf += jump;
            jump *= 2;
        }
    }
    return rf;
}

// extent left after running the bank pipeline over `extent` pixels;
// throws when pooling would hit an odd or exhausted extent
int pipeline_extent(int extent, int pool_stages) {
    for (int s = 0; s < pool_stages; ++s) {
        extent -= 4;
        if (extent <= 0 || extent % 2 != 0)
            throw ShapeError("bank extent " + std::to_string(extent + 4) +
                             " does not reduce cleanly through conv5+pool2");
        extent /= 2;
    }
    extent -= 4;
    if (extent < 1) throw ShapeError("bank extent too small for the conv pipeline");
    return extent;
}

Tensor crop_tl(const Tensor& t, int h, int w) {
    const int c = t.dim(0);
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = t.at(ch, y, x);
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    int c = 0;
    for (const Tensor& p : parts) c += p.dim(0);
    Tensor out({c, parts[0].dim(1), parts[0].dim(2)});
    int offset = 0;
    for (const Tensor& p : parts) {
        for (int ch = 0; ch < p.dim(0); ++ch)
            for (int y = 0; y < p.dim(1); ++y)
                for (int x = 0; x < p.dim(2); ++x) out.at(offset + ch, y, x) = p.at(ch, y, x);
        offset += p.dim(0);
    }
    return out;
}

// adjoint of upsample_nearest: sum each factor×factor block
Tensor upsample_nearest_grad(const Tensor& grad_up, int factor) {
    const int c = grad_up.dim(0), h = grad_up.dim(1) / factor, w = grad_up.dim(2) / factor;
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int a = 0; a < factor; ++a)
                    for (int b = 0; b < factor; ++b)
                        acc += grad_up.at(ch, y * factor + a, x * factor + b);
                out.at(ch, y, x) = static_cast<float>(acc);
            }
    return out;
}

struct GridGeometry {
    int eh = 0, ew = 0; // concatenated grid extents before the trunk
    int gh = 0, gw = 0; // response grid extents
};

GridGeometry grid_geometry(const NetworkConfig& cfg, int h0, int w0) {
    GridGeometry g;
    g.eh = g.ew = 1 << 30;
    for (int b = 0; b < cfg.banks; ++b) {
        int eb_h = pipeline_extent(h0 >> b, cfg.pool_stages()) << b;
        int eb_w = pipeline_extent(w0 >> b, cfg.pool_stages()) << b;
        g.eh = std::min(g.eh, eb_h);
        g.ew = std::min(g.ew, eb_w);
    }
    g.gh = g.eh - (cfg.trunk_kernel() - 1);
    g.gw = g.ew - (cfg.trunk_kernel() - 1);
    require(g.gh >= 1 && g.gw >= 1, "input too small for the trunk kernel");
    return g;
}

void validate_pyramid(const NetworkConfig& cfg, const std::vector<Tensor>& pyramid) {
    require(static_cast<int>(pyramid.size()) == cfg.banks,
            "pyramid bank count does not match the config");
    const int h0 = pyramid[0].dim(1), w0 = pyramid[0].dim(2);
    const int div = 1 << (cfg.banks - 1);
    require(h0 % div == 0 && w0 % div == 0,
            "bank-0 extents must be divisible by 2^(banks-1)");
    for (int b = 0; b < cfg.banks; ++b) {
        const Tensor& t = pyramid[static_cast<std::size_t>(b)];
        require(t.rank() == 3, "pyramid banks must be [C,H,W]");
        require(t.dim(0) == cfg.input_channels, "pyramid channel count does not match the config");
        require(t.dim(1) == h0 >> b && t.dim(2) == w0 >> b,
                "each pyramid bank must be half the extent of the previous");
    }
}

// bank pipeline shared by both forward forms
Tensor run_bank(const ModelParams& params, int bank, const Tensor& input, BankTrace* trace) {
    const int stages = params.config.pool_stages() + 1;
    Tensor x = input;
    for (int s = 0; s < stages; ++s) {
        const ConvLayer& layer = params.banks[static_cast<std::size_t>(bank)][static_cast<std::size_t>(s)];
        Tensor conv = conv2d(x, layer.kernel, layer.bias);
        Tensor activated = relu(conv);
        if (trace) {
            trace->conv_in.push_back(std::move(x));
            trace->conv_out.push_back(conv);
        }
        if (s < stages - 1) {
            PoolResult pooled = maxpool2(activated);
            if (trace) trace->pools.push_back(std::move(pooled.indices));
            x = std::move(pooled.output);
        } else {
            x = std::move(activated);
        }
    }
    if (trace) trace->feature = x;
    return x;
}

ModelGrads zero_grads(const ModelParams& params) {
    ModelGrads g;
    g.banks.resize(params.banks.size());
    for (std::size_t b = 0; b < params.banks.size(); ++b)
        for (const ConvLayer& layer : params.banks[b])
            g.banks[b].push_back({Tensor::zeros_like(layer.kernel), Tensor::zeros_like(layer.bias)});
    for (const ConvLayer& layer : params.trunk)
        g.trunk.push_back({Tensor::zeros_like(layer.kernel), Tensor::zeros_like(layer.bias)});
    return g;
}

} // namespace

int NetworkConfig::pool_stages() const {
    int p = 0, s = stride_out;
    while (s > 1 && s % 2 == 0) {
        s /= 2;
        ++p;
    }
    return p;
}

int NetworkConfig::trunk_kernel() const { return pipeline_extent(window, pool_stages()); }

void NetworkConfig::validate() const {
    require(conv_features >= 1, "conv_features must be positive");
    require(joints >= 1, "joints must be positive");
    require(fc_widths[0] >= 1 && fc_widths[1] >= 1, "fc widths must be positive");
    require(input_channels >= 1, "input_channels must be positive");
    require(banks >= 1, "banks must be >= 1");

    int s = stride_out, p = 0;
    while (s > 1 && s % 2 == 0) {
        s /= 2;
        ++p;
    }
    require(s == 1 && p >= 1, "stride_out must be a power of two >= 2");
    require(window == 64 ? stride_out == 4 : true,
            "a 64 px window reduces through exactly two poolings (stride_out 4)");
    // patchwise crops stay pool-aligned only while each bank's stride
    // divides the output stride
    require(banks <= p + 1, "banks may not exceed pool_stages + 1");
    require(window % (1 << (banks - 1)) == 0, "window must split across all banks");
    pipeline_extent(window, p); // the trunk kernel; throws when the chain breaks
}

ModelParams build_uninitialized(const NetworkConfig& config) {
    config.validate();
    ModelParams params;
    params.config = config;

    const int f = config.conv_features;
    const int stages = config.pool_stages() + 1;
    params.banks.resize(static_cast<std::size_t>(config.banks));
    for (int b = 0; b < config.banks; ++b)
        for (int s = 0; s < stages; ++s) {
            int cin = s == 0 ? config.input_channels : f;
            params.banks[static_cast<std::size_t>(b)].push_back(
                ConvLayer{Tensor({f, cin, 5, 5}), Tensor({f})});
        }

    const int k = config.trunk_kernel();
    const int concat = config.banks * f;
    std::array<std::array<int, 4>, 3> trunk_shapes = {{
        {config.fc_widths[0], concat, k, k},
        {config.fc_widths[1], config.fc_widths[0], 1, 1},
        {config.joints, config.fc_widths[1], 1, 1},
    }};
    for (const auto& s : trunk_shapes)
        params.trunk.push_back(ConvLayer{Tensor({s[0], s[1], s[2], s[3]}), Tensor({s[0]})});
    return params;
}

ModelParams build(const NetworkConfig& config, Rng& rng) {
    ModelParams params = build_uninitialized(config);
    // kernels uniform ±1/√fan_in in storage order; biases stay zero
    for (auto& bank : params.banks)
        for (ConvLayer& layer : bank) {
            const int fan_in = layer.kernel.dim(1) * layer.kernel.dim(2) * layer.kernel.dim(3);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::size_t i = 0; i < layer.kernel.size(); ++i)
                layer.kernel[i] = static_cast<float>(rng.uniform(-bound, bound));
        }
    for (ConvLayer& layer : params.trunk) {
        const int fan_in = layer.kernel.dim(1) * layer.kernel.dim(2) * layer.kernel.dim(3);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < layer.kernel.size(); ++i)
            layer.kernel[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    return params;
}

int response_cells(const NetworkConfig& config, int input_extent) {
    config.validate();
    int e = 1 << 30;
    for (int b = 0; b < config.banks; ++b)
        e = std::min(e, pipeline_extent(input_extent >> b, config.pool_stages()) << b);
    const int cells = e - (config.trunk_kernel() - 1);
    require(cells >= 1, "input extent too small for the trunk kernel");
    return cells;
}

std::vector<Tensor*> param_tensors(ModelParams& params) {
    std::vector<Tensor*> out;
    for (auto& bank : params.banks)
        for (ConvLayer& layer : bank) {
            out.push_back(&layer.kernel);
            out.push_back(&layer.bias);
        }
    for (ConvLayer& layer : params.trunk) {
        out.push_back(&layer.kernel);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<const Tensor*> param_tensors(const ModelParams& params) {
    std::vector<const Tensor*> out;
    for (const auto& bank : params.banks)
        for (const ConvLayer& layer : bank) {
            out.push_back(&layer.kernel);
            out.push_back(&layer.bias);
        }
    for (const ConvLayer& layer : params.trunk) {
        out.push_back(&layer.kernel);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<Tensor*> grad_tensors(ModelGrads& grads) {
    std::vector<Tensor*> out;
    for (auto& bank : grads.banks)
        for (ConvLayer& layer : bank) {
            out.push_back(&layer.kernel);
            out.push_back(&layer.bias);
        }
    for (ConvLayer& layer : grads.trunk) {
        out.push_back(&layer.kernel);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<const Tensor*> grad_tensors(const ModelGrads& grads) {
    std::vector<const Tensor*> out;
    for (const auto& bank : grads.banks)
        for (const ConvLayer& layer : bank) {
            out.push_back(&layer.kernel);
            out.push_back(&layer.bias);
        }
    for (const ConvLayer& layer : grads.trunk) {
        out.push_back(&layer.kernel);
        out.push_back(&layer.bias);
    }
    return out;
}

ResponseMaps forward_oneshot(const ModelParams& params, const std::vector<Tensor>& pyramid,
                             ForwardTrace* trace) {
    const NetworkConfig& cfg = params.config;
    cfg.validate();
    validate_pyramid(cfg, pyramid);
    GridGeometry geo = grid_geometry(cfg, pyramid[0].dim(1), pyramid[0].dim(2));

    std::vector<Tensor> upsampled;
    if (trace) trace->banks.resize(static_cast<std::size_t>(cfg.banks));
    for (int b = 0; b < cfg.banks; ++b) {
        Tensor feat = run_bank(params, b, pyramid[static_cast<std::size_t>(b)],
                               trace ? &trace->banks[static_cast<std::size_t>(b)] : nullptr);
        Tensor up = upsample_nearest(feat, 1 << b);
        upsampled.push_back(crop_tl(up, geo.eh, geo.ew));
    }
    Tensor u = concat_channels(upsampled);

    Tensor t0 = conv2d(u, params.trunk[0].kernel, params.trunk[0].bias);
    Tensor h1 = relu(t0);
    Tensor t1 = conv2d(h1, params.trunk[1].kernel, params.trunk[1].bias);
    Tensor h2 = relu(t1);
    Tensor t2 = conv2d(h2, params.trunk[2].kernel, params.trunk[2].bias);

    if (trace) {
        trace->concat = u;
        trace->trunk_in = {u, h1, h2};
        trace->trunk_out = {t0, t1, t2};
    }

    ResponseMaps out;
    out.maps = std::move(t2);
    out.stride = cfg.stride_out;
    out.origin_y = out.origin_x = (cfg.window - 1) / 2.0;
    return out;
}

ResponseMaps forward_patchwise(const ModelParams& params, const std::vector<Tensor>& pyramid,
                               int window, int step) {
    const NetworkConfig& cfg = params.config;
    cfg.validate();
    require(window == 0 || window == cfg.window, "patchwise window must match the config");
    require(step == 0 || step == cfg.stride_out, "patchwise step must match the config");
    validate_pyramid(cfg, pyramid);
    GridGeometry geo = grid_geometry(cfg, pyramid[0].dim(1), pyramid[0].dim(2));

    const int k = cfg.trunk_kernel();
    const int rf = bank_receptive_field(cfg.pool_stages());
    const int s = cfg.stride_out;
    const int f = cfg.conv_features;

    ResponseMaps out;
    out.maps = Tensor({cfg.joints, geo.gh, geo.gw});
    out.stride = s;
    out.origin_y = out.origin_x = (cfg.window - 1) / 2.0;

    for (int gy = 0; gy < geo.gh; ++gy)
        for (int gx = 0; gx < geo.gw; ++gx) {
            // per-window network: crop each bank around this window, run the
            // pipeline, and replicate bank cells onto the k×k trunk input
            Tensor u({cfg.banks * f, k, k});
            for (int b = 0; b < cfg.banks; ++b) {
                const Tensor& bank_img = pyramid[static_cast<std::size_t>(b)];
                const int j0y = gy >> b, j0x = gx >> b;
                const int span_y = ((gy + k - 1) >> b) - j0y + 1;
                const int span_x = ((gx + k - 1) >> b) - j0x + 1;
                const int crop_h = s * (span_y - 1) + rf;
                const int crop_w = s * (span_x - 1) + rf;

                Tensor crop({cfg.input_channels, crop_h, crop_w});
                for (int c = 0; c < cfg.input_channels; ++c)
                    for (int y = 0; y < crop_h; ++y)
                        for (int x = 0; x < crop_w; ++x)
                            crop.at(c, y, x) = bank_img.at(c, s * j0y + y, s * j0x + x);

                Tensor feat = run_bank(params, b, crop, nullptr);
                require(feat.dim(1) == span_y && feat.dim(2) == span_x,
                        "window crop did not reduce to the expected cell span");

                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        int jy = ((gy + ky) >> b) - j0y;
                        int jx = ((gx + kx) >> b) - j0x;
                        for (int c = 0; c < f; ++c)
                            u.at(b * f + c, ky, kx) = feat.at(c, jy, jx);
                    }
            }

            Tensor t0 = conv2d(u, params.trunk[0].kernel, params.trunk[0].bias);
            Tensor t1 = conv2d(relu(t0), params.trunk[1].kernel, params.trunk[1].bias);
            Tensor t2 = conv2d(relu(t1), params.trunk[2].kernel, params.trunk[2].bias);
            for (int j = 0; j < cfg.joints; ++j) out.maps.at(j, gy, gx) = t2.at(j, 0, 0);
        }
    return out;
}

ModelGrads backward(const ModelParams& params, const ForwardTrace& trace, const Tensor& grad_maps) {
    const NetworkConfig& cfg = params.config;
    require(trace.trunk_out.size() == 3 && trace.banks.size() == static_cast<std::size_t>(cfg.banks),
            "forward trace does not match the model");
    require(grad_maps.rank() == 3 && grad_maps.shape() == trace.trunk_out[2].shape(),
            "gradient shape does not match the forward output");

    ModelGrads grads = zero_grads(params);

    // trunk, last stage first; final stage is linear (no ReLU)
    Tensor g = grad_maps;
    for (int s = 2; s >= 0; --s) {
        if (s < 2) g = relu_grad(trace.trunk_out[static_cast<std::size_t>(s)], g);
        ConvGrads cg = conv2d_grad(trace.trunk_in[static_cast<std::size_t>(s)],
                                   params.trunk[static_cast<std::size_t>(s)].kernel, 1, g);
        grads.trunk[static_cast<std::size_t>(s)].kernel = std::move(cg.kernel);
        grads.trunk[static_cast<std::size_t>(s)].bias = std::move(cg.bias);
        g = std::move(cg.input);
    }

    // g now holds the gradient at the concatenated grid; split per bank,
    // undo the crop and the upsampling, then walk the pipeline backwards
    const int f = cfg.conv_features;
    const int stages = cfg.pool_stages() + 1;
    for (int b = 0; b < cfg.banks; ++b) {
        const BankTrace& bt = trace.banks[static_cast<std::size_t>(b)];
        const int factor = 1 << b;
        const int full_h = bt.feature.dim(1) * factor, full_w = bt.feature.dim(2) * factor;

        Tensor up_grad({f, full_h, full_w});
        for (int c = 0; c < f; ++c)
            for (int y = 0; y < g.dim(1); ++y)
                for (int x = 0; x < g.dim(2); ++x) up_grad.at(c, y, x) = g.at(b * f + c, y, x);

        Tensor bg = upsample_nearest_grad(up_grad, factor);
        for (int s = stages - 1; s >= 0; --s) {
            if (s < stages - 1) bg = maxpool2_grad(bt.pools[static_cast<std::size_t>(s)], bg);
            bg = relu_grad(bt.conv_out[static_cast<std::size_t>(s)], bg);
            ConvGrads cg = conv2d_grad(bt.conv_in[static_cast<std::size_t>(s)],
                                       params.banks[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)].kernel,
                                       1, bg);
            grads.banks[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)].kernel = std::move(cg.kernel);
            grads.banks[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)].bias = std::move(cg.bias);
            bg = std::move(cg.input);
        }
    }
    return grads;
}

ModelGrads backward(const ModelParams& params, const std::vector<Tensor>& pyramid,
                    const Tensor& grad_maps) {
    ForwardTrace trace;
    forward_oneshot(params, pyramid, &trace);
    return backward(params, trace, grad_maps);
}

} // namespace mpose

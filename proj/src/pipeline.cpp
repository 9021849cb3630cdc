#include "mpose/pipeline.hpp"

#include <json.hpp>

namespace mpose {

namespace {

// bank-pipeline receptive field in bank pixels (32 for two pool stages)
int receptive_field(int pool_stages) {
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

// reflect i into [0, n) with edge repeat, folding as often as needed
int fold_reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

} // namespace

PadSpec pad_for_grid(int height, int width, const NetworkConfig& cfg) {
    cfg.validate();
    if (height < 1 || width < 1) throw ShapeError("image extents must be positive");
    const int s = cfg.stride_out;
    const int k = cfg.trunk_kernel();
    const int coarse = 1 << (cfg.banks - 1);
    const int rf = receptive_field(cfg.pool_stages());
    const int unit = s * coarse; // padded extents must divide into every bank
    const int before = (cfg.window - s) / 2;

    PadSpec pad;
    pad.before_y = pad.before_x = before;
    auto padded = [&](int extent) {
        const int cells = (extent + s - 1) / s;
        // smallest extent whose grid covers `cells`: the coarsest bank
        // dominates, consuming (rf − s)·2^(banks−1) pixels of context
        int p = s * (cells + k - 1) + (rf - s) * coarse;
        p = std::max(p, before + extent);
        return (p + unit - 1) / unit * unit;
    };
    pad.height = padded(height);
    pad.width = padded(width);
    return pad;
}

Image pad_reflect(const Image& img, const PadSpec& pad) {
    if (pad.height < img.height() + pad.before_y || pad.width < img.width() + pad.before_x)
        throw ShapeError("padded extents do not contain the image");
    Image out(pad.height, pad.width, img.channels());
    for (int y = 0; y < pad.height; ++y) {
        const int sy = fold_reflect(y - pad.before_y, img.height());
        for (int x = 0; x < pad.width; ++x) {
            const int sx = fold_reflect(x - pad.before_x, img.width());
            for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({img.channels(), img.height(), img.width()});
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c) t.at(c, y, x) = img.at(y, x, c);
    return t;
}

PipelineConfig make_pipeline_config(FeatureKind kind, int delta, bool compensate,
                                    const NetworkConfig& net) {
    PipelineConfig cfg;
    cfg.net = net;
    cfg.net.input_channels = feature_channel_count(kind);
    cfg.motion.kind = kind;
    cfg.motion.delta = delta;
    cfg.motion.compensate_camera = compensate;
    cfg.pyramid.banks = net.banks;
    cfg.pyramid.motion_channels_start = feature_motion_start(kind);
    cfg.net.validate();
    return cfg;
}

const char* feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::rgb: return "rgb";
        case FeatureKind::frame_pair: return "frame_pair";
        case FeatureKind::frame_diff: return "frame_diff";
        case FeatureKind::flow_2d: return "flow_2d";
        case FeatureKind::flow_mag: return "flow_mag";
    }
    throw DataError("unknown feature kind");
}

FeatureKind feature_kind_from_name(const std::string& name) {
    for (FeatureKind kind : {FeatureKind::rgb, FeatureKind::frame_pair, FeatureKind::frame_diff,
                             FeatureKind::flow_2d, FeatureKind::flow_mag})
        if (name == feature_kind_name(kind)) return kind;
    throw DataError("unknown feature kind '" + name + "'");
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["net"] = {{"conv_features", cfg.net.conv_features},
                {"banks", cfg.net.banks},
                {"window", cfg.net.window},
                {"stride_out", cfg.net.stride_out},
                {"joints", cfg.net.joints},
                {"fc_widths", {cfg.net.fc_widths[0], cfg.net.fc_widths[1]}},
                {"input_channels", cfg.net.input_channels}};
    j["motion"] = {{"kind", feature_kind_name(cfg.motion.kind)},
                   {"delta", cfg.motion.delta},
                   {"compensate", cfg.motion.compensate_camera}};
    j["pyramid"] = {{"banks", cfg.pyramid.banks},
                    {"motion_channels_start", cfg.pyramid.motion_channels_start},
                    {"lcn_sigma", cfg.pyramid.lcn_sigma},
                    {"lmn_sigma", cfg.pyramid.lmn_sigma}};
    j["target_sigma"] = cfg.target_sigma;
    return j.dump(2);
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("pipeline config is not valid JSON: ") + e.what());
    }
    try {
        PipelineConfig cfg;
        const auto& n = j.at("net");
        cfg.net.conv_features = n.at("conv_features").get<int>();
        cfg.net.banks = n.at("banks").get<int>();
        cfg.net.window = n.at("window").get<int>();
        cfg.net.stride_out = n.at("stride_out").get<int>();
        cfg.net.joints = n.at("joints").get<int>();
        cfg.net.fc_widths = {n.at("fc_widths").at(0).get<int>(), n.at("fc_widths").at(1).get<int>()};
        cfg.net.input_channels = n.at("input_channels").get<int>();
        const auto& m = j.at("motion");
        cfg.motion.kind = feature_kind_from_name(m.at("kind").get<std::string>());
        cfg.motion.delta = m.at("delta").get<int>();
        cfg.motion.compensate_camera = m.at("compensate").get<bool>();
        const auto& p = j.at("pyramid");
        cfg.pyramid.banks = p.at("banks").get<int>();
        cfg.pyramid.motion_channels_start = p.at("motion_channels_start").get<int>();
        cfg.pyramid.lcn_sigma = p.at("lcn_sigma").get<double>();
        cfg.pyramid.lmn_sigma = p.at("lmn_sigma").get<double>();
        cfg.target_sigma = j.at("target_sigma").get<double>();
        cfg.net.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("pipeline config is missing fields: ") + e.what());
    }
}

ResponseMaps infer_maps(const ModelParams& params, const Image& features,
                        const PipelineConfig& cfg) {
    if (features.channels() != cfg.net.input_channels)
        throw ShapeError("feature stack channel count does not match the model");
    const PadSpec pad = pad_for_grid(features.height(), features.width(), cfg.net);
    const Image padded = pad_reflect(features, pad);
    std::vector<Image> banks = build_pyramid(padded, cfg.pyramid);
    std::vector<Tensor> pyramid;
    pyramid.reserve(banks.size());
    for (const Image& bank : banks) pyramid.push_back(image_to_tensor(bank));

    ResponseMaps maps = forward_oneshot(params, pyramid);
    maps.origin_y -= pad.before_y;
    maps.origin_x -= pad.before_x;
    return maps;
}

} // namespace mpose

#include "mpose/spatial.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mpose/image.hpp"

namespace mpose {

namespace {

int offset_bin(double v, int bin) { return static_cast<int>(std::floor(v / bin)); }

// Truncated Gaussian along one axis; the grid is padded by the kernel
// radius, so mass lost at the borders is negligible.
std::vector<double> gaussian_kernel(double sigma_bins, int radius) {
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma_bins * sigma_bins));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

} // namespace

SpatialModel build_masks(const std::vector<Annotation>& annotations,
                         const std::vector<std::string>& joints, int bin,
                         double blur_sigma_px) {
    if (annotations.empty()) throw DataError("cannot build a spatial model without annotations");
    if (joints.empty()) throw DataError("cannot build a spatial model without joints");
    if (bin < 1) throw ShapeError("offset bin must be positive");
    if (blur_sigma_px < 0.0) throw ShapeError("blur sigma must be nonnegative");

    // gather offsets and the shared bin range
    std::vector<std::vector<Vec2>> offsets(joints.size());
    int lo_y = 0, hi_y = 0, lo_x = 0, hi_x = 0;
    bool any = false;
    for (const Annotation& ann : annotations) {
        const Vec2 torso = torso_center(ann);
        for (std::size_t j = 0; j < joints.size(); ++j) {
            auto it = ann.joints.find(joints[j]);
            if (it == ann.joints.end()) continue; // occluded here
            const Vec2 d = it->second - torso;
            offsets[j].push_back(d);
            const int by = offset_bin(d.y, bin), bx = offset_bin(d.x, bin);
            if (!any) {
                lo_y = hi_y = by;
                lo_x = hi_x = bx;
                any = true;
            } else {
                lo_y = std::min(lo_y, by);
                hi_y = std::max(hi_y, by);
                lo_x = std::min(lo_x, bx);
                hi_x = std::max(hi_x, bx);
            }
        }
    }
    for (std::size_t j = 0; j < joints.size(); ++j)
        if (offsets[j].empty())
            throw DataError("joint '" + joints[j] + "' is never observed in the annotations");

    const double sigma_bins = blur_sigma_px / bin;
    const int pad = blur_sigma_px > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma_bins)) : 0;

    SpatialModel model;
    model.bin = bin;
    model.origin_bin_y = lo_y - pad;
    model.origin_bin_x = lo_x - pad;
    model.joints = joints;
    const int height = hi_y - lo_y + 1 + 2 * pad;
    const int width = hi_x - lo_x + 1 + 2 * pad;
    model.weights = Tensor({static_cast<int>(joints.size()), height, width});

    for (std::size_t j = 0; j < joints.size(); ++j) {
        // binarized histogram: a cell is supported once seen, regardless of
        // how often
        std::vector<double> plane(static_cast<std::size_t>(height) * width, 0.0);
        for (const Vec2& d : offsets[j]) {
            const int iy = offset_bin(d.y, bin) - model.origin_bin_y;
            const int ix = offset_bin(d.x, bin) - model.origin_bin_x;
            plane[static_cast<std::size_t>(iy) * width + ix] = 1.0;
        }

        if (pad > 0) {
            const std::vector<double> kernel = gaussian_kernel(sigma_bins, pad);
            std::vector<double> tmp(plane.size(), 0.0);
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    double acc = 0.0;
                    for (int t = -pad; t <= pad; ++t) {
                        const int sx = x + t;
                        if (sx < 0 || sx >= width) continue;
                        acc += plane[static_cast<std::size_t>(y) * width + sx] *
                               kernel[static_cast<std::size_t>(t + pad)];
                    }
                    tmp[static_cast<std::size_t>(y) * width + x] = acc;
                }
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    double acc = 0.0;
                    for (int t = -pad; t <= pad; ++t) {
                        const int sy = y + t;
                        if (sy < 0 || sy >= height) continue;
                        acc += tmp[static_cast<std::size_t>(sy) * width + x] *
                               kernel[static_cast<std::size_t>(t + pad)];
                    }
                    plane[static_cast<std::size_t>(y) * width + x] = acc;
                }
        }

        double peak = 0.0;
        for (double v : plane) peak = std::max(peak, v);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                model.weights.at(static_cast<int>(j), y, x) =
                    static_cast<float>(plane[static_cast<std::size_t>(y) * width + x] / peak);
    }
    return model;
}

double mask_weight(const SpatialModel& model, int joint, Vec2 offset) {
    if (joint < 0 || joint >= model.weights.dim(0))
        throw ShapeError("joint index out of range for the spatial model");
    const int iy = offset_bin(offset.y, model.bin) - model.origin_bin_y;
    const int ix = offset_bin(offset.x, model.bin) - model.origin_bin_x;
    if (iy < 0 || iy >= model.weights.dim(1) || ix < 0 || ix >= model.weights.dim(2)) return 0.0;
    return model.weights.at(joint, iy, ix);
}

ResponseMaps apply_masks(const ResponseMaps& maps, const SpatialModel& model, Vec2 torso) {
    if (maps.maps.rank() != 3) throw ShapeError("response maps must be rank 3");
    if (maps.maps.dim(0) != static_cast<int>(model.joints.size()))
        throw ShapeError("response maps carry " + std::to_string(maps.maps.dim(0)) +
                         " planes but the spatial model has " +
                         std::to_string(model.joints.size()) + " masks");

    ResponseMaps out = maps;
    const int gy_n = maps.maps.dim(1), gx_n = maps.maps.dim(2);
    for (int j = 0; j < maps.maps.dim(0); ++j)
        for (int gy = 0; gy < gy_n; ++gy) {
            const double y = maps.origin_y + static_cast<double>(maps.stride) * gy;
            for (int gx = 0; gx < gx_n; ++gx) {
                const double x = maps.origin_x + static_cast<double>(maps.stride) * gx;
                const double w = mask_weight(model, j, Vec2{x, y} - torso);
                out.maps.at(j, gy, gx) = static_cast<float>(maps.maps.at(j, gy, gx) * w);
            }
        }
    return out;
}

std::vector<JointPrediction> predict_joints(const ResponseMaps& maps) {
    if (maps.maps.rank() != 3) throw ShapeError("response maps must be rank 3");
    const int joints = maps.maps.dim(0), gy_n = maps.maps.dim(1), gx_n = maps.maps.dim(2);
    if (gy_n < 1 || gx_n < 1) throw ShapeError("response grid is empty");

    std::vector<JointPrediction> out;
    out.reserve(static_cast<std::size_t>(joints));
    for (int j = 0; j < joints; ++j) {
        int best_y = 0, best_x = 0;
        float best = maps.maps.at(j, 0, 0);
        bool all_equal = true;
        for (int gy = 0; gy < gy_n; ++gy)
            for (int gx = 0; gx < gx_n; ++gx) {
                const float v = maps.maps.at(j, gy, gx);
                if (v != best) all_equal = false;
                if (v > best) {
                    best = v;
                    best_y = gy;
                    best_x = gx;
                }
            }

        JointPrediction pred;
        pred.score = best;
        if (all_equal && best == 0.0f) {
            best_y = (gy_n - 1) / 2; // nothing to go on: central cell
            best_x = (gx_n - 1) / 2;
            pred.low_confidence = true;
        } else if (all_equal) {
            best_y = 0;
            best_x = 0;
            pred.low_confidence = true;
        }
        pred.position = {maps.origin_x + static_cast<double>(maps.stride) * best_x,
                         maps.origin_y + static_cast<double>(maps.stride) * best_y};
        out.push_back(pred);
    }
    return out;
}

void save_spatial_model(const std::string& base_path, const SpatialModel& model) {
    const int joints = model.weights.dim(0);
    const int height = model.weights.dim(1), width = model.weights.dim(2);
    Image planes(height, width, joints);
    for (int j = 0; j < joints; ++j)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) planes.at(y, x, j) = model.weights.at(j, y, x);
    save_f32p(planes, base_path + ".f32p");

    std::ofstream txt(base_path + ".txt", std::ios::trunc);
    if (!txt) throw IoError("cannot open '" + base_path + ".txt' for writing");
    txt << "bin " << model.bin << "\n";
    txt << "origin " << model.origin_bin_y << " " << model.origin_bin_x << "\n";
    txt << "joints";
    for (const std::string& name : model.joints) txt << " " << name;
    txt << "\n";
    if (!txt) throw IoError("short write to '" + base_path + ".txt'");
}

SpatialModel load_spatial_model(const std::string& base_path) {
    std::ifstream txt(base_path + ".txt");
    if (!txt) throw IoError("cannot open '" + base_path + ".txt'");

    SpatialModel model;
    std::string key;
    if (!(txt >> key) || key != "bin" || !(txt >> model.bin) || model.bin < 1)
        throw DataError("spatial model sidecar is malformed: expected 'bin <px>'");
    if (!(txt >> key) || key != "origin" || !(txt >> model.origin_bin_y >> model.origin_bin_x))
        throw DataError("spatial model sidecar is malformed: expected 'origin <by> <bx>'");
    if (!(txt >> key) || key != "joints")
        throw DataError("spatial model sidecar is malformed: expected 'joints <names...>'");
    std::string name;
    while (txt >> name) model.joints.push_back(name);
    if (model.joints.empty()) throw DataError("spatial model sidecar lists no joints");

    const Image planes = load_f32p(base_path + ".f32p");
    if (planes.channels() != static_cast<int>(model.joints.size()))
        throw DataError("spatial model weights carry " + std::to_string(planes.channels()) +
                        " planes but the sidecar lists " + std::to_string(model.joints.size()) +
                        " joints");
    model.weights =
        Tensor({planes.channels(), planes.height(), planes.width()});
    for (int j = 0; j < planes.channels(); ++j)
        for (int y = 0; y < planes.height(); ++y)
            for (int x = 0; x < planes.width(); ++x)
                model.weights.at(j, y, x) = planes.at(y, x, j);
    return model;
}

} // namespace mpose

#pragma once

#include <vector>

#include "mpose/errors.hpp"
#include "mpose/geometry.hpp"

namespace mpose {

// H×W×C float planes, interleaved row-major (y, x, channel). RGB content
// lives in [0,1]; flow and feature channels carry their natural units.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int y, int x, int c) {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }
    float at(int y, int x, int c) const {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

// Separable Gaussian, radius ceil(3σ), kernel normalized to sum 1.
// Borders reflect with edge repeat, which preserves the image mean exactly
// for symmetric kernels.
Image gaussian_blur(const Image& img, double sigma);

// Gaussian pre-blur (σ=1) then 2× decimation at even indices.
Image downsample2(const Image& img);

// Subtract the local Gaussian-weighted mean, divide by
// max(local Gaussian-weighted std, 0.01). Channels are independent.
Image lcn(const Image& img, double sigma);

// Same normalization with a wide kernel, for motion channels: a constant
// background field (camera pan) is removed and magnitudes are equalized.
Image lmn(const Image& motion, double sigma_large);

struct PyramidSpec {
    int banks = 3;
    // channels at index >= motion_channels_start get the wide LMN kernel
    int motion_channels_start = 3;
    double lcn_sigma = 4.0;
    double lmn_sigma = 12.0;
};

// Bank k is the stack downsampled k times, then per-channel LCN/LMN with
// the same kernels at every bank.
std::vector<Image> build_pyramid(const Image& stack, const PyramidSpec& spec);

struct WarpResult {
    Image image;
    // 1 where the source sample fell fully inside the input, else 0
    std::vector<uint8_t> valid;
};

// Inverse mapping: out(q) = img(t⁻¹(q)), bilinear, out-of-bounds → 0.
Image warp(const Image& img, const SimilarityTransform& t);
WarpResult warp_with_mask(const Image& img, const SimilarityTransform& t);

// PNG I/O: 8-bit, gray or RGB, values scaled to/from [0,1].
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

// Raw float plane format `.f32p`: little-endian u32 height,width,channels
// then row-major interleaved float32.
Image load_f32p(const std::string& path);
void save_f32p(const Image& img, const std::string& path);

} // namespace mpose

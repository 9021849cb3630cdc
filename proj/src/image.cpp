#include "mpose/image.hpp"

#include <cmath>

namespace mpose {

Image::Image(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw ShapeError("image extents and channel count must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw ShapeError("gaussian sigma must be positive");
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// reflect with edge repeat: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2
int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// separable blur, double intermediate so the two passes do not accumulate
// float32 rounding
void blur_into(const Image& img, const std::vector<double>& k, Image& out) {
    const int h = img.height(), w = img.width(), c = img.channels();
    const int radius = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(img.size());

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t o = (static_cast<std::size_t>(y) * w + x) * c;
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    int xs = reflect(x + t, w);
                    acc += k[static_cast<std::size_t>(t + radius)] * img.at(y, xs, ch);
                }
                tmp[o + static_cast<std::size_t>(ch)] = acc;
            }
        }

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    int ys = reflect(y + t, h);
                    acc += k[static_cast<std::size_t>(t + radius)] *
                           tmp[(static_cast<std::size_t>(ys) * w + x) * c + ch];
                }
                out.at(y, x, ch) = static_cast<float>(acc);
            }
}

// shared core of LCN and LMN: subtractive then divisive normalization
Image subtract_divide(const Image& img, double sigma) {
    const double eps = 0.01;
    std::vector<double> k = gaussian_kernel(sigma);
    Image mean(img.height(), img.width(), img.channels());
    blur_into(img, k, mean);

    Image centered(img.height(), img.width(), img.channels());
    Image centered_sq(img.height(), img.width(), img.channels());
    for (std::size_t i = 0; i < img.size(); ++i) {
        float v = img.data()[i] - mean.data()[i];
        centered.data()[i] = v;
        centered_sq.data()[i] = v * v;
    }

    Image var(img.height(), img.width(), img.channels());
    blur_into(centered_sq, k, var);

    Image out(img.height(), img.width(), img.channels());
    for (std::size_t i = 0; i < img.size(); ++i) {
        double sd = std::sqrt(std::max(0.0, static_cast<double>(var.data()[i])));
        out.data()[i] = static_cast<float>(centered.data()[i] / std::max(sd, eps));
    }
    return out;
}

} // namespace

Image gaussian_blur(const Image& img, double sigma) {
    std::vector<double> k = gaussian_kernel(sigma);
    Image out(img.height(), img.width(), img.channels());
    blur_into(img, k, out);
    return out;
}

Image downsample2(const Image& img) {
    if (img.height() % 2 != 0 || img.width() % 2 != 0)
        throw ShapeError("downsample2 requires even extents");
    Image blurred = gaussian_blur(img, 1.0);
    Image out(img.height() / 2, img.width() / 2, img.channels());
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                out.at(y, x, c) = blurred.at(2 * y, 2 * x, c);
    return out;
}

Image lcn(const Image& img, double sigma) { return subtract_divide(img, sigma); }

Image lmn(const Image& motion, double sigma_large) { return subtract_divide(motion, sigma_large); }

std::vector<Image> build_pyramid(const Image& stack, const PyramidSpec& spec) {
    if (spec.banks < 1) throw ShapeError("pyramid needs at least one bank");
    const int div = 1 << (spec.banks - 1);
    if (stack.height() % div != 0 || stack.width() % div != 0)
        throw ShapeError("pyramid input extents must be divisible by 2^(banks-1)");

    std::vector<Image> banks;
    Image current = stack;
    for (int b = 0; b < spec.banks; ++b) {
        if (b > 0) current = downsample2(current);
        Image normalized(current.height(), current.width(), current.channels());
        for (int c = 0; c < current.channels(); ++c) {
            // normalize one channel at a time so each gets its own kernel
            Image chan(current.height(), current.width(), 1);
            for (int y = 0; y < current.height(); ++y)
                for (int x = 0; x < current.width(); ++x)
                    chan.at(y, x, 0) = current.at(y, x, c);
            double sigma = c >= spec.motion_channels_start ? spec.lmn_sigma : spec.lcn_sigma;
            Image n = subtract_divide(chan, sigma);
            for (int y = 0; y < current.height(); ++y)
                for (int x = 0; x < current.width(); ++x)
                    normalized.at(y, x, c) = n.at(y, x, 0);
        }
        banks.push_back(std::move(normalized));
    }
    return banks;
}

WarpResult warp_with_mask(const Image& img, const SimilarityTransform& t) {
    if (t.scale == 0.0) throw ShapeError("warp transform must have nonzero scale");
    SimilarityTransform inv = t.inverse();
    const int h = img.height(), w = img.width(), c = img.channels();
    WarpResult r{Image(h, w, c), std::vector<uint8_t>(static_cast<std::size_t>(h) * w, 0)};

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Vec2 src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            if (src.x < 0.0 || src.y < 0.0 || src.x > w - 1.0 || src.y > h - 1.0) continue;
            int x0 = static_cast<int>(std::floor(src.x));
            int y0 = static_cast<int>(std::floor(src.y));
            int x1 = std::min(x0 + 1, w - 1);
            int y1 = std::min(y0 + 1, h - 1);
            double fx = src.x - x0, fy = src.y - y0;
            for (int ch = 0; ch < c; ++ch) {
                double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch)) +
                           fy * ((1 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch));
                r.image.at(y, x, ch) = static_cast<float>(v);
            }
            r.valid[static_cast<std::size_t>(y) * w + x] = 1;
        }
    return r;
}

Image warp(const Image& img, const SimilarityTransform& t) {
    return warp_with_mask(img, t).image;
}

} // namespace mpose

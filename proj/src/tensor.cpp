#include "mpose/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "mpose/parallel.hpp"

namespace mpose {

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
}

void check_finite(const Tensor& t, const char* op) {
    const float* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(p[i]))
            throw NumericError(std::string(op) + " produced a non-finite value");
}

} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(shape_product(shape_), 0.0f);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride) {
    require(input.rank() == 3, "conv2d input must be [C,H,W]");
    require(kernel.rank() == 4, "conv2d kernel must be [C_out,C_in,kH,kW]");
    require(bias.rank() == 1, "conv2d bias must be [C_out]");
    require(stride >= 1, "conv2d stride must be >= 1");
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    require(kernel.dim(1) == ci, "conv2d kernel channel count does not match input");
    require(bias.dim(0) == co, "conv2d bias length does not match kernel output count");
    require(kh <= h && kw <= w, "conv2d kernel larger than input (valid padding)");

    const int ho = (h - kh) / stride + 1;
    const int wo = (w - kw) / stride + 1;
    Tensor out({co, ho, wo});

    const float* in = input.data();
    const float* kp = kernel.data();
    float* op = out.data();
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;

    parallel_for(static_cast<std::size_t>(co), [&](std::size_t o0, std::size_t o1) {
        std::vector<double> acc(out_plane);
        for (std::size_t o = o0; o < o1; ++o) {
            const double b = bias[o];
            for (std::size_t i = 0; i < out_plane; ++i) acc[i] = b;
            const float* ko = kp + o * ci * kh * kw;
            for (int c = 0; c < ci; ++c) {
                const float* plane = in + static_cast<std::size_t>(c) * in_plane;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wgt = ko[(static_cast<std::size_t>(c) * kh + ky) * kw + kx];
                        for (int y = 0; y < ho; ++y) {
                            const float* row = plane + static_cast<std::size_t>(y * stride + ky) * w + kx;
                            double* arow = acc.data() + static_cast<std::size_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = 0; x < wo; ++x) arow[x] += wgt * row[x];
                            } else {
                                for (int x = 0; x < wo; ++x) arow[x] += wgt * row[x * stride];
                            }
                        }
                    }
                }
            }
            float* orow = op + o * out_plane;
            for (std::size_t i = 0; i < out_plane; ++i) orow[i] = static_cast<float>(acc[i]);
        }
    });

    check_finite(out, "conv2d");
    return out;
}

ConvGrads conv2d_grad(const Tensor& input, const Tensor& kernel, int stride, const Tensor& grad_out) {
    require(input.rank() == 3 && kernel.rank() == 4, "conv2d_grad expects [C,H,W] input and [C_out,C_in,kH,kW] kernel");
    require(stride >= 1, "conv2d_grad stride must be >= 1");
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    require(kernel.dim(1) == ci, "conv2d_grad kernel channel count does not match input");
    const int ho = (h - kh) / stride + 1;
    const int wo = (w - kw) / stride + 1;
    require(grad_out.rank() == 3 && grad_out.dim(0) == co && grad_out.dim(1) == ho && grad_out.dim(2) == wo,
            "conv2d_grad cotangent shape does not match the forward output");

    ConvGrads grads{Tensor({ci, h, w}), Tensor({co, ci, kh, kw}), Tensor({co})};
    const float* in = input.data();
    const float* kp = kernel.data();
    const float* gp = grad_out.data();
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;

    for (int o = 0; o < co; ++o) {
        const float* g = gp + static_cast<std::size_t>(o) * out_plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) acc += g[i];
        grads.bias[static_cast<std::size_t>(o)] = static_cast<float>(acc);
    }

    // grad_kernel[o,c,ky,kx] = Σ_{y,x} g[o,y,x] · in[c, y·s+ky, x·s+kx];
    // accumulated per output column first so the x loop has independent
    // lanes, then reduced — a single running sum would serialize on the
    // add latency
    parallel_for(static_cast<std::size_t>(co), [&](std::size_t o0, std::size_t o1) {
        std::vector<double> lanes(static_cast<std::size_t>(wo));
        for (std::size_t o = o0; o < o1; ++o) {
            const float* g = gp + o * out_plane;
            float* gk = grads.kernel.data() + o * ci * kh * kw;
            for (int c = 0; c < ci; ++c) {
                const float* plane = in + static_cast<std::size_t>(c) * in_plane;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        std::fill(lanes.begin(), lanes.end(), 0.0);
                        for (int y = 0; y < ho; ++y) {
                            const float* row = plane + static_cast<std::size_t>(y * stride + ky) * w + kx;
                            const float* grow = g + static_cast<std::size_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = 0; x < wo; ++x)
                                    lanes[static_cast<std::size_t>(x)] +=
                                        static_cast<double>(grow[x]) * row[x];
                            } else {
                                for (int x = 0; x < wo; ++x)
                                    lanes[static_cast<std::size_t>(x)] +=
                                        static_cast<double>(grow[x]) * row[x * stride];
                            }
                        }
                        double acc = 0.0;
                        for (int x = 0; x < wo; ++x) acc += lanes[static_cast<std::size_t>(x)];
                        gk[(static_cast<std::size_t>(c) * kh + ky) * kw + kx] = static_cast<float>(acc);
                    }
            }
        }
    });

    // grad_input accumulated per input channel; fixed o,ky,kx,y,x order
    parallel_for(static_cast<std::size_t>(ci), [&](std::size_t c0, std::size_t c1) {
        std::vector<double> acc(in_plane);
        for (std::size_t c = c0; c < c1; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int o = 0; o < co; ++o) {
                const float* g = gp + static_cast<std::size_t>(o) * out_plane;
                const float* ko = kp + (static_cast<std::size_t>(o) * ci + c) * kh * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wgt = ko[static_cast<std::size_t>(ky) * kw + kx];
                        for (int y = 0; y < ho; ++y) {
                            double* arow = acc.data() + static_cast<std::size_t>(y * stride + ky) * w + kx;
                            const float* grow = g + static_cast<std::size_t>(y) * wo;
                            if (stride == 1) {
                                for (int x = 0; x < wo; ++x) arow[x] += wgt * grow[x];
                            } else {
                                for (int x = 0; x < wo; ++x) arow[x * stride] += wgt * grow[x];
                            }
                        }
                    }
            }
            float* gi = grads.input.data() + c * in_plane;
            for (std::size_t i = 0; i < in_plane; ++i) gi[i] = static_cast<float>(acc[i]);
        }
    });

    check_finite(grads.input, "conv2d_grad");
    check_finite(grads.kernel, "conv2d_grad");
    return grads;
}

PoolResult maxpool2(const Tensor& input) {
    require(input.rank() == 3, "maxpool2 input must be [C,H,W]");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    require(h % 2 == 0 && w % 2 == 0, "maxpool2 requires even extents; crop before pooling");
    const int ho = h / 2, wo = w / 2;

    PoolResult r{Tensor({c, ho, wo}), PoolIndices{{c, h, w}, {}}};
    r.indices.argmax.resize(static_cast<std::size_t>(c) * ho * wo);
    const float* in = input.data();
    float* out = r.output.data();
    int32_t* arg = r.indices.argmax.data();

    for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                std::size_t i00 = base + static_cast<std::size_t>(2 * y) * w + 2 * x;
                std::size_t best = i00;
                float m = in[i00];
                const std::size_t cand[3] = {i00 + 1, i00 + w, i00 + w + 1};
                for (std::size_t idx : cand)
                    if (in[idx] > m) {
                        m = in[idx];
                        best = idx;
                    }
                std::size_t oi = (static_cast<std::size_t>(ch) * ho + y) * wo + x;
                out[oi] = m;
                arg[oi] = static_cast<int32_t>(best);
            }
    }
    return r;
}

Tensor maxpool2_grad(const PoolIndices& indices, const Tensor& grad_out) {
    require(indices.input_shape.size() == 3, "maxpool2_grad needs indices from a [C,H,W] forward pass");
    const int c = indices.input_shape[0], h = indices.input_shape[1], w = indices.input_shape[2];
    require(grad_out.rank() == 3 && grad_out.dim(0) == c && grad_out.dim(1) == h / 2 && grad_out.dim(2) == w / 2,
            "maxpool2_grad cotangent shape does not match the recorded forward pass");
    require(indices.argmax.size() == grad_out.size(), "maxpool2_grad index count does not match cotangent");

    Tensor grad_in({c, h, w});
    float* gi = grad_in.data();
    const float* g = grad_out.data();
    for (std::size_t i = 0; i < indices.argmax.size(); ++i)
        gi[indices.argmax[i]] += g[i];
    return grad_in;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const float* in = input.data();
    float* o = out.data();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
    return out;
}

Tensor relu_grad(const Tensor& input, const Tensor& grad_out) {
    require(input.shape() == grad_out.shape(), "relu_grad cotangent shape does not match input");
    Tensor out(input.shape());
    const float* in = input.data();
    const float* g = grad_out.data();
    float* o = out.data();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0f ? g[i] : 0.0f;
    return out;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
    require(input.rank() == 3, "upsample_nearest input must be [C,H,W]");
    require(factor >= 1, "upsample_nearest factor must be >= 1");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    Tensor out({c, h * factor, w * factor});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h * factor; ++y) {
            const float* irow = input.data() + (static_cast<std::size_t>(ch) * h + y / factor) * w;
            float* orow = out.data() + (static_cast<std::size_t>(ch) * h * factor + y) * static_cast<std::size_t>(w) * factor;
            for (int x = 0; x < w * factor; ++x) orow[x] = irow[x / factor];
        }
    return out;
}

} // namespace mpose

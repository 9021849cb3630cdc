#pragma once

#include <cstdint>
#include <vector>

#include "mpose/errors.hpp"

namespace mpose {

// Dense row-major float32 array. Rank-3 activations are [C,H,W], conv
// kernels [C_out,C_in,kH,kW]. Reductions over these accumulate in double.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // rank-3 convenience accessors (bounds unchecked)
    float& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    float at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    // rank-4
    float& at(int o, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(o) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    float at(int o, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(o) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

struct ConvGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;
};

// Flat input indices of each pooling maximum, plus the input shape they
// refer to; consumed by maxpool2_grad.
struct PoolIndices {
    std::vector<int> input_shape;
    std::vector<int32_t> argmax;
};

struct PoolResult {
    Tensor output;
    PoolIndices indices;
};

// Valid padding only; out[o,y,x] = bias[o] + Σ in[c, y·s+i, x·s+j]·k[o,c,i,j]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1);

ConvGrads conv2d_grad(const Tensor& input, const Tensor& kernel, int stride, const Tensor& grad_out);

// Disjoint 2×2 max; ties broken by first index in row-major scan order.
PoolResult maxpool2(const Tensor& input);

Tensor maxpool2_grad(const PoolIndices& indices, const Tensor& grad_out);

Tensor relu(const Tensor& input);

// Subgradient 0 at x == 0.
Tensor relu_grad(const Tensor& input, const Tensor& grad_out);

// Each value replicated into a factor×factor block.
Tensor upsample_nearest(const Tensor& input, int factor);

} // namespace mpose

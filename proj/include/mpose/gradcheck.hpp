#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpose/convnet.hpp"
#include "mpose/tensor.hpp"

namespace mpose {

struct GradcheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    bool all_pass() const;
};

// Double-precision mirror of forward_oneshot with identical geometry.
// Finite-difference audits evaluate through this instead of the float32
// path so FD noise stays well below the gradient tolerance.
std::vector<double> reference_forward(const ModelParams& params, const std::vector<Tensor>& pyramid,
                                      std::vector<int>* shape = nullptr);

// Σ probe ⊙ reference_forward(params, pyramid); the scalar functional the
// end-to-end audit differentiates.
double reference_loss(const ModelParams& params, const std::vector<Tensor>& pyramid,
                      const Tensor& probe);

// Central finite-difference audit of each gradient primitive plus a tiny
// two-bank model end to end, and a float-vs-reference forward parity check.
// inject_fault corrupts one analytic gradient so the failure path is
// witnessable on demand.
GradcheckReport run_gradcheck(uint64_t seed, bool inject_fault = false);

} // namespace mpose

#pragma once

#include <optional>
#include <vector>

#include "mpose/geometry.hpp"
#include "mpose/image.hpp"

namespace mpose {

struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> u; // px per frame pair, +x right
    std::vector<float> v; // +y down
};

// rgb is the plain-appearance baseline (no second frame consumed); the
// other four are the motion formulations.
enum class FeatureKind { rgb, frame_pair, frame_diff, flow_2d, flow_mag };

struct MotionFeatureConfig {
    FeatureKind kind = FeatureKind::flow_mag;
    int delta = 3; // frame offset of f_j relative to f_i; must be nonzero
    bool compensate_camera = false;
};

int feature_channel_count(FeatureKind kind);
// channels at or past this index are motion-like and get the wide LMN kernel
int feature_motion_start(FeatureKind kind);

// f_j − f_i per channel
Image frame_difference(const Image& f_i, const Image& f_j);

// Horn–Schunck on grayscale [0,255] intensities. Each iteration solves the
// exact per-pixel 2×2 system of the quadratic objective with neighbors
// frozen (block Jacobi), which never increases the objective.
FlowField estimate_flow(const Image& f_i, const Image& f_j, double alpha = 15.0, int iters = 200);

// The discrete objective estimate_flow minimizes; exposed so callers can
// verify monotonicity.
double flow_objective(const Image& f_i, const Image& f_j, double alpha, const FlowField& flow);

Image flow_magnitude(const FlowField& flow);

// Harris corners, patch-correlation matching, RANSAC (2-point proposals,
// 2 px inlier threshold, 1000 rounds), then least-squares refit on the
// inliers. The result maps f_i coordinates to f_j coordinates.
SimilarityTransform estimate_similarity(const Image& f_i, const Image& f_j);

// warp(f_j, S⁻¹): brings f_j into f_i's camera. f_i itself is untouched.
Image compensate_camera(const Image& f_i, const Image& f_j);

// Registers each candidate onto the target and returns the first whose
// mean abs intensity distance (×255, over validly warped pixels) is below
// threshold·k. Estimation failures count as non-matches.
std::optional<std::size_t> match_frame(const Image& target, const std::vector<Image>& candidates,
                                       double threshold, double k = 1.0);

// Assembles the channel stack: RGB of f_i, then the motion channels of the
// configured kind (compensating f_j first when configured).
Image make_feature(const MotionFeatureConfig& cfg, const Image& f_i, const Image& f_j);

} // namespace mpose

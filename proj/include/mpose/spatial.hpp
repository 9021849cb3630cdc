#pragma once

#include <string>
#include <vector>

#include "mpose/annotation.hpp"
#include "mpose/convnet.hpp"

namespace mpose {

// Torso-anchored location prior. For every joint, the training set's
// joint-minus-torso-center offsets are histogrammed on a shared bin grid,
// binarized, blurred, and max-normalized, giving a weight in [0,1] for
// each offset cell. All joints share one grid so application and
// serialization stay uniform.
struct SpatialModel {
    int bin = 4;          // px per offset cell
    int origin_bin_y = 0; // offset bin covered by weight cell (.,0,0)
    int origin_bin_x = 0;
    std::vector<std::string> joints;
    Tensor weights; // [joints, H, W], each plane peaks at exactly 1
};

// blur_sigma_px = 0 keeps the binarized histogram (weights in {0,1}).
// Throws DataError when a joint is never observed.
SpatialModel build_masks(const std::vector<Annotation>& annotations,
                         const std::vector<std::string>& joints, int bin = 4,
                         double blur_sigma_px = 12.0);

// Weight for a continuous offset (joint minus torso center); 0 outside
// the grid.
double mask_weight(const SpatialModel& model, int joint, Vec2 offset);

// Multiplies plane i by mask i re-centered at the supplied torso. Cells
// whose offset falls outside the mask grid become 0. Pure reweighting:
// for nonnegative energies the output never exceeds the input.
ResponseMaps apply_masks(const ResponseMaps& maps, const SpatialModel& model, Vec2 torso);

struct JointPrediction {
    Vec2 position;
    float score = 0.0f;
    bool low_confidence = false;
};

// Per-plane argmax in image coordinates; ties go to the first cell in
// row-major order. Degenerate planes are flagged: all-zero predicts the
// central cell, all-equal the first cell.
std::vector<JointPrediction> predict_joints(const ResponseMaps& maps);

// <base>.f32p holds the weight planes, <base>.txt the grid metadata and
// joint names.
void save_spatial_model(const std::string& base_path, const SpatialModel& model);
SpatialModel load_spatial_model(const std::string& base_path);

} // namespace mpose

#pragma once

#include <string>
#include <vector>

#include "mpose/errors.hpp"
#include "mpose/geometry.hpp"

namespace mpose {

// One joint instance: the predicted and true positions plus the torso
// length of the ground-truth figure, which anchors the normalization.
struct EvalSample {
    Vec2 pred;
    Vec2 gt;
    double torso_length = 0.0;
};

// Fraction of samples whose error, after scaling the figure so its torso
// measures torso_norm pixels, is at most radius (boundary inclusive).
// Samples with a nonpositive torso are excluded with a warning on stderr;
// an empty or fully excluded set throws DataError.
double detection_rate(const std::vector<EvalSample>& samples, double radius,
                      double torso_norm = 100.0);

struct PckCurve {
    std::string label;
    std::vector<double> radii;
    std::vector<double> rates;
};

// Detection rate per radius; empty radii means 0..30 in 1 px steps. The
// result is nondecreasing in the radius by construction.
PckCurve pck_curve(const std::vector<EvalSample>& samples, const std::string& label,
                   std::vector<double> radii = {}, double torso_norm = 100.0);

// Average detection rate over [r_lo, r_hi]: trapezoidal integral of the
// piecewise-linear curve divided by the window width. The curve's radii
// must be strictly increasing and cover the window.
double mean_precision(const PckCurve& curve, double r_lo = 0.0, double r_hi = 20.0);

// CSV (radius column plus one rate column per curve) and a standalone SVG
// with one polyline per curve. All curves must share the same radii.
// An empty curve list throws DataError before anything is written.
void emit_results(const std::vector<PckCurve>& curves, const std::string& csv_path,
                  const std::string& svg_path);

} // namespace mpose

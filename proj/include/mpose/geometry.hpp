#pragma once

#include <cmath>

#include "mpose/errors.hpp"

namespace mpose {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

// 4-DOF similarity: p' = s·R(θ)·p + t. Applied to image coordinates
// (x right, y down); positive rotation turns x toward y.
struct SimilarityTransform {
    double scale = 1.0;
    double rotation = 0.0; // radians
    double tx = 0.0;
    double ty = 0.0;

    Vec2 apply(Vec2 p) const {
        double c = std::cos(rotation), s = std::sin(rotation);
        return {scale * (c * p.x - s * p.y) + tx,
                scale * (s * p.x + c * p.y) + ty};
    }

    SimilarityTransform inverse() const {
        if (scale == 0.0) throw ShapeError("similarity transform with zero scale is not invertible");
        double c = std::cos(rotation), s = std::sin(rotation);
        double inv = 1.0 / scale;
        // t' = -s⁻¹·R(-θ)·t
        return {inv, -rotation, inv * (-c * tx - s * ty), inv * (s * tx - c * ty)};
    }
};

} // namespace mpose

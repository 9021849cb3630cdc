#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpose/errors.hpp"
#include "mpose/geometry.hpp"

namespace mpose {

// Joint pixel coordinates, origin top-left. Holds the six predicted limb
// joints plus the two torso anchors ("neck", "hip") the metric and the
// spatial model need. A joint absent from the map is occluded.
struct Annotation {
    std::map<std::string, Vec2> joints;
};

// The predicted joints, in fixed output order: left then right, shoulder
// to wrist.
const std::vector<std::string>& limb_joints();

// left_* <-> right_*; anchors map to themselves.
std::string mirror_joint(const std::string& name);

Vec2 annotation_point(const Annotation& ann, const std::string& name);
Vec2 torso_center(const Annotation& ann);  // midpoint of neck and hip
double torso_length(const Annotation& ann); // |neck − hip|

} // namespace mpose

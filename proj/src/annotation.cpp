#include "mpose/annotation.hpp"

namespace mpose {

const std::vector<std::string>& limb_joints() {
    static const std::vector<std::string> names = {
        "left_shoulder", "left_elbow", "left_wrist",
        "right_shoulder", "right_elbow", "right_wrist",
    };
    return names;
}

std::string mirror_joint(const std::string& name) {
    if (name.rfind("left_", 0) == 0) return "right_" + name.substr(5);
    if (name.rfind("right_", 0) == 0) return "left_" + name.substr(6);
    return name;
}

Vec2 annotation_point(const Annotation& ann, const std::string& name) {
    auto it = ann.joints.find(name);
    if (it == ann.joints.end()) throw DataError("annotation is missing joint '" + name + "'");
    return it->second;
}

Vec2 torso_center(const Annotation& ann) {
    Vec2 neck = annotation_point(ann, "neck"), hip = annotation_point(ann, "hip");
    return {(neck.x + hip.x) / 2.0, (neck.y + hip.y) / 2.0};
}

double torso_length(const Annotation& ann) {
    Vec2 neck = annotation_point(ann, "neck"), hip = annotation_point(ann, "hip");
    return norm(neck - hip);
}

} // namespace mpose

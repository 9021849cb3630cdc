#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mpose/annotation.hpp"
#include "mpose/image.hpp"
#include "mpose/rng.hpp"

namespace mpose {

enum class CameraMode { none, pan, full };
const char* camera_mode_name(CameraMode mode);
CameraMode camera_mode_from_name(const std::string& name);

// plain: flat background, solid figure. cluttered: value-noise background,
// solid figure. camouflage: value-noise background and the arms textured
// from the same distribution, so single frames hide them.
enum class TextureMode { plain, cluttered, camouflage };
const char* texture_mode_name(TextureMode mode);
TextureMode texture_mode_from_name(const std::string& name);

struct DatasetConfig {
    int clips = 10;
    int width = 240;
    int height = 180;
    int delta = 3; // frames between f0 and f1
    uint64_t seed = 1;
    CameraMode camera = CameraMode::none;
    TextureMode texture = TextureMode::cluttered;
    bool two_person = false; // adds an unannotated figure 100 px to the right
    double train_fraction = 0.8;
};

// One articulated arm: two segments with constant angular rates, angles
// measured from straight down, positive swinging outward.
struct ArmPose {
    double upper0 = 0.0, fore0 = 0.0;           // rad at t = 0
    double upper_rate = 0.0, fore_rate = 0.0;   // rad per frame
};

struct FigureParams {
    Vec2 center;
    ArmPose left, right;
    std::array<float, 3> torso_color{};
    std::array<float, 3> head_color{};
    std::array<float, 3> arm_color{};
    uint64_t camo_seed = 0; // limb-anchored texture page
};

// Everything randomized for one clip. The figure lives in world
// coordinates; the camera maps world to frame coordinates and is the
// identity at t = 0.
struct Scene {
    int width = 240, height = 180;
    CameraMode camera = CameraMode::none;
    TextureMode texture = TextureMode::cluttered;
    double pan_vx = 0.0, pan_vy = 0.0; // px per frame
    double rot_rate = 0.0;             // rad per frame, about the image center
    double zoom_rate = 0.0;            // scale per frame, about the image center
    uint64_t bg_seed = 0;
    FigureParams person;
    std::optional<FigureParams> distractor;
};

// Fixed draw order, so one seed always produces one scene. Figure
// placement keeps every joint of every frame at least 32 px from every
// border.
Scene sample_scene(const DatasetConfig& cfg, Rng& rng);

SimilarityTransform camera_at(const Scene& scene, double t);

// RGB frame at time t: world-anchored value-noise background, the figure
// composited with 1 px anti-aliased capsule edges, all seen through the
// camera.
Image render_frame(const Scene& scene, double t);

// Single-channel coverage of all arm segments (every figure) in frame
// coordinates; 1 inside, 0 outside, soft 1 px edge.
Image arm_coverage(const Scene& scene, double t);

// Frame-coordinate joint positions at time t.
Annotation scene_annotation(const Scene& scene, double t, bool distractor = false);

// Writes root/clips/<id>/{f0.png,f1.png,ann.json} and root/index.json
// with the config echo and the train/test split.
void write_dataset(const std::string& root, const DatasetConfig& cfg);

struct ClipRecord {
    std::string id;
    std::string dir; // holds f0.png, f1.png, ann.json
    Annotation ann;
    std::optional<Annotation> distractor;
};

struct Dataset {
    DatasetConfig config;
    std::vector<ClipRecord> clips;
    std::vector<std::string> train_ids, test_ids;
};

// Throws DataError on a missing or inconsistent layout.
Dataset read_dataset(const std::string& root);

} // namespace mpose

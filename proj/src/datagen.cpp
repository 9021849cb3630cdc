#include "mpose/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace mpose {

namespace {

constexpr double kTorsoHalf = 42.0;   // neck/hip distance from the center
constexpr double kTorsoRadius = 7.0;
constexpr double kHeadRadius = 7.0;
constexpr double kHeadLift = 9.0;     // head center above the neck
constexpr double kShoulderHalf = 9.0; // shoulder distance from the neck
constexpr double kUpperLen = 11.0;
constexpr double kForeLen = 10.0;
constexpr double kUpperRadius = 3.5;
constexpr double kForeRadius = 3.0;

// figure-local joint layout at time t, in world coordinates
struct FigureJoints {
    Vec2 neck, hip, l_shoulder, r_shoulder, l_elbow, r_elbow, l_wrist, r_wrist;
};

Vec2 arm_dir(int side, double angle) { // angle from straight down, outward positive
    return {side * std::sin(angle), std::cos(angle)};
}

FigureJoints figure_joints(const FigureParams& fig, double t) {
    FigureJoints j;
    j.neck = {fig.center.x, fig.center.y - kTorsoHalf};
    j.hip = {fig.center.x, fig.center.y + kTorsoHalf};
    j.l_shoulder = {j.neck.x - kShoulderHalf, j.neck.y};
    j.r_shoulder = {j.neck.x + kShoulderHalf, j.neck.y};

    const double lu = fig.left.upper0 + fig.left.upper_rate * t;
    const double lf = lu + fig.left.fore0 + fig.left.fore_rate * t;
    const double ru = fig.right.upper0 + fig.right.upper_rate * t;
    const double rf = ru + fig.right.fore0 + fig.right.fore_rate * t;

    j.l_elbow = j.l_shoulder + kUpperLen * arm_dir(-1, lu);
    j.l_wrist = j.l_elbow + kForeLen * arm_dir(-1, lf);
    j.r_elbow = j.r_shoulder + kUpperLen * arm_dir(+1, ru);
    j.r_wrist = j.r_elbow + kForeLen * arm_dir(+1, rf);
    return j;
}

double dist_to_segment(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = 0.0;
    if (len2 > 0.0) {
        t = ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2;
        t = std::clamp(t, 0.0, 1.0);
    }
    const Vec2 q = a + t * ab;
    return norm(p - q);
}

// 1 px anti-aliased capsule coverage
double capsule_cover(Vec2 p, Vec2 a, Vec2 b, double radius) {
    return std::clamp(0.5 + (radius - dist_to_segment(p, a, b)), 0.0, 1.0);
}

double lattice(uint64_t seed, int ix, int iy, int page) {
    const uint64_t h = derive_seed(seed, static_cast<uint64_t>(static_cast<int64_t>(ix)),
                                   static_cast<uint64_t>(static_cast<int64_t>(iy)),
                                   static_cast<uint64_t>(page));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double octave(uint64_t seed, double x, double y, int page, double spacing) {
    const double gx = std::floor(x / spacing), gy = std::floor(y / spacing);
    const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
    const double fx = x / spacing - gx, fy = y / spacing - gy;
    const double v00 = lattice(seed, ix, iy, page), v10 = lattice(seed, ix + 1, iy, page);
    const double v01 = lattice(seed, ix, iy + 1, page), v11 = lattice(seed, ix + 1, iy + 1, page);
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
}

// two-octave value noise in [0,1]; page separates channels and texture
// realizations drawn from the same distribution
double value_noise(uint64_t seed, double x, double y, int page) {
    return 0.65 * octave(seed, x, y, page, 8.0) + 0.35 * octave(seed, x, y, page + 100, 3.0);
}

float noise_color(uint64_t seed, double x, double y, int channel) {
    return static_cast<float>(0.2 + 0.6 * value_noise(seed, x, y, channel));
}

struct Capsule {
    Vec2 a, b;
    double radius;
    const std::array<float, 3>* solid; // nullptr = limb-anchored texture
    uint64_t tex_seed;
    Vec2 tex_origin;   // proximal joint
    double tex_angle;  // bone angle for the local frame
};

void figure_capsules(const FigureParams& fig, double t, bool camouflage,
                     std::vector<Capsule>& out) {
    const FigureJoints j = figure_joints(fig, t);
    out.push_back({j.neck, j.hip, kTorsoRadius, &fig.torso_color, 0, {}, 0.0});
    const Vec2 head{j.neck.x, j.neck.y - kHeadLift};
    out.push_back({head, head, kHeadRadius, &fig.head_color, 0, {}, 0.0});

    const double lu = fig.left.upper0 + fig.left.upper_rate * t;
    const double lf = lu + fig.left.fore0 + fig.left.fore_rate * t;
    const double ru = fig.right.upper0 + fig.right.upper_rate * t;
    const double rf = ru + fig.right.fore0 + fig.right.fore_rate * t;
    const std::array<float, 3>* arm = camouflage ? nullptr : &fig.arm_color;
    out.push_back({j.l_shoulder, j.l_elbow, kUpperRadius, arm, fig.camo_seed + 1, j.l_shoulder,
                   std::atan2(std::cos(lu), -std::sin(lu))});
    out.push_back({j.l_elbow, j.l_wrist, kForeRadius, arm, fig.camo_seed + 2, j.l_elbow,
                   std::atan2(std::cos(lf), -std::sin(lf))});
    out.push_back({j.r_shoulder, j.r_elbow, kUpperRadius, arm, fig.camo_seed + 3, j.r_shoulder,
                   std::atan2(std::cos(ru), std::sin(ru))});
    out.push_back({j.r_elbow, j.r_wrist, kForeRadius, arm, fig.camo_seed + 4, j.r_elbow,
                   std::atan2(std::cos(rf), std::sin(rf))});
}

Annotation joints_to_annotation(const FigureJoints& j, const SimilarityTransform& cam) {
    Annotation ann;
    ann.joints["neck"] = cam.apply(j.neck);
    ann.joints["hip"] = cam.apply(j.hip);
    ann.joints["left_shoulder"] = cam.apply(j.l_shoulder);
    ann.joints["right_shoulder"] = cam.apply(j.r_shoulder);
    ann.joints["left_elbow"] = cam.apply(j.l_elbow);
    ann.joints["right_elbow"] = cam.apply(j.r_elbow);
    ann.joints["left_wrist"] = cam.apply(j.l_wrist);
    ann.joints["right_wrist"] = cam.apply(j.r_wrist);
    return ann;
}

FigureParams sample_figure(const DatasetConfig& cfg, Rng& rng, bool distractor) {
    FigureParams fig;
    const double x_lo = 64.0, x_hi = cfg.two_person ? 78.0 : 176.0;
    fig.center.x = rng.uniform(x_lo, x_hi) + (distractor ? 100.0 : 0.0);
    fig.center.y = rng.uniform(90.0, 99.0);
    for (ArmPose* arm : {&fig.left, &fig.right}) {
        arm->upper0 = rng.uniform(0.25, 1.1);
        arm->fore0 = rng.uniform(-0.2, 0.9);
        arm->upper_rate = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.02, 0.05);
        arm->fore_rate = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.02, 0.05);
    }
    for (int c = 0; c < 3; ++c) fig.torso_color[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(0.2, 0.8));
    for (int c = 0; c < 3; ++c) fig.head_color[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(0.3, 0.9));
    for (int c = 0; c < 3; ++c) fig.arm_color[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(0.2, 0.9));
    fig.camo_seed = rng.next_u64();
    return fig;
}

nlohmann::json annotation_to_json(const Annotation& ann) {
    nlohmann::json joints;
    for (const auto& [name, p] : ann.joints) joints[name] = {p.x, p.y};
    return joints;
}

Annotation annotation_from_json(const nlohmann::json& joints) {
    Annotation ann;
    for (auto it = joints.begin(); it != joints.end(); ++it) {
        if (!it.value().is_array() || it.value().size() != 2)
            throw DataError("joint '" + it.key() + "' is not an [x, y] pair");
        ann.joints[it.key()] = {it.value()[0].get<double>(), it.value()[1].get<double>()};
    }
    return ann;
}

} // namespace

const char* camera_mode_name(CameraMode mode) {
    switch (mode) {
        case CameraMode::none: return "none";
        case CameraMode::pan: return "pan";
        case CameraMode::full: return "full";
    }
    throw DataError("unknown camera mode");
}

CameraMode camera_mode_from_name(const std::string& name) {
    for (CameraMode mode : {CameraMode::none, CameraMode::pan, CameraMode::full})
        if (name == camera_mode_name(mode)) return mode;
    throw DataError("unknown camera mode '" + name + "'");
}

const char* texture_mode_name(TextureMode mode) {
    switch (mode) {
        case TextureMode::plain: return "plain";
        case TextureMode::cluttered: return "cluttered";
        case TextureMode::camouflage: return "camouflage";
    }
    throw DataError("unknown texture mode");
}

TextureMode texture_mode_from_name(const std::string& name) {
    for (TextureMode mode : {TextureMode::plain, TextureMode::cluttered, TextureMode::camouflage})
        if (name == texture_mode_name(mode)) return mode;
    throw DataError("unknown texture mode '" + name + "'");
}

Scene sample_scene(const DatasetConfig& cfg, Rng& rng) {
    Scene scene;
    scene.width = cfg.width;
    scene.height = cfg.height;
    scene.camera = cfg.camera;
    scene.texture = cfg.texture;
    scene.bg_seed = rng.next_u64();
    if (cfg.camera != CameraMode::none) {
        scene.pan_vx = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.3, 1.0);
        scene.pan_vy = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.3, 1.0);
    }
    if (cfg.camera == CameraMode::full) {
        scene.rot_rate = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.001, 0.004);
        scene.zoom_rate = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.0005, 0.002);
    }
    scene.person = sample_figure(cfg, rng, false);
    if (cfg.two_person) scene.distractor = sample_figure(cfg, rng, true);
    return scene;
}

SimilarityTransform camera_at(const Scene& scene, double t) {
    if (scene.camera == CameraMode::none || t == 0.0) return {};
    const double scale = 1.0 + scene.zoom_rate * t;
    const double theta = scene.rot_rate * t;
    // rotate and zoom about the image center, then drift
    const Vec2 m{(scene.width - 1) / 2.0, (scene.height - 1) / 2.0};
    SimilarityTransform cam{scale, theta, 0.0, 0.0};
    const Vec2 rm = cam.apply(m);
    cam.tx = m.x - rm.x + scene.pan_vx * t;
    cam.ty = m.y - rm.y + scene.pan_vy * t;
    return cam;
}

Image render_frame(const Scene& scene, double t) {
    const bool camo = scene.texture == TextureMode::camouflage;
    const bool flat_bg = scene.texture == TextureMode::plain;
    std::vector<Capsule> capsules;
    figure_capsules(scene.person, t, camo, capsules);
    if (scene.distractor) figure_capsules(*scene.distractor, t, camo, capsules);

    const SimilarityTransform inv = camera_at(scene, t).inverse();
    Image img(scene.height, scene.width, 3);
    for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x) {
            const Vec2 w = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            float color[3];
            for (int c = 0; c < 3; ++c)
                color[c] = flat_bg ? 0.5f : noise_color(scene.bg_seed, w.x, w.y, c);
            for (const Capsule& cap : capsules) {
                const double cover = capsule_cover(w, cap.a, cap.b, cap.radius);
                if (cover <= 0.0) continue;
                for (int c = 0; c < 3; ++c) {
                    float paint;
                    if (cap.solid) {
                        paint = (*cap.solid)[static_cast<std::size_t>(c)];
                    } else {
                        // texture pinned to the bone's local frame: it
                        // translates and rotates with the limb
                        const Vec2 d = w - cap.tex_origin;
                        const double ca = std::cos(cap.tex_angle), sa = std::sin(cap.tex_angle);
                        paint = noise_color(cap.tex_seed, ca * d.x + sa * d.y,
                                            -sa * d.x + ca * d.y, c);
                    }
                    color[c] = static_cast<float>(color[c] * (1.0 - cover) + paint * cover);
                }
            }
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
        }
    return img;
}

Image arm_coverage(const Scene& scene, double t) {
    const bool camo = scene.texture == TextureMode::camouflage;
    std::vector<Capsule> capsules;
    figure_capsules(scene.person, t, camo, capsules);
    if (scene.distractor) figure_capsules(*scene.distractor, t, camo, capsules);
    // arms are the last four capsules of each figure
    std::vector<const Capsule*> arms;
    for (std::size_t i = 0; i < capsules.size(); ++i)
        if (i % 6 >= 2) arms.push_back(&capsules[i]);

    const SimilarityTransform inv = camera_at(scene, t).inverse();
    Image mask(scene.height, scene.width, 1);
    for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x) {
            const Vec2 w = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            double cover = 0.0;
            for (const Capsule* cap : arms)
                cover = std::max(cover, capsule_cover(w, cap->a, cap->b, cap->radius));
            mask.at(y, x, 0) = static_cast<float>(cover);
        }
    return mask;
}

Annotation scene_annotation(const Scene& scene, double t, bool distractor) {
    const SimilarityTransform cam = camera_at(scene, t);
    if (!distractor) return joints_to_annotation(figure_joints(scene.person, t), cam);
    if (!scene.distractor) throw DataError("scene has no distractor figure");
    return joints_to_annotation(figure_joints(*scene.distractor, t), cam);
}

void write_dataset(const std::string& root, const DatasetConfig& cfg) {
    if (cfg.clips < 1) throw ShapeError("a dataset needs at least one clip");
    if (cfg.delta == 0) throw ShapeError("the frame offset must be nonzero");
    if (cfg.width < 160 || cfg.height < 160)
        throw ShapeError("the frame must be at least 160 px in each direction "
                         "to fit the figure with its margins");
    if (cfg.train_fraction < 0.0 || cfg.train_fraction > 1.0)
        throw ShapeError("train fraction must be in [0, 1]");

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "clips");

    std::vector<std::string> ids;
    for (int i = 0; i < cfg.clips; ++i) {
        std::ostringstream id;
        id << "clip_" << std::setw(4) << std::setfill('0') << i;
        ids.push_back(id.str());

        Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i)));
        const Scene scene = sample_scene(cfg, rng);

        const fs::path dir = fs::path(root) / "clips" / ids.back();
        fs::create_directories(dir);
        save_png(render_frame(scene, 0.0), (dir / "f0.png").string());
        save_png(render_frame(scene, static_cast<double>(cfg.delta)), (dir / "f1.png").string());

        nlohmann::json ann;
        ann["joints"] = annotation_to_json(scene_annotation(scene, 0.0));
        if (scene.distractor)
            ann["distractor"] = annotation_to_json(scene_annotation(scene, 0.0, true));
        std::ofstream out(dir / "ann.json", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (dir / "ann.json").string());
        out << ann.dump(2) << "\n";
    }

    const std::size_t train_count =
        static_cast<std::size_t>(std::floor(cfg.train_fraction * cfg.clips + 1e-9));
    nlohmann::json index;
    index["delta"] = cfg.delta;
    index["width"] = cfg.width;
    index["height"] = cfg.height;
    index["seed"] = cfg.seed;
    index["camera"] = camera_mode_name(cfg.camera);
    index["texture"] = texture_mode_name(cfg.texture);
    index["two_person"] = cfg.two_person;
    index["train_fraction"] = cfg.train_fraction;
    index["clips"] = ids;
    index["splits"] = {
        {"train", std::vector<std::string>(ids.begin(), ids.begin() + static_cast<long>(train_count))},
        {"test", std::vector<std::string>(ids.begin() + static_cast<long>(train_count), ids.end())}};
    std::ofstream out(fs::path(root) / "index.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + root + "/index.json");
    out << index.dump(2) << "\n";
}

Dataset read_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(root) / "index.json");
    if (!in) throw DataError("'" + root + "' has no index.json");
    nlohmann::json index;
    try {
        in >> index;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("index.json is not valid JSON: ") + e.what());
    }

    Dataset ds;
    try {
        ds.config.delta = index.at("delta").get<int>();
        ds.config.width = index.at("width").get<int>();
        ds.config.height = index.at("height").get<int>();
        ds.config.seed = index.at("seed").get<uint64_t>();
        ds.config.camera = camera_mode_from_name(index.at("camera").get<std::string>());
        ds.config.texture = texture_mode_from_name(index.at("texture").get<std::string>());
        ds.config.two_person = index.at("two_person").get<bool>();
        ds.config.train_fraction = index.at("train_fraction").get<double>();
        ds.train_ids = index.at("splits").at("train").get<std::vector<std::string>>();
        ds.test_ids = index.at("splits").at("test").get<std::vector<std::string>>();

        for (const auto& id : index.at("clips").get<std::vector<std::string>>()) {
            ClipRecord clip;
            clip.id = id;
            clip.dir = (fs::path(root) / "clips" / id).string();
            if (!fs::exists(fs::path(clip.dir) / "f0.png") ||
                !fs::exists(fs::path(clip.dir) / "f1.png"))
                throw DataError("clip '" + id + "' is missing a frame");

            std::ifstream ann_in(fs::path(clip.dir) / "ann.json");
            if (!ann_in) throw DataError("clip '" + id + "' is missing ann.json");
            nlohmann::json ann;
            try {
                ann_in >> ann;
            } catch (const nlohmann::json::exception& e) {
                throw DataError("clip '" + id + "' has malformed ann.json: " + e.what());
            }
            clip.ann = annotation_from_json(ann.at("joints"));
            if (ann.contains("distractor"))
                clip.distractor = annotation_from_json(ann.at("distractor"));
            ds.clips.push_back(std::move(clip));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset metadata is missing fields: ") + e.what());
    }
    ds.config.clips = static_cast<int>(ds.clips.size());
    return ds;
}

} // namespace mpose

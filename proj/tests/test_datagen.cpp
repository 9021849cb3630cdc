#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "mpose/datagen.hpp"

using namespace mpose;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("mpose_datagen_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double min_border_distance(const Annotation& ann, int width, int height) {
    double best = 1e9;
    for (const auto& [name, p] : ann.joints) {
        best = std::min(best, p.x);
        best = std::min(best, p.y);
        best = std::min(best, width - 1.0 - p.x);
        best = std::min(best, height - 1.0 - p.y);
    }
    return best;
}

// true when the 3x3 neighborhood sits entirely inside the mask
bool interior3(const Image& mask, int y, int x) {
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
            if (mask.at(y + dy, x + dx, 0) < 0.999f) return false;
    return true;
}

double patch_std3(const Image& img, int cy, int cx) {
    double sum = 0.0, sum2 = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const double v = img.at(cy + dy, cx + dx, 0);
            sum += v;
            sum2 += v * v;
        }
    const double mean = sum / 9.0;
    return std::sqrt(std::max(0.0, sum2 / 9.0 - mean * mean));
}

struct AppearanceStats {
    double hist_overlap = 0.0;   // arm pixels vs background pixels
    double classifier_acc = 0.0; // interior-texture threshold classifier
};

AppearanceStats appearance_stats(TextureMode texture, int scenes) {
    DatasetConfig cfg;
    cfg.texture = texture;

    std::vector<double> arm_px, bg_px, arm_std, bg_std;
    for (int s = 0; s < scenes; ++s) {
        Rng rng(derive_seed(700, static_cast<uint64_t>(s)));
        Scene scene = sample_scene(cfg, rng);
        Image f0 = render_frame(scene, 0.0);
        Image mask = arm_coverage(scene, 0.0);
        for (int y = 4; y < f0.height() - 4; ++y)
            for (int x = 4; x < f0.width() - 4; ++x) {
                if (mask.at(y, x, 0) >= 0.999f) {
                    arm_px.push_back(f0.at(y, x, 0));
                    if (interior3(mask, y, x)) arm_std.push_back(patch_std3(f0, y, x));
                } else if (mask.at(y, x, 0) == 0.0f && (y % 7) == 0 && (x % 7) == 0) {
                    bg_px.push_back(f0.at(y, x, 0));
                    bg_std.push_back(patch_std3(f0, y, x));
                }
            }
    }
    REQUIRE(arm_px.size() > 500);
    REQUIRE(arm_std.size() > 100);

    AppearanceStats stats;
    const int bins = 8;
    std::vector<double> ha(bins, 0.0), hb(bins, 0.0);
    for (double v : arm_px)
        ha[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(v * bins)))] +=
            1.0 / static_cast<double>(arm_px.size());
    for (double v : bg_px)
        hb[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(v * bins)))] +=
            1.0 / static_cast<double>(bg_px.size());
    for (int b = 0; b < bins; ++b)
        stats.hist_overlap += std::min(ha[static_cast<std::size_t>(b)], hb[static_cast<std::size_t>(b)]);

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double ma = median(arm_std), mb = median(bg_std);
    const double thr = 0.5 * (ma + mb);
    const bool arm_low = ma < mb;
    std::size_t correct = 0;
    for (double v : arm_std) correct += (arm_low ? v < thr : v >= thr);
    for (double v : bg_std) correct += (arm_low ? v >= thr : v < thr);
    stats.classifier_acc =
        static_cast<double>(correct) / static_cast<double>(arm_std.size() + bg_std.size());
    return stats;
}

} // namespace

TEST_SUITE_BEGIN("datagen");

TEST_CASE("one seed yields one dataset, byte for byte") {
    auto dir_a = temp_dir("det_a");
    auto dir_b = temp_dir("det_b");
    DatasetConfig cfg;
    cfg.clips = 3;
    cfg.seed = 21;
    cfg.camera = CameraMode::pan;
    write_dataset(dir_a.string(), cfg);
    write_dataset(dir_b.string(), cfg);

    CHECK(slurp(dir_a / "index.json") == slurp(dir_b / "index.json"));
    for (int i = 0; i < 3; ++i) {
        const std::string id = "clip_000" + std::to_string(i);
        for (const char* file : {"f0.png", "f1.png", "ann.json"})
            CHECK(slurp(dir_a / "clips" / id / file) == slurp(dir_b / "clips" / id / file));
    }
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("different seeds yield different clips") {
    DatasetConfig cfg;
    Rng r1(derive_seed(1, 0)), r2(derive_seed(2, 0));
    Scene a = sample_scene(cfg, r1);
    Scene b = sample_scene(cfg, r2);
    CHECK(a.person.center.x != b.person.center.x);
    Image fa = render_frame(a, 0.0), fb = render_frame(b, 0.0);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < fa.size(); ++i) differing += fa.data()[i] != fb.data()[i];
    CHECK(differing > fa.size() / 2);
}

TEST_CASE("joints keep a window-sized margin from every border") {
    for (CameraMode camera : {CameraMode::none, CameraMode::pan, CameraMode::full})
        for (bool two : {false, true}) {
            DatasetConfig cfg;
            cfg.camera = camera;
            cfg.two_person = two;
            for (int s = 0; s < 12; ++s) {
                Rng rng(derive_seed(31, static_cast<uint64_t>(s), two, static_cast<uint64_t>(camera)));
                Scene scene = sample_scene(cfg, rng);
                // the annotated frame (t = 0) guarantees the full margin
                CHECK(min_border_distance(scene_annotation(scene, 0.0), cfg.width, cfg.height) >=
                      32.0);
                if (two)
                    CHECK(min_border_distance(scene_annotation(scene, 0.0, true), cfg.width,
                                              cfg.height) >= 32.0);
                // the paired frame drifts with the camera but stays usable
                CHECK(min_border_distance(scene_annotation(scene, 3.0), cfg.width, cfg.height) >=
                      24.0);
            }
        }
}

TEST_CASE("annotation geometry matches the articulated figure") {
    DatasetConfig cfg;
    Rng rng(derive_seed(55, 3));
    Scene scene = sample_scene(cfg, rng);

    for (double t : {0.0, 3.0, 7.0}) {
        Annotation ann = scene_annotation(scene, t);
        const Vec2 neck = ann.joints.at("neck"), hip = ann.joints.at("hip");
        CHECK(norm(neck - hip) == doctest::Approx(84.0).epsilon(1e-12));
        CHECK(torso_length(ann) == doctest::Approx(84.0));
        CHECK(ann.joints.at("left_shoulder").x == doctest::Approx(neck.x - 9.0));
        CHECK(ann.joints.at("right_shoulder").x == doctest::Approx(neck.x + 9.0));
        CHECK(norm(ann.joints.at("left_elbow") - ann.joints.at("left_shoulder")) ==
              doctest::Approx(11.0).epsilon(1e-12));
        CHECK(norm(ann.joints.at("left_wrist") - ann.joints.at("left_elbow")) ==
              doctest::Approx(10.0).epsilon(1e-12));
        CHECK(norm(ann.joints.at("right_elbow") - ann.joints.at("right_shoulder")) ==
              doctest::Approx(11.0).epsilon(1e-12));
        CHECK(norm(ann.joints.at("right_wrist") - ann.joints.at("right_elbow")) ==
              doctest::Approx(10.0).epsilon(1e-12));

        // the upper-arm angle advances at the sampled rate
        const Vec2 d = ann.joints.at("left_elbow") - ann.joints.at("left_shoulder");
        const double expected = scene.person.left.upper0 + scene.person.left.upper_rate * t;
        CHECK(d.x == doctest::Approx(-11.0 * std::sin(expected)).epsilon(1e-9));
        CHECK(d.y == doctest::Approx(11.0 * std::cos(expected)).epsilon(1e-9));

        // rendered limbs pass through the annotated joints
        Image cover = arm_coverage(scene, t);
        for (const char* name : {"left_elbow", "left_wrist", "right_elbow", "right_wrist"}) {
            const Vec2 p = ann.joints.at(name);
            CHECK(cover.at(static_cast<int>(std::lround(p.y)), static_cast<int>(std::lround(p.x)),
                           0) >= 0.9f);
        }
    }
}

TEST_CASE("the camera starts at identity and advances as configured") {
    DatasetConfig cfg;
    cfg.camera = CameraMode::full;
    Rng rng(derive_seed(67, 0));
    Scene scene = sample_scene(cfg, rng);

    const SimilarityTransform at0 = camera_at(scene, 0.0);
    CHECK(at0.scale == 1.0);
    CHECK(at0.rotation == 0.0);
    CHECK(at0.tx == 0.0);
    CHECK(at0.ty == 0.0);

    const double t = 5.0;
    const SimilarityTransform cam = camera_at(scene, t);
    CHECK(cam.scale == doctest::Approx(1.0 + scene.zoom_rate * t));
    CHECK(cam.rotation == doctest::Approx(scene.rot_rate * t));
    // the image center is fixed apart from the pan drift
    const Vec2 m{(scene.width - 1) / 2.0, (scene.height - 1) / 2.0};
    const Vec2 moved = cam.apply(m);
    CHECK(moved.x == doctest::Approx(m.x + scene.pan_vx * t));
    CHECK(moved.y == doctest::Approx(m.y + scene.pan_vy * t));

    // pan-only cameras translate rigidly
    DatasetConfig pan_cfg;
    pan_cfg.camera = CameraMode::pan;
    Rng rng2(derive_seed(67, 1));
    Scene pan_scene = sample_scene(pan_cfg, rng2);
    const SimilarityTransform pan_cam = camera_at(pan_scene, 4.0);
    CHECK(pan_cam.scale == 1.0);
    CHECK(pan_cam.rotation == 0.0);
    CHECK(pan_cam.tx == doctest::Approx(4.0 * pan_scene.pan_vx));
    CHECK(pan_cam.ty == doctest::Approx(4.0 * pan_scene.pan_vy));
}

TEST_CASE("annotations ride the camera") {
    DatasetConfig cfg;
    cfg.camera = CameraMode::full;
    Rng rng(derive_seed(71, 0));
    Scene scene = sample_scene(cfg, rng);

    Annotation world = scene_annotation(scene, 0.0); // identity camera at t=0
    const double t = 6.0;
    Annotation framed = scene_annotation(scene, t);
    const SimilarityTransform cam = camera_at(scene, t);
    // torso anchors are static in the world, so their frame motion is
    // exactly the camera's
    for (const char* name : {"neck", "hip"}) {
        const Vec2 expect = cam.apply(world.joints.at(name));
        CHECK(framed.joints.at(name).x == doctest::Approx(expect.x).epsilon(1e-12));
        CHECK(framed.joints.at(name).y == doctest::Approx(expect.y).epsilon(1e-12));
    }
}

TEST_CASE("the background is anchored to the world, not the camera") {
    DatasetConfig cfg;
    cfg.camera = CameraMode::pan;
    Rng rng(derive_seed(9, 4));
    Scene scene = sample_scene(cfg, rng);
    const double t = 3.0;
    Image f0 = render_frame(scene, 0.0);
    Image f1 = render_frame(scene, t);
    const double dx = scene.pan_vx * t, dy = scene.pan_vy * t;

    // the noise lattice breaks only at integer world coordinates, so
    // bilinear reconstruction of the shifted frame is exact on background
    double err_max = 0.0;
    for (int y = 8; y < 24; ++y) // rows well above the figure
        for (int x = 8; x < f0.width() - 8; ++x) {
            const double sx = x - dx, sy = y - dy;
            const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
            const double fx = sx - ix, fy = sy - iy;
            for (int c = 0; c < 3; ++c) {
                const double v =
                    (f0.at(iy, ix, c) * (1 - fx) + f0.at(iy, ix + 1, c) * fx) * (1 - fy) +
                    (f0.at(iy + 1, ix, c) * (1 - fx) + f0.at(iy + 1, ix + 1, c) * fx) * fy;
                err_max = std::max(err_max, std::abs(v - f1.at(y, x, c)));
            }
        }
    CHECK(err_max <= 1e-5);
}

TEST_CASE("with a static camera only the arms move") {
    DatasetConfig cfg; // camera none
    Rng rng(derive_seed(81, 2));
    Scene scene = sample_scene(cfg, rng);
    Image f0 = render_frame(scene, 0.0);
    Image f1 = render_frame(scene, 3.0);
    Image m0 = arm_coverage(scene, 0.0);
    Image m1 = arm_coverage(scene, 3.0);

    auto in_dilated_mask = [&](int y, int x) {
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                const int yy = std::clamp(y + dy, 0, f0.height() - 1);
                const int xx = std::clamp(x + dx, 0, f0.width() - 1);
                if (m0.at(yy, xx, 0) > 0.0f || m1.at(yy, xx, 0) > 0.0f) return true;
            }
        return false;
    };

    double energy_in = 0.0, energy_out = 0.0;
    bool moved = false;
    for (int y = 0; y < f0.height(); ++y)
        for (int x = 0; x < f0.width(); ++x) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double dd = f1.at(y, x, c) - f0.at(y, x, c);
                d += dd * dd;
            }
            if (in_dilated_mask(y, x)) {
                energy_in += d;
                if (d > 0.0) moved = true;
            } else {
                energy_out += d;
                // everything away from the arms is bitwise static
                for (int c = 0; c < 3; ++c) CHECK(f1.at(y, x, c) == f0.at(y, x, c));
            }
        }
    CHECK(moved);
    CHECK(energy_in / (energy_in + energy_out) >= 0.999);
}

TEST_CASE("camouflaged arms are invisible to single-frame statistics") {
    const AppearanceStats camo = appearance_stats(TextureMode::camouflage, 12);
    const AppearanceStats solid = appearance_stats(TextureMode::cluttered, 12);

    // camouflage: arm pixels are distributed like the background and local
    // texture cannot separate them much better than chance
    CHECK(camo.hist_overlap >= 0.90);
    CHECK(camo.classifier_acc <= 0.60);

    // plain mode: solid-color arms are easy to tell apart
    CHECK(solid.hist_overlap <= 0.75);
    CHECK(solid.classifier_acc >= 0.80);
    CHECK(camo.hist_overlap - solid.hist_overlap >= 0.15);
}

TEST_CASE("camouflage texture is pinned to the limb, so motion stays visible") {
    DatasetConfig cfg;
    cfg.texture = TextureMode::camouflage;
    Rng rng(derive_seed(91, 5));
    Scene scene = sample_scene(cfg, rng);
    Image f0 = render_frame(scene, 0.0);
    Image f1 = render_frame(scene, 3.0);
    Image m0 = arm_coverage(scene, 0.0);
    Image m1 = arm_coverage(scene, 3.0);

    // pixels interior to the arms in both frames would be identical if the
    // texture were world-anchored; pinned to the moving limb it changes
    double diff_sum = 0.0;
    int count = 0;
    for (int y = 0; y < f0.height(); ++y)
        for (int x = 0; x < f0.width(); ++x)
            if (m0.at(y, x, 0) >= 0.999f && m1.at(y, x, 0) >= 0.999f) {
                for (int c = 0; c < 3; ++c)
                    diff_sum += std::abs(f1.at(y, x, c) - f0.at(y, x, c));
                count += 3;
            }
    REQUIRE(count > 100);
    CHECK(diff_sum / count > 0.003);
}

TEST_CASE("dataset layout round-trips through the reader") {
    auto dir = temp_dir("layout");
    DatasetConfig cfg;
    cfg.clips = 4;
    cfg.delta = 2;
    cfg.seed = 77;
    cfg.two_person = true;
    cfg.train_fraction = 0.75;
    write_dataset(dir.string(), cfg);

    Dataset ds = read_dataset(dir.string());
    CHECK(ds.config.delta == 2);
    CHECK(ds.config.seed == 77);
    CHECK(ds.config.two_person);
    CHECK(ds.config.camera == CameraMode::none);
    CHECK(ds.config.texture == TextureMode::cluttered);
    CHECK(ds.config.clips == 4);
    REQUIRE(ds.clips.size() == 4);
    CHECK(ds.train_ids.size() == 3);
    CHECK(ds.test_ids.size() == 1);

    // split is a disjoint cover of the clip ids
    std::vector<std::string> joined = ds.train_ids;
    joined.insert(joined.end(), ds.test_ids.begin(), ds.test_ids.end());
    std::sort(joined.begin(), joined.end());
    std::vector<std::string> ids;
    for (const ClipRecord& clip : ds.clips) ids.push_back(clip.id);
    std::sort(ids.begin(), ids.end());
    CHECK(joined == ids);

    // stored annotations reproduce the sampled scenes exactly
    for (int i = 0; i < 4; ++i) {
        Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i)));
        Scene scene = sample_scene(cfg, rng);
        const Annotation expect = scene_annotation(scene, 0.0);
        const ClipRecord& clip = ds.clips[static_cast<std::size_t>(i)];
        REQUIRE(clip.ann.joints.size() == 8);
        for (const auto& [name, p] : expect.joints) {
            CHECK(clip.ann.joints.at(name).x == doctest::Approx(p.x).epsilon(1e-12));
            CHECK(clip.ann.joints.at(name).y == doctest::Approx(p.y).epsilon(1e-12));
        }
        REQUIRE(clip.distractor.has_value());
        CHECK(clip.distractor->joints.size() == 8);
        CHECK(std::filesystem::exists(std::filesystem::path(clip.dir) / "f0.png"));
        CHECK(std::filesystem::exists(std::filesystem::path(clip.dir) / "f1.png"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("tampered datasets are rejected") {
    auto dir = temp_dir("tamper");
    DatasetConfig cfg;
    cfg.clips = 2;
    write_dataset(dir.string(), cfg);

    SUBCASE("malformed annotation json") {
        std::ofstream out(dir / "clips" / "clip_0000" / "ann.json", std::ios::trunc);
        out << "{";
        out.close();
        CHECK_THROWS_AS(read_dataset(dir.string()), DataError);
    }
    SUBCASE("missing frame") {
        std::filesystem::remove(dir / "clips" / "clip_0001" / "f1.png");
        CHECK_THROWS_AS(read_dataset(dir.string()), DataError);
    }
    SUBCASE("missing index") {
        std::filesystem::remove(dir / "index.json");
        CHECK_THROWS_AS(read_dataset(dir.string()), DataError);
    }
    SUBCASE("joint that is not a pair") {
        std::ofstream out(dir / "clips" / "clip_0000" / "ann.json", std::ios::trunc);
        out << R"({"joints": {"neck": [1, 2, 3]}})";
        out.close();
        CHECK_THROWS_AS(read_dataset(dir.string()), DataError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("unusable configurations are rejected up front") {
    auto dir = temp_dir("badcfg");
    DatasetConfig cfg;
    cfg.clips = 0;
    CHECK_THROWS_AS(write_dataset(dir.string(), cfg), ShapeError);
    cfg.clips = 1;
    cfg.delta = 0;
    CHECK_THROWS_AS(write_dataset(dir.string(), cfg), ShapeError);
    cfg.delta = 3;
    cfg.width = 100;
    CHECK_THROWS_AS(write_dataset(dir.string(), cfg), ShapeError);
    cfg.width = 240;
    cfg.train_fraction = 1.5;
    CHECK_THROWS_AS(write_dataset(dir.string(), cfg), ShapeError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("camera mode names round-trip") {
    for (CameraMode mode : {CameraMode::none, CameraMode::pan, CameraMode::full})
        CHECK(camera_mode_from_name(camera_mode_name(mode)) == mode);
    CHECK_THROWS_AS(camera_mode_from_name("dolly"), DataError);
}

TEST_CASE("texture mode names round-trip") {
    for (TextureMode mode : {TextureMode::plain, TextureMode::cluttered, TextureMode::camouflage})
        CHECK(texture_mode_from_name(texture_mode_name(mode)) == mode);
    CHECK_THROWS_AS(texture_mode_from_name("tartan"), DataError);
}

TEST_CASE("plain mode draws a flat background with a visible figure") {
    DatasetConfig cfg;
    cfg.texture = TextureMode::plain;
    Rng rng(derive_seed(13, 0));
    Scene scene = sample_scene(cfg, rng);
    Image f0 = render_frame(scene, 0.0);
    // corners are far from the figure: flat background everywhere
    for (int c = 0; c < 3; ++c) {
        CHECK(f0.at(0, 0, c) == 0.5f);
        CHECK(f0.at(f0.height() - 1, f0.width() - 1, c) == 0.5f);
    }
    std::size_t figure_pixels = 0;
    for (std::size_t i = 0; i < f0.size(); ++i) figure_pixels += f0.data()[i] != 0.5f;
    CHECK(figure_pixels > 300);
}

TEST_CASE("frozen joints and a static camera give identical frames") {
    DatasetConfig cfg;
    Rng rng(derive_seed(14, 0));
    Scene scene = sample_scene(cfg, rng);
    scene.person.left.upper_rate = scene.person.left.fore_rate = 0.0;
    scene.person.right.upper_rate = scene.person.right.fore_rate = 0.0;
    Image f0 = render_frame(scene, 0.0);
    Image f1 = render_frame(scene, 3.0);
    REQUIRE(f0.size() == f1.size());
    bool identical = true;
    for (std::size_t i = 0; i < f0.size(); ++i) identical &= f0.data()[i] == f1.data()[i];
    CHECK(identical);
}

TEST_SUITE_END();

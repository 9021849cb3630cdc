#include "mpose/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpose/annotation.hpp"
#include "mpose/checkpoint.hpp"
#include "mpose/convnet.hpp"
#include "mpose/datagen.hpp"
#include "mpose/errors.hpp"
#include "mpose/evaluation.hpp"
#include "mpose/gradcheck.hpp"
#include "mpose/image.hpp"
#include "mpose/motion.hpp"
#include "mpose/parallel.hpp"
#include "mpose/pipeline.hpp"
#include "mpose/rng.hpp"
#include "mpose/spatial.hpp"
#include "mpose/training.hpp"

namespace mpose {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- plumbing

uint64_t fnv1a64_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "' for hashing");
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (true) {
        in.read(buf, sizeof buf);
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof buf)) break;
    }
    return h;
}

std::string hex16(uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

// Every command records what it wrote; replay re-hashes these files.
struct RunContext {
    std::string command;
    std::vector<std::string> args; // argv after the subcommand name
    uint64_t seed = 0;
    fs::path root;                    // outputs live under here
    std::vector<std::string> outputs; // relative to root
    std::string manifest_name = "manifest.json";
};

void write_manifest(const RunContext& ctx, double total_ms) {
    json m;
    m["command"] = ctx.command;
    m["args"] = ctx.args;
    m["seed"] = ctx.seed;
    m["root"] = ctx.root.string();
    std::vector<std::string> rel = ctx.outputs;
    std::sort(rel.begin(), rel.end());
    json outs = json::array();
    for (const std::string& p : rel)
        outs.push_back({{"hash", hex16(fnv1a64_file(ctx.root / p))}, {"path", p}});
    m["outputs"] = outs;
    // wall-clock is informational only: replay never compares it
    m["timings_ms"] = {{"total", total_ms}};
    const fs::path path = ctx.root / ctx.manifest_name;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << m.dump(2) << "\n";
    std::cout << "manifest: " << path.string() << "\n";
}

// parallel_for with exception transport (a throwing worker would terminate)
void parallel_for_guarded(std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::mutex mu;
    std::exception_ptr first;
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first) first = std::current_exception();
                return;
            }
        }
    });
    if (first) std::rethrow_exception(first);
}

// -------------------------------------------------- flag values and parsing

FeatureKind kind_from_token(const std::string& token) {
    if (token == "rgb") return FeatureKind::rgb;
    if (token == "pair") return FeatureKind::frame_pair;
    if (token == "diff") return FeatureKind::frame_diff;
    if (token == "flow") return FeatureKind::flow_2d;
    if (token == "flowmag") return FeatureKind::flow_mag;
    throw DataError("unknown feature kind '" + token + "'");
}

std::string token_from_kind(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::rgb: return "rgb";
        case FeatureKind::frame_pair: return "pair";
        case FeatureKind::frame_diff: return "diff";
        case FeatureKind::flow_2d: return "flow";
        case FeatureKind::flow_mag: return "flowmag";
    }
    throw DataError("unknown feature kind");
}

NetworkConfig model_config(const std::string& model, int banks) {
    NetworkConfig net;
    net.banks = banks;
    net.window = 64;
    net.stride_out = 4;
    net.joints = static_cast<int>(limb_joints().size());
    if (model == "small") {
        net.conv_features = 16;
        net.fc_widths = {48, 24};
    } else {
        net.conv_features = 128;
        net.fc_widths = {512, 256};
    }
    return net;
}

std::pair<int, int> parse_size(const std::string& token) {
    const auto x = token.find('x');
    try {
        if (x != std::string::npos) {
            std::size_t a = 0, b = 0;
            const int w = std::stoi(token.substr(0, x), &a);
            const int h = std::stoi(token.substr(x + 1), &b);
            if (a == x && b == token.size() - x - 1) return {w, h};
        }
    } catch (const std::exception&) {
    }
    throw DataError("size '" + token + "' is not WIDTHxHEIGHT");
}

std::vector<double> parse_radii(const std::string& token) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(token);
    if (!(ss >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !ss.eof())
        throw DataError("radii '" + token + "' is not LO:HI:STEP");
    if (step <= 0 || hi < lo) throw DataError("radii '" + token + "' has an empty range");
    std::vector<double> radii;
    for (double r = lo; r <= hi + 1e-9; r += step) radii.push_back(r);
    return radii;
}

std::string epoch_checkpoint_name(int epoch_1based) {
    std::ostringstream ss;
    ss << "epoch_" << std::setw(3) << std::setfill('0') << epoch_1based << ".ckpt";
    return ss.str();
}

fs::path stack_path(const ClipRecord& clip, FeatureKind kind) {
    return fs::path(clip.dir) / (token_from_kind(kind) + ".f32p");
}

Image load_clip_features(const ClipRecord& clip, FeatureKind kind) {
    if (kind == FeatureKind::rgb) return load_png((fs::path(clip.dir) / "f0.png").string());
    const fs::path path = stack_path(clip, kind);
    if (!fs::exists(path))
        throw DataError("clip '" + clip.id + "' has no " + token_from_kind(kind) +
                        " stack; run the features command first");
    return load_f32p(path.string());
}

const std::vector<std::string>& split_ids(const Dataset& ds, const std::string& split) {
    return split == "train" ? ds.train_ids : ds.test_ids;
}

std::map<std::string, const ClipRecord*> clips_by_id(const Dataset& ds) {
    std::map<std::string, const ClipRecord*> by_id;
    for (const ClipRecord& clip : ds.clips) by_id[clip.id] = &clip;
    return by_id;
}

const ClipRecord& clip_for(const std::map<std::string, const ClipRecord*>& by_id,
                           const std::string& id) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("split references unknown clip '" + id + "'");
    return *it->second;
}

Image tensor_to_image(const Tensor& t) {
    Image img(t.dim(1), t.dim(2), t.dim(0));
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < t.dim(1); ++y)
            for (int x = 0; x < t.dim(2); ++x) img.at(y, x, c) = t.at(c, y, x);
    return img;
}

// ------------------------------------------------------------------ datagen

struct DatagenFlags {
    std::string out;
    int train = 8, test = 2;
    std::string mode = "cluttered";
    int people = 1;
    std::string camera = "none";
    int delta = 3;
    uint64_t seed = 1;
    std::string size = "240x180";
};

int cmd_datagen(const DatagenFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    if (f.train + f.test < 1) throw DataError("need at least one clip (--train + --test >= 1)");
    DatasetConfig cfg;
    cfg.clips = f.train + f.test;
    cfg.train_fraction = static_cast<double>(f.train) / cfg.clips;
    cfg.delta = f.delta;
    cfg.seed = f.seed;
    cfg.camera = camera_mode_from_name(f.camera);
    cfg.texture = texture_mode_from_name(f.mode);
    cfg.two_person = f.people == 2;
    const auto [w, h] = parse_size(f.size);
    cfg.width = w;
    cfg.height = h;
    write_dataset(f.out, cfg);

    RunContext ctx;
    ctx.command = "datagen";
    ctx.args = args;
    ctx.seed = f.seed;
    ctx.root = f.out;
    ctx.outputs.push_back("index.json");
    for (int i = 0; i < cfg.clips; ++i) {
        std::ostringstream id;
        id << "clip_" << std::setw(4) << std::setfill('0') << i;
        for (const char* file : {"f0.png", "f1.png", "ann.json"})
            ctx.outputs.push_back("clips/" + id.str() + "/" + file);
    }
    write_manifest(ctx, watch.ms());
    std::cout << "dataset written: " << f.out << " (" << cfg.clips << " clips: " << f.train
              << " train, " << f.test << " test)\n";
    return 0;
}

// ----------------------------------------------------------------- features

struct FeaturesFlags {
    std::string dataset;
    std::string kind;
    int delta = 0;
    bool delta_set = false;
    std::string compensate = "off";
};

int cmd_features(const FeaturesFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    Dataset ds = read_dataset(f.dataset);
    const FeatureKind kind = kind_from_token(f.kind);
    const int delta = f.delta_set ? f.delta : ds.config.delta;
    if (delta != ds.config.delta)
        throw DataError("requested delta " + std::to_string(delta) +
                        " but the dataset's frame pairs were rendered " +
                        std::to_string(ds.config.delta) +
                        " frames apart; regenerate the dataset to sweep offsets");
    MotionFeatureConfig mcfg;
    mcfg.kind = kind;
    mcfg.delta = delta;
    mcfg.compensate_camera = f.compensate == "on";

    parallel_for_guarded(ds.clips.size(), [&](std::size_t i) {
        const ClipRecord& clip = ds.clips[i];
        const Image f0 = load_png((fs::path(clip.dir) / "f0.png").string());
        const Image f1 = load_png((fs::path(clip.dir) / "f1.png").string());
        save_f32p(make_feature(mcfg, f0, f1), stack_path(clip, kind).string());
    });

    json meta;
    meta["kind"] = f.kind;
    meta["delta"] = delta;
    meta["compensate"] = mcfg.compensate_camera;
    const std::string meta_name = "features_" + f.kind + ".json";
    {
        std::ofstream out(fs::path(f.dataset) / meta_name, std::ios::trunc);
        if (!out) throw IoError("cannot write " + meta_name);
        out << meta.dump(2) << "\n";
    }

    RunContext ctx;
    ctx.command = "features";
    ctx.args = args;
    ctx.root = f.dataset;
    ctx.manifest_name = "manifest_features_" + f.kind + ".json";
    ctx.outputs.push_back(meta_name);
    for (const ClipRecord& clip : ds.clips)
        ctx.outputs.push_back("clips/" + clip.id + "/" + f.kind + ".f32p");
    write_manifest(ctx, watch.ms());
    std::cout << "features written: " << f.kind << " stacks for " << ds.clips.size()
              << " clips\n";
    return 0;
}

// -------------------------------------------------------------------- train

struct TrainFlags {
    std::string dataset, out;
    std::string features = "flowmag";
    std::string model = "small";
    int banks = 3;
    int epochs = 10;
    double lr = 0.01;
    double momentum = 0.9;
    double lr_decay = 0.5;
    int lr_decay_every = 20;
    int batch = 8;
    int crop = 80;
    double sigma = 2.0;
    uint64_t seed = 1;
};

int cmd_train(const TrainFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    Dataset ds = read_dataset(f.dataset);
    const FeatureKind kind = kind_from_token(f.features);

    int delta = ds.config.delta;
    bool compensate = false;
    if (kind != FeatureKind::rgb) {
        const fs::path meta_path = fs::path(f.dataset) / ("features_" + f.features + ".json");
        std::ifstream in(meta_path);
        if (!in)
            throw DataError("dataset has no '" + f.features +
                            "' stacks; run the features command first");
        json meta;
        try {
            in >> meta;
            delta = meta.at("delta").get<int>();
            compensate = meta.at("compensate").get<bool>();
        } catch (const json::exception& e) {
            throw DataError(meta_path.string() + " is malformed: " + e.what());
        }
    }

    PipelineConfig cfg = make_pipeline_config(kind, delta, compensate, model_config(f.model, f.banks));
    cfg.target_sigma = f.sigma;

    if (ds.train_ids.empty()) throw DataError("dataset has no train split");
    const auto by_id = clips_by_id(ds);
    std::vector<TrainSample> samples(ds.train_ids.size());
    parallel_for_guarded(samples.size(), [&](std::size_t i) {
        const ClipRecord& clip = clip_for(by_id, ds.train_ids[i]);
        samples[i] = TrainSample{load_clip_features(clip, kind), clip.ann, clip.id};
    });

    Rng init_rng(derive_seed(f.seed, 0x1A17));
    ModelParams params = build(cfg.net, init_rng);

    fs::create_directories(f.out);
    TrainHyper hyper;
    hyper.lr = f.lr;
    hyper.momentum = f.momentum;
    hyper.lr_decay = f.lr_decay;
    hyper.lr_decay_every = f.lr_decay_every;
    hyper.batch = f.batch;
    hyper.epochs = f.epochs;
    hyper.crop_span = f.crop;
    hyper.seed = f.seed;
    hyper.checkpoint_dir = f.out;

    const TrainResult result = train(params, samples, cfg, hyper);

    {
        std::ofstream out(fs::path(f.out) / "loss.csv", std::ios::trunc);
        if (!out) throw IoError("cannot write loss.csv");
        out << "epoch,loss\n";
        char line[64];
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
            std::snprintf(line, sizeof line, "%zu,%.17g\n", e + 1, result.epoch_loss[e]);
            out << line;
        }
    }
    fs::copy_file(fs::path(f.out) / epoch_checkpoint_name(f.epochs),
                  fs::path(f.out) / "final.ckpt", fs::copy_options::overwrite_existing);

    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        std::cout << "epoch " << (e + 1) << " loss " << std::setprecision(10)
                  << result.epoch_loss[e] << "\n";

    RunContext ctx;
    ctx.command = "train";
    ctx.args = args;
    ctx.seed = f.seed;
    ctx.root = f.out;
    ctx.outputs = {"loss.csv", "final.ckpt"};
    for (int e = 1; e <= f.epochs; ++e) ctx.outputs.push_back(epoch_checkpoint_name(e));
    write_manifest(ctx, watch.ms());
    std::cout << "training done: " << f.out << "/final.ckpt\n";
    return 0;
}

// -------------------------------------------------------------------- infer

struct InferFlags {
    std::string ckpt, dataset, out;
    std::string split = "test";
    std::string spatial = "on";
    bool dump_maps = false;
};

int cmd_infer(const InferFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    const Checkpoint ck = load_checkpoint(f.ckpt);
    Dataset ds = read_dataset(f.dataset);
    const std::vector<std::string>& ids = split_ids(ds, f.split);
    if (ids.empty()) throw DataError("split '" + f.split + "' is empty");
    const auto by_id = clips_by_id(ds);

    std::optional<SpatialModel> model;
    if (f.spatial == "on") {
        std::vector<Annotation> anns;
        for (const std::string& id : ds.train_ids) anns.push_back(clip_for(by_id, id).ann);
        if (anns.empty())
            throw DataError("--spatial-model on needs a train split to learn joint offsets");
        model = build_masks(anns, limb_joints());
    }

    fs::create_directories(f.out);
    if (f.dump_maps) fs::create_directories(fs::path(f.out) / "maps");

    const std::vector<std::string>& names = limb_joints();
    std::vector<json> rows(ids.size());
    parallel_for_guarded(ids.size(), [&](std::size_t i) {
        const ClipRecord& clip = clip_for(by_id, ids[i]);
        const Image feats = load_clip_features(clip, ck.config.motion.kind);
        if (feats.channels() != ck.config.net.input_channels)
            throw CheckpointError("checkpoint expects " +
                                  std::to_string(ck.config.net.input_channels) +
                                  " input channels but clip '" + clip.id + "' features have " +
                                  std::to_string(feats.channels()));
        ResponseMaps maps = infer_maps(ck.params, feats, ck.config);
        // the evaluation protocol supplies the labeled person's rough torso
        // location from ground truth
        if (model) maps = apply_masks(maps, *model, torso_center(clip.ann));
        const std::vector<JointPrediction> preds = predict_joints(maps);
        json row;
        for (std::size_t j = 0; j < names.size(); ++j)
            row[names[j]] = {preds[j].position.x, preds[j].position.y};
        rows[i] = std::move(row);
        if (f.dump_maps)
            save_f32p(tensor_to_image(maps.maps),
                      (fs::path(f.out) / "maps" / (clip.id + ".f32p")).string());
    });

    json all;
    for (std::size_t i = 0; i < ids.size(); ++i) all[ids[i]] = std::move(rows[i]);
    {
        std::ofstream out(fs::path(f.out) / "predictions.json", std::ios::trunc);
        if (!out) throw IoError("cannot write predictions.json");
        out << all.dump(2) << "\n";
    }

    RunContext ctx;
    ctx.command = "infer";
    ctx.args = args;
    ctx.root = f.out;
    ctx.outputs.push_back("predictions.json");
    if (f.dump_maps)
        for (const std::string& id : ids) ctx.outputs.push_back("maps/" + id + ".f32p");
    write_manifest(ctx, watch.ms());
    std::cout << "predictions written: " << f.out << "/predictions.json (" << ids.size()
              << " samples)\n";
    return 0;
}

// --------------------------------------------------------------------- eval

struct EvalFlags {
    std::string gt, out;
    std::vector<std::string> preds;
    std::string split = "test";
    std::string joint = "all";
    std::string radii = "0:30:1";
    double norm = 100.0;
};

std::vector<std::string> joints_for(const std::string& selector) {
    if (selector == "all") return limb_joints();
    return {"left_" + selector, "right_" + selector};
}

int cmd_eval(const EvalFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    Dataset ds = read_dataset(f.gt);
    const std::vector<std::string>& ids = split_ids(ds, f.split);
    if (ids.empty()) throw DataError("split '" + f.split + "' is empty");
    const auto by_id = clips_by_id(ds);
    const std::vector<std::string> sel = joints_for(f.joint);
    const std::vector<double> radii = parse_radii(f.radii);

    std::vector<PckCurve> curves;
    std::set<std::string> used_labels;
    std::cout << std::setprecision(10);
    for (const std::string& pred_path : f.preds) {
        std::ifstream in(pred_path);
        if (!in) throw IoError("cannot read predictions '" + pred_path + "'");
        json pred;
        try {
            in >> pred;
        } catch (const json::exception& e) {
            throw DataError("predictions '" + pred_path + "' are not valid JSON: " + e.what());
        }

        std::vector<std::string> missing, extra;
        for (const std::string& id : ids)
            if (!pred.contains(id)) missing.push_back(id);
        const std::set<std::string> id_set(ids.begin(), ids.end());
        for (const auto& item : pred.items())
            if (!id_set.count(item.key())) extra.push_back(item.key());
        if (!missing.empty() || !extra.empty()) {
            std::string detail;
            for (const std::string& id : missing) detail += " missing:" + id;
            for (const std::string& id : extra) detail += " extra:" + id;
            throw EvalMismatchError("predictions '" + pred_path + "' do not match split '" +
                                    f.split + "':" + detail);
        }

        std::vector<EvalSample> samples;
        for (const std::string& id : ids) {
            const ClipRecord& clip = clip_for(by_id, id);
            const double tl = torso_length(clip.ann);
            for (const std::string& joint : sel) {
                if (!pred.at(id).contains(joint))
                    throw EvalMismatchError("predictions '" + pred_path + "' sample '" + id +
                                            "' is missing joint '" + joint + "'");
                const json& p = pred.at(id).at(joint);
                if (!p.is_array() || p.size() != 2)
                    throw DataError("prediction for '" + id + "'/'" + joint +
                                    "' is not an [x, y] pair");
                samples.push_back(EvalSample{{p[0].get<double>(), p[1].get<double>()},
                                             annotation_point(clip.ann, joint), tl});
            }
        }

        std::string label = fs::path(pred_path).stem().string();
        while (used_labels.count(label)) label += "_";
        used_labels.insert(label);
        curves.push_back(pck_curve(samples, label, radii, f.norm));
        std::cout << "pck5 " << label << " " << detection_rate(samples, 5.0, f.norm) << "\n";
    }

    fs::create_directories(f.out);
    const fs::path csv = fs::path(f.out) / "pck.csv";
    const fs::path svg = fs::path(f.out) / "pck.svg";
    emit_results(curves, csv.string(), svg.string());

    for (const PckCurve& curve : curves) {
        if (curve.radii.front() <= 1e-9 && curve.radii.back() >= 20.0 - 1e-9)
            std::cout << "mean_precision_0_20 " << curve.label << " " << mean_precision(curve)
                      << "\n";
        else
            std::cout << "mean_precision_0_20 " << curve.label
                      << " skipped (radii do not cover [0, 20])\n";
    }

    RunContext ctx;
    ctx.command = "eval";
    ctx.args = args;
    ctx.root = f.out;
    ctx.outputs = {"pck.csv", "pck.svg"};
    write_manifest(ctx, watch.ms());
    std::cout << "results written: " << csv.string() << " " << svg.string() << "\n";
    return 0;
}

// -------------------------------------------------------------------- bench

struct BenchFlags {
    std::string out;
    std::string sizes = "240x180";
    std::string model = "small";
    int banks = 2;
    uint64_t seed = 1;
};

int cmd_bench(const BenchFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    std::vector<std::string> tokens;
    {
        std::istringstream ss(f.sizes);
        std::string tok;
        while (std::getline(ss, tok, ',')) tokens.push_back(tok);
    }
    if (tokens.empty()) throw DataError("--sizes is empty");

    NetworkConfig net = model_config(f.model, f.banks);
    net.input_channels = 3;
    net.validate();
    Rng rng(derive_seed(f.seed, 0xBE7C));
    const ModelParams params = build(net, rng);

    fs::create_directories(f.out);
    std::ofstream csv(fs::path(f.out) / "bench.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write bench.csv");
    csv << "width,height,banks,grid_y,grid_x,patchwise_ms,oneshot_ms,speedup,max_abs_diff\n";

    for (std::size_t s = 0; s < tokens.size(); ++s) {
        const auto [w, h] = parse_size(tokens[s]);
        const PadSpec pad = pad_for_grid(h, w, net);
        std::vector<Tensor> pyramid;
        Rng fill(derive_seed(f.seed, s, 0xF177));
        for (int b = 0; b < net.banks; ++b) {
            Tensor t({3, pad.height >> b, pad.width >> b});
            for (std::size_t i = 0; i < t.size(); ++i)
                t[i] = static_cast<float>(fill.uniform(-1.0, 1.0));
            pyramid.push_back(std::move(t));
        }

        Stopwatch tp;
        const ResponseMaps slow = forward_patchwise(params, pyramid);
        const double patch_ms = tp.ms();
        Stopwatch to;
        const ResponseMaps fast = forward_oneshot(params, pyramid);
        const double one_ms = to.ms();

        if (slow.maps.shape() != fast.maps.shape())
            throw EquivalenceError("one-shot and sliding-window grids disagree at " + tokens[s]);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < slow.maps.size(); ++i)
            max_diff = std::max(max_diff,
                                std::abs(static_cast<double>(slow.maps[i]) - fast.maps[i]));
        if (max_diff > 1e-4)
            throw EquivalenceError("one-shot and sliding-window outputs differ by " +
                                   std::to_string(max_diff) + " at " + tokens[s]);

        const double speedup = patch_ms / one_ms;
        char row[256];
        std::snprintf(row, sizeof row, "%d,%d,%d,%d,%d,%.3f,%.3f,%.2f,%.3g\n", w, h, net.banks,
                      fast.maps.dim(1), fast.maps.dim(2), patch_ms, one_ms, speedup, max_diff);
        csv << row;
        std::cout << "bench " << w << "x" << h << " banks=" << net.banks
                  << " patchwise_ms=" << patch_ms << " oneshot_ms=" << one_ms
                  << " speedup=" << speedup << " max_abs_diff=" << max_diff << "\n";
    }
    csv.close();

    RunContext ctx;
    ctx.command = "bench";
    ctx.args = args;
    ctx.seed = f.seed;
    ctx.root = f.out;
    // bench.csv holds wall-clock numbers, so it is not replay-comparable
    write_manifest(ctx, watch.ms());
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckFlags {
    uint64_t seed = 1;
    bool inject_fault = false;
    std::string out;
};

int cmd_gradcheck(const GradcheckFlags& f, const std::vector<std::string>& args) {
    Stopwatch watch;
    const GradcheckReport report = run_gradcheck(f.seed, f.inject_fault);

    std::ostringstream table;
    for (const GradcheckEntry& entry : report.entries) {
        char line[160];
        std::snprintf(line, sizeof line, "%-40s max_rel_err %.3e tolerance %.1e %s\n",
                      entry.name.c_str(), entry.max_rel_err, entry.tolerance,
                      entry.pass ? "PASS" : "FAIL");
        table << line;
    }
    std::cout << table.str();

    if (!f.out.empty()) {
        fs::create_directories(f.out);
        std::ofstream rep(fs::path(f.out) / "report.txt", std::ios::trunc);
        if (!rep) throw IoError("cannot write report.txt");
        rep << table.str();
        rep.close();
        RunContext ctx;
        ctx.command = "gradcheck";
        ctx.args = args;
        ctx.seed = f.seed;
        ctx.root = f.out;
        ctx.outputs = {"report.txt"};
        write_manifest(ctx, watch.ms());
    }

    if (!report.all_pass()) {
        const GradcheckEntry* worst = nullptr;
        for (const GradcheckEntry& entry : report.entries)
            if (!entry.pass &&
                (!worst || entry.max_rel_err / entry.tolerance > worst->max_rel_err / worst->tolerance))
                worst = &entry;
        std::cout << "gradient audit FAILED: worst offender " << worst->name << " (rel err "
                  << worst->max_rel_err << ", tolerance " << worst->tolerance << ")\n";
        return 1;
    }
    std::cout << "gradient audit passed (" << report.entries.size() << " checks)\n";
    return 0;
}

// ------------------------------------------------------------------- replay

int dispatch(const std::vector<std::string>& argv);

struct ReplayFlags {
    std::string manifest;
};

int cmd_replay(const ReplayFlags& f) {
    std::ifstream in(f.manifest);
    if (!in) throw IoError("cannot read manifest '" + f.manifest + "'");
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw DataError("manifest is not valid JSON: " + std::string(e.what()));
    }

    std::string command;
    std::vector<std::string> args;
    std::string root;
    try {
        command = m.at("command").get<std::string>();
        args = m.at("args").get<std::vector<std::string>>();
        root = m.at("root").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError("manifest is missing fields: " + std::string(e.what()));
    }
    if (command == "replay") throw DataError("refusing to replay a replay");

    std::vector<std::string> argv = {"mpose", command};
    argv.insert(argv.end(), args.begin(), args.end());
    std::cout << "replaying: " << command;
    for (const std::string& a : args) std::cout << " " << a;
    std::cout << "\n";
    const int code = dispatch(argv);
    if (code != 0) {
        std::cerr << "replay: underlying command exited with code " << code << "\n";
        return code;
    }

    std::size_t checked = 0, mismatched = 0;
    for (const json& entry : m.at("outputs")) {
        const std::string rel = entry.at("path").get<std::string>();
        const std::string recorded = entry.at("hash").get<std::string>();
        const fs::path path = fs::path(root) / rel;
        ++checked;
        if (!fs::exists(path)) {
            std::cout << "missing: " << rel << "\n";
            ++mismatched;
            continue;
        }
        if (hex16(fnv1a64_file(path)) != recorded) {
            std::cout << "differs: " << rel << "\n";
            ++mismatched;
        }
    }
    if (mismatched > 0) {
        std::cerr << "replay FAILED: " << mismatched << " of " << checked
                  << " outputs differ from the manifest\n";
        return 1;
    }
    std::cout << "replay verified: " << checked << " outputs bitwise identical\n";
    return 0;
}

// ----------------------------------------------------------------- dispatch

int dispatch(const std::vector<std::string>& argv) {
    CLI::App app{"articulated-pose pipeline: synthetic data, motion features, "
                 "convolutional heatmap training, and torso-normalized evaluation"};
    app.require_subcommand(1);

    DatagenFlags dg;
    auto* dg_cmd = app.add_subcommand("datagen", "render a synthetic frame-pair dataset");
    dg_cmd->add_option("--out", dg.out, "dataset root directory")->required();
    dg_cmd->add_option("--train", dg.train, "training clips")->check(CLI::NonNegativeNumber);
    dg_cmd->add_option("--test", dg.test, "held-out clips")->check(CLI::NonNegativeNumber);
    dg_cmd->add_option("--mode", dg.mode, "figure/background texture")
        ->check(CLI::IsMember({"plain", "cluttered", "camouflage"}));
    dg_cmd->add_option("--people", dg.people, "figures per scene")->check(CLI::IsMember({1, 2}));
    dg_cmd->add_option("--camera", dg.camera, "camera motion")
        ->check(CLI::IsMember({"none", "pan", "full"}));
    dg_cmd->add_option("--delta", dg.delta, "frame offset between f0 and f1");
    dg_cmd->add_option("--seed", dg.seed, "rng seed");
    dg_cmd->add_option("--size", dg.size, "frame size WIDTHxHEIGHT");

    FeaturesFlags ft;
    auto* ft_cmd = app.add_subcommand("features", "write motion-feature stacks beside frames");
    ft_cmd->add_option("--dataset", ft.dataset, "dataset root")->required();
    ft_cmd->add_option("--kind", ft.kind, "motion feature kind")
        ->required()
        ->check(CLI::IsMember({"pair", "diff", "flow", "flowmag"}));
    auto* ft_delta = ft_cmd->add_option("--delta", ft.delta, "frame offset (must match dataset)");
    ft_cmd->add_option("--compensate", ft.compensate, "camera compensation")
        ->check(CLI::IsMember({"on", "off"}));

    TrainFlags tr;
    auto* tr_cmd = app.add_subcommand("train", "train the heatmap regressor");
    tr_cmd->add_option("--dataset", tr.dataset, "dataset root")->required();
    tr_cmd->add_option("--out", tr.out, "checkpoint directory")->required();
    tr_cmd->add_option("--features", tr.features, "input feature kind")
        ->check(CLI::IsMember({"rgb", "pair", "diff", "flow", "flowmag"}));
    tr_cmd->add_option("--model", tr.model, "model size")
        ->check(CLI::IsMember({"small", "big"}));
    tr_cmd->add_option("--banks", tr.banks, "resolution banks")->check(CLI::Range(1, 3));
    tr_cmd->add_option("--epochs", tr.epochs, "training epochs")->check(CLI::PositiveNumber);
    tr_cmd->add_option("--lr", tr.lr, "learning rate");
    tr_cmd->add_option("--momentum", tr.momentum, "Nesterov momentum");
    tr_cmd->add_option("--lr-decay", tr.lr_decay, "learning-rate decay factor");
    tr_cmd->add_option("--lr-decay-every", tr.lr_decay_every, "epochs per decay step")
        ->check(CLI::PositiveNumber);
    tr_cmd->add_option("--batch", tr.batch, "mini-batch size")->check(CLI::PositiveNumber);
    tr_cmd->add_option("--crop", tr.crop, "training crop span in px")->check(CLI::PositiveNumber);
    tr_cmd->add_option("--sigma", tr.sigma, "target heatmap bump width in px");
    tr_cmd->add_option("--seed", tr.seed, "rng seed");

    InferFlags inf;
    auto* inf_cmd = app.add_subcommand("infer", "predict joints for a dataset split");
    inf_cmd->add_option("--ckpt", inf.ckpt, "checkpoint file")->required();
    inf_cmd->add_option("--dataset", inf.dataset, "dataset root")->required();
    inf_cmd->add_option("--out", inf.out, "output directory")->required();
    inf_cmd->add_option("--split", inf.split, "dataset split")
        ->check(CLI::IsMember({"train", "test"}));
    inf_cmd->add_option("--spatial-model", inf.spatial, "torso-anchored joint masking")
        ->check(CLI::IsMember({"on", "off"}));
    inf_cmd->add_flag("--dump-maps", inf.dump_maps, "write response maps per sample");

    EvalFlags ev;
    auto* ev_cmd = app.add_subcommand("eval", "detection-rate curves for predictions");
    ev_cmd->add_option("--gt", ev.gt, "ground-truth dataset root")->required();
    ev_cmd->add_option("--out", ev.out, "output directory")->required();
    ev_cmd->add_option("--pred", ev.preds, "predictions JSON (repeatable)")->required();
    ev_cmd->add_option("--split", ev.split, "dataset split")
        ->check(CLI::IsMember({"train", "test"}));
    ev_cmd->add_option("--joint", ev.joint, "joints to pool")
        ->check(CLI::IsMember({"all", "wrist", "elbow", "shoulder"}));
    ev_cmd->add_option("--radii", ev.radii, "detection radii LO:HI:STEP in px");
    ev_cmd->add_option("--norm", ev.norm, "torso normalization length in px");

    BenchFlags bn;
    auto* bn_cmd = app.add_subcommand("bench", "time one-shot vs sliding-window inference");
    bn_cmd->add_option("--out", bn.out, "output directory")->required();
    bn_cmd->add_option("--sizes", bn.sizes, "comma list of WIDTHxHEIGHT");
    bn_cmd->add_option("--model", bn.model, "model size")
        ->check(CLI::IsMember({"small", "big"}));
    bn_cmd->add_option("--banks", bn.banks, "resolution banks")->check(CLI::Range(1, 3));
    bn_cmd->add_option("--seed", bn.seed, "rng seed");

    GradcheckFlags gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gc_cmd->add_option("--seed", gc.seed, "rng seed");
    gc_cmd->add_flag("--inject-fault", gc.inject_fault,
                     "corrupt one gradient to demonstrate failure reporting");
    gc_cmd->add_option("--out", gc.out, "optional report directory");

    ReplayFlags rp;
    auto* rp_cmd = app.add_subcommand("replay", "re-run a manifest and verify output hashes");
    rp_cmd->add_option("--manifest", rp.manifest, "manifest JSON path")->required();

    std::vector<const char*> cargv;
    cargv.reserve(argv.size());
    for (const std::string& a : argv) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    // manifest args: everything after the subcommand token
    std::vector<std::string> rest;
    for (std::size_t i = 2; i < argv.size(); ++i) rest.push_back(argv[i]);

    if (dg_cmd->parsed()) return cmd_datagen(dg, rest);
    if (ft_cmd->parsed()) {
        ft.delta_set = ft_delta->count() > 0;
        return cmd_features(ft, rest);
    }
    if (tr_cmd->parsed()) return cmd_train(tr, rest);
    if (inf_cmd->parsed()) return cmd_infer(inf, rest);
    if (ev_cmd->parsed()) return cmd_eval(ev, rest);
    if (bn_cmd->parsed()) return cmd_bench(bn, rest);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, rest);
    if (rp_cmd->parsed()) return cmd_replay(rp);
    return 2;
}

} // namespace

int run_cli(const std::vector<std::string>& argv) {
    try {
        return dispatch(argv);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const EvalMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const EquivalenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run_cli(args);
}

} // namespace mpose

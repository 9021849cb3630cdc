#include "mpose/motion.hpp"

#include <algorithm>
#include <cmath>

#include "mpose/rng.hpp"

namespace mpose {

namespace {

void require_same_frames(const Image& a, const Image& b, const char* op) {
    if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
        throw ShapeError(std::string(op) + ": frames must share extents and channel count");
}

// grayscale on the [0,255] scale used by the flow data term
std::vector<double> to_gray255(const Image& img) {
    std::vector<double> g(static_cast<std::size_t>(img.height()) * img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double acc = 0.0;
            for (int c = 0; c < img.channels(); ++c) acc += img.at(y, x, c);
            g[static_cast<std::size_t>(y) * img.width() + x] = 255.0 * acc / img.channels();
        }
    return g;
}

struct FlowProblem {
    int h = 0, w = 0;
    std::vector<double> ix, iy, it;
};

// derivatives shared by the solver and the objective: averaged clamped
// central differences of both frames, plain difference in time
FlowProblem flow_problem(const Image& f_i, const Image& f_j) {
    FlowProblem p;
    p.h = f_i.height();
    p.w = f_i.width();
    std::vector<double> a = to_gray255(f_i), b = to_gray255(f_j);
    const std::size_t n = a.size();
    p.ix.resize(n);
    p.iy.resize(n);
    p.it.resize(n);
    auto cd = [&](const std::vector<double>& g, int y, int x, int dy, int dx) {
        int y0 = std::max(0, y - dy), y1 = std::min(p.h - 1, y + dy);
        int x0 = std::max(0, x - dx), x1 = std::min(p.w - 1, x + dx);
        double span = dy != 0 ? y1 - y0 : x1 - x0;
        if (span == 0.0) return 0.0;
        return (g[static_cast<std::size_t>(y1) * p.w + x1] - g[static_cast<std::size_t>(y0) * p.w + x0]) / span;
    };
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * p.w + x;
            p.ix[i] = 0.5 * (cd(a, y, x, 0, 1) + cd(b, y, x, 0, 1));
            p.iy[i] = 0.5 * (cd(a, y, x, 1, 0) + cd(b, y, x, 1, 0));
            p.it[i] = b[i] - a[i];
        }
    return p;
}

struct Corner {
    double x = 0.0, y = 0.0;
    double response = 0.0;
};

std::vector<Corner> harris_corners(const Image& img) {
    const int h = img.height(), w = img.width();
    std::vector<double> g(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < img.channels(); ++c) acc += img.at(y, x, c);
            g[static_cast<std::size_t>(y) * w + x] = acc / img.channels();
        }

    auto at = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return g[static_cast<std::size_t>(y) * w + x];
    };

    Image products(h, w, 3); // xx, yy, xy
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            double dy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            products.at(y, x, 0) = static_cast<float>(dx * dx);
            products.at(y, x, 1) = static_cast<float>(dy * dy);
            products.at(y, x, 2) = static_cast<float>(dx * dy);
        }
    Image window = gaussian_blur(products, 1.5);

    std::vector<double> resp(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double xx = window.at(y, x, 0), yy = window.at(y, x, 1), xy = window.at(y, x, 2);
            resp[static_cast<std::size_t>(y) * w + x] =
                xx * yy - xy * xy - 0.04 * (xx + yy) * (xx + yy);
        }

    // every positive local maximum is a candidate; a threshold relative to
    // the strongest response would let one high-contrast feature mask the
    // rest of the frame
    auto r_at = [&](int y, int x) { return resp[static_cast<std::size_t>(y) * w + x]; };
    std::vector<Corner> peaks;
    const int border = 6;
    for (int y = border; y < h - border; ++y)
        for (int x = border; x < w - border; ++x) {
            double r = r_at(y, x);
            if (r <= 0.0) continue;
            bool is_peak = true;
            for (int dy = -1; dy <= 1 && is_peak; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    if (r_at(y + dy, x + dx) > r) {
                        is_peak = false;
                        break;
                    }
                }
            if (!is_peak) continue;

            // quadratic subpixel refinement on the response surface
            double gx = 0.5 * (r_at(y, x + 1) - r_at(y, x - 1));
            double gy = 0.5 * (r_at(y + 1, x) - r_at(y - 1, x));
            double hxx = r_at(y, x + 1) - 2 * r + r_at(y, x - 1);
            double hyy = r_at(y + 1, x) - 2 * r + r_at(y - 1, x);
            double hxy = 0.25 * (r_at(y + 1, x + 1) - r_at(y + 1, x - 1) - r_at(y - 1, x + 1) + r_at(y - 1, x - 1));
            double det = hxx * hyy - hxy * hxy;
            double ox = 0.0, oy = 0.0;
            if (std::abs(det) > 1e-12) {
                ox = -(hyy * gx - hxy * gy) / det;
                oy = -(hxx * gy - hxy * gx) / det;
                ox = std::clamp(ox, -0.5, 0.5);
                oy = std::clamp(oy, -0.5, 0.5);
            }
            peaks.push_back({x + ox, y + oy, r});
        }

    std::sort(peaks.begin(), peaks.end(), [](const Corner& a, const Corner& b) {
        if (a.response != b.response) return a.response > b.response;
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });

    // greedy spatial suppression keeps the strongest corner per 5 px cell
    std::vector<Corner> kept;
    for (const Corner& c : peaks) {
        bool clear = true;
        for (const Corner& k : kept) {
            double dx = c.x - k.x, dy = c.y - k.y;
            if (dx * dx + dy * dy < 25.0) {
                clear = false;
                break;
            }
        }
        if (clear) {
            kept.push_back(c);
            if (kept.size() >= 300) break;
        }
    }
    return kept;
}

constexpr int kPatch = 5; // 11×11 correlation patches

bool patch_stats(const std::vector<double>& g, int h, int w, int cy, int cx,
                 double& mean, double& sd) {
    if (cy < kPatch || cx < kPatch || cy >= h - kPatch || cx >= w - kPatch) return false;
    double acc = 0.0, acc2 = 0.0;
    for (int dy = -kPatch; dy <= kPatch; ++dy)
        for (int dx = -kPatch; dx <= kPatch; ++dx) {
            double v = g[static_cast<std::size_t>(cy + dy) * w + cx + dx];
            acc += v;
            acc2 += v * v;
        }
    const double n = (2 * kPatch + 1) * (2 * kPatch + 1);
    mean = acc / n;
    double var = acc2 / n - mean * mean;
    if (var < 1e-10) return false;
    sd = std::sqrt(var);
    return true;
}

double ncc(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
           int ay, int ax, int by, int bx, double am, double asd, double bm, double bsd) {
    double acc = 0.0;
    for (int dy = -kPatch; dy <= kPatch; ++dy)
        for (int dx = -kPatch; dx <= kPatch; ++dx)
            acc += (a[static_cast<std::size_t>(ay + dy) * w + ax + dx] - am) *
                   (b[static_cast<std::size_t>(by + dy) * w + bx + dx] - bm);
    const double n = (2 * kPatch + 1) * (2 * kPatch + 1);
    return acc / (n * asd * bsd);
}

struct Match {
    Vec2 p; // f_i
    Vec2 q; // f_j
};

// exact similarity through two correspondences, complex-ratio form
std::optional<SimilarityTransform> similarity_from_two(const Match& m1, const Match& m2) {
    double dpx = m2.p.x - m1.p.x, dpy = m2.p.y - m1.p.y;
    double dqx = m2.q.x - m1.q.x, dqy = m2.q.y - m1.q.y;
    double denom = dpx * dpx + dpy * dpy;
    if (denom < 1e-9) return std::nullopt;
    double a = (dqx * dpx + dqy * dpy) / denom;
    double b = (dqy * dpx - dqx * dpy) / denom;
    double scale = std::sqrt(a * a + b * b);
    if (scale < 1e-6) return std::nullopt;
    SimilarityTransform t{scale, std::atan2(b, a), 0.0, 0.0};
    Vec2 moved = t.apply(m1.p);
    t.tx = m1.q.x - moved.x;
    t.ty = m1.q.y - moved.y;
    return t;
}

std::optional<SimilarityTransform> fit_similarity(const std::vector<Match>& matches,
                                                  const std::vector<int>& idx) {
    double px = 0.0, py = 0.0, qx = 0.0, qy = 0.0;
    for (int i : idx) {
        px += matches[static_cast<std::size_t>(i)].p.x;
        py += matches[static_cast<std::size_t>(i)].p.y;
        qx += matches[static_cast<std::size_t>(i)].q.x;
        qy += matches[static_cast<std::size_t>(i)].q.y;
    }
    const double n = static_cast<double>(idx.size());
    px /= n;
    py /= n;
    qx /= n;
    qy /= n;
    double a = 0.0, b = 0.0, denom = 0.0;
    for (int i : idx) {
        const Match& m = matches[static_cast<std::size_t>(i)];
        double ppx = m.p.x - px, ppy = m.p.y - py;
        double qqx = m.q.x - qx, qqy = m.q.y - qy;
        a += ppx * qqx + ppy * qqy;
        b += ppx * qqy - ppy * qqx;
        denom += ppx * ppx + ppy * ppy;
    }
    if (denom < 1e-9) return std::nullopt;
    a /= denom;
    b /= denom;
    double scale = std::sqrt(a * a + b * b);
    if (scale < 1e-6) return std::nullopt;
    SimilarityTransform t{scale, std::atan2(b, a), 0.0, 0.0};
    Vec2 moved = t.apply({px, py});
    t.tx = qx - moved.x;
    t.ty = qy - moved.y;
    return t;
}

} // namespace

int feature_channel_count(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::rgb: return 3;
        case FeatureKind::frame_pair: return 6;
        case FeatureKind::frame_diff: return 6;
        case FeatureKind::flow_2d: return 5;
        case FeatureKind::flow_mag: return 4;
    }
    throw ShapeError("unknown feature kind");
}

int feature_motion_start(FeatureKind kind) {
    // frame_pair carries two appearance frames, so everything is contrast-
    // normalized; the rest append genuine motion channels after the RGB
    switch (kind) {
        case FeatureKind::rgb: return 3;
        case FeatureKind::frame_pair: return 6;
        case FeatureKind::frame_diff: return 3;
        case FeatureKind::flow_2d: return 3;
        case FeatureKind::flow_mag: return 3;
    }
    throw ShapeError("unknown feature kind");
}

Image frame_difference(const Image& f_i, const Image& f_j) {
    require_same_frames(f_i, f_j, "frame_difference");
    Image out(f_i.height(), f_i.width(), f_i.channels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = f_j.data()[i] - f_i.data()[i];
    return out;
}

FlowField estimate_flow(const Image& f_i, const Image& f_j, double alpha, int iters) {
    require_same_frames(f_i, f_j, "estimate_flow");
    if (!(alpha > 0.0)) throw ShapeError("estimate_flow: alpha must be positive");
    if (iters < 1) throw ShapeError("estimate_flow: iters must be >= 1");

    FlowProblem p = flow_problem(f_i, f_j);
    const int h = p.h, w = p.w;
    const double a2 = alpha * alpha;
    const std::size_t n = p.ix.size();
    std::vector<double> u(n, 0.0), v(n, 0.0), nu(n), nv(n);

    for (int iter = 0; iter < iters; ++iter) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                double su = 0.0, sv = 0.0;
                int np = 0;
                if (y > 0) { su += u[i - w]; sv += v[i - w]; ++np; }
                if (y < h - 1) { su += u[i + w]; sv += v[i + w]; ++np; }
                if (x > 0) { su += u[i - 1]; sv += v[i - 1]; ++np; }
                if (x < w - 1) { su += u[i + 1]; sv += v[i + 1]; ++np; }

                const double ix = p.ix[i], iy = p.iy[i], it = p.it[i];
                const double a11 = a2 * np + ix * ix;
                const double a22 = a2 * np + iy * iy;
                const double a12 = ix * iy;
                const double b1 = a2 * su - ix * it;
                const double b2 = a2 * sv - iy * it;
                const double det = a11 * a22 - a12 * a12;
                nu[i] = (a22 * b1 - a12 * b2) / det;
                nv[i] = (a11 * b2 - a12 * b1) / det;
            }
        u.swap(nu);
        v.swap(nv);
    }

    FlowField flow{h, w, std::vector<float>(n), std::vector<float>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        flow.u[i] = static_cast<float>(u[i]);
        flow.v[i] = static_cast<float>(v[i]);
    }
    return flow;
}

double flow_objective(const Image& f_i, const Image& f_j, double alpha, const FlowField& flow) {
    require_same_frames(f_i, f_j, "flow_objective");
    if (flow.height != f_i.height() || flow.width != f_i.width())
        throw ShapeError("flow_objective: flow extents do not match the frames");
    FlowProblem p = flow_problem(f_i, f_j);
    const int h = p.h, w = p.w;
    double data = 0.0, smooth = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            double r = p.ix[i] * flow.u[i] + p.iy[i] * flow.v[i] + p.it[i];
            data += r * r;
            if (x + 1 < w) {
                double du = flow.u[i + 1] - flow.u[i], dv = flow.v[i + 1] - flow.v[i];
                smooth += du * du + dv * dv;
            }
            if (y + 1 < h) {
                double du = flow.u[i + w] - flow.u[i], dv = flow.v[i + w] - flow.v[i];
                smooth += du * du + dv * dv;
            }
        }
    return data + alpha * alpha * smooth;
}

Image flow_magnitude(const FlowField& flow) {
    Image out(flow.height, flow.width, 1);
    for (std::size_t i = 0; i < flow.u.size(); ++i)
        out.data()[i] = std::hypot(flow.u[i], flow.v[i]);
    return out;
}

SimilarityTransform estimate_similarity(const Image& f_i, const Image& f_j) {
    require_same_frames(f_i, f_j, "estimate_similarity");
    const int h = f_i.height(), w = f_i.width();

    std::vector<Corner> ci = harris_corners(f_i);
    std::vector<Corner> cj = harris_corners(f_j);

    std::vector<double> gi = to_gray255(f_i), gj = to_gray255(f_j);
    struct Described {
        Vec2 pos;
        int iy, ix;
        double mean, sd;
    };
    auto describe = [&](const std::vector<Corner>& corners, const std::vector<double>& g) {
        std::vector<Described> out;
        for (const Corner& c : corners) {
            Described d;
            d.pos = {c.x, c.y};
            d.iy = static_cast<int>(std::lround(c.y));
            d.ix = static_cast<int>(std::lround(c.x));
            if (patch_stats(g, h, w, d.iy, d.ix, d.mean, d.sd)) out.push_back(d);
        }
        return out;
    };
    std::vector<Described> di = describe(ci, gi);
    std::vector<Described> dj = describe(cj, gj);

    const double search_radius2 = 40.0 * 40.0;
    std::vector<Match> matches;
    for (const Described& a : di) {
        double best = 0.5; // minimum acceptable correlation
        int best_j = -1;
        for (std::size_t j = 0; j < dj.size(); ++j) {
            double dx = dj[j].pos.x - a.pos.x, dy = dj[j].pos.y - a.pos.y;
            if (dx * dx + dy * dy > search_radius2) continue;
            double c = ncc(gi, gj, h, w, a.iy, a.ix, dj[j].iy, dj[j].ix, a.mean, a.sd, dj[j].mean, dj[j].sd);
            if (c > best) {
                best = c;
                best_j = static_cast<int>(j);
            }
        }
        if (best_j >= 0) matches.push_back({a.pos, dj[static_cast<std::size_t>(best_j)].pos});
    }
    if (matches.size() < 8)
        throw EstimationFailed("estimate_similarity: only " + std::to_string(matches.size()) +
                               " corner matches, need 8");

    // RANSAC over 2-point proposals; fixed seed keeps results reproducible
    Rng rng(0x6d706f7365ull);
    const double inlier2 = 2.0 * 2.0;
    std::vector<int> best_inliers;
    for (int round = 0; round < 1000; ++round) {
        int i1 = rng.uniform_int(0, static_cast<int>(matches.size()) - 1);
        int i2 = rng.uniform_int(0, static_cast<int>(matches.size()) - 1);
        if (i1 == i2) continue;
        auto t = similarity_from_two(matches[static_cast<std::size_t>(i1)], matches[static_cast<std::size_t>(i2)]);
        if (!t) continue;
        std::vector<int> inliers;
        for (std::size_t m = 0; m < matches.size(); ++m) {
            Vec2 moved = t->apply(matches[m].p);
            double dx = moved.x - matches[m].q.x, dy = moved.y - matches[m].q.y;
            if (dx * dx + dy * dy <= inlier2) inliers.push_back(static_cast<int>(m));
        }
        if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
    }
    if (best_inliers.size() < 4)
        throw EstimationFailed("estimate_similarity: consensus too small (" +
                               std::to_string(best_inliers.size()) + " inliers)");

    auto refit = fit_similarity(matches, best_inliers);
    if (!refit) throw EstimationFailed("estimate_similarity: degenerate inlier configuration");
    return *refit;
}

Image compensate_camera(const Image& f_i, const Image& f_j) {
    SimilarityTransform s = estimate_similarity(f_i, f_j);
    return warp(f_j, s.inverse());
}

std::optional<std::size_t> match_frame(const Image& target, const std::vector<Image>& candidates,
                                       double threshold, double k) {
    if (!(threshold > 0.0)) throw ShapeError("match_frame: threshold must be positive");
    for (std::size_t idx = 0; idx < candidates.size(); ++idx) {
        SimilarityTransform s;
        try {
            s = estimate_similarity(target, candidates[idx]);
        } catch (const EstimationFailed&) {
            continue;
        }
        WarpResult warped = warp_with_mask(candidates[idx], s.inverse());
        double acc = 0.0;
        std::size_t n = 0;
        for (int y = 0; y < target.height(); ++y)
            for (int x = 0; x < target.width(); ++x) {
                if (!warped.valid[static_cast<std::size_t>(y) * target.width() + x]) continue;
                for (int c = 0; c < target.channels(); ++c)
                    acc += std::abs(static_cast<double>(target.at(y, x, c)) - warped.image.at(y, x, c));
                n += static_cast<std::size_t>(target.channels());
            }
        if (n == 0) continue;
        double distance = 255.0 * acc / static_cast<double>(n);
        if (distance < threshold * k) return idx;
    }
    return std::nullopt;
}

Image make_feature(const MotionFeatureConfig& cfg, const Image& f_i, const Image& f_j) {
    if (cfg.kind != FeatureKind::rgb) {
        require_same_frames(f_i, f_j, "make_feature");
        if (cfg.delta == 0) throw ShapeError("make_feature: delta must be nonzero");
    }
    const int h = f_i.height(), w = f_i.width();

    Image second = f_j;
    if (cfg.kind != FeatureKind::rgb && cfg.compensate_camera)
        second = compensate_camera(f_i, f_j);

    Image out(h, w, feature_channel_count(cfg.kind));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < f_i.channels(); ++c) out.at(y, x, c) = f_i.at(y, x, c);

    switch (cfg.kind) {
        case FeatureKind::rgb:
            break;
        case FeatureKind::frame_pair:
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, 3 + c) = second.at(y, x, c);
            break;
        case FeatureKind::frame_diff: {
            Image d = frame_difference(f_i, second);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, 3 + c) = d.at(y, x, c);
            break;
        }
        case FeatureKind::flow_2d: {
            FlowField flow = estimate_flow(f_i, second);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    out.at(y, x, 3) = flow.u[static_cast<std::size_t>(y) * w + x];
                    out.at(y, x, 4) = flow.v[static_cast<std::size_t>(y) * w + x];
                }
            break;
        }
        case FeatureKind::flow_mag: {
            Image mag = flow_magnitude(estimate_flow(f_i, second));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(y, x, 3) = mag.at(y, x, 0);
            break;
        }
    }
    return out;
}

} // namespace mpose

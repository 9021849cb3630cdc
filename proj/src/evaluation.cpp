#include "mpose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace mpose {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// normalized errors of the usable samples; warns about exclusions
std::vector<double> normalized_errors(const std::vector<EvalSample>& samples, double torso_norm) {
    if (samples.empty()) throw DataError("evaluation set is empty");
    if (torso_norm <= 0.0) throw ShapeError("torso normalization must be positive");

    std::vector<double> errors;
    errors.reserve(samples.size());
    std::size_t excluded = 0;
    for (const EvalSample& s : samples) {
        if (s.torso_length <= 0.0) {
            ++excluded;
            continue;
        }
        errors.push_back(norm(s.pred - s.gt) * (torso_norm / s.torso_length));
    }
    if (excluded > 0)
        std::cerr << "warning: excluded " << excluded << " of " << samples.size()
                  << " samples with nonpositive torso length\n";
    if (errors.empty()) throw DataError("every evaluation sample had a nonpositive torso length");
    return errors;
}

double rate_at(const std::vector<double>& errors, double radius) {
    std::size_t hits = 0;
    for (double e : errors)
        if (e <= radius) ++hits;
    return static_cast<double>(hits) / static_cast<double>(errors.size());
}

// linear interpolation of the curve at radius r
double curve_value(const PckCurve& curve, double r) {
    const auto& xs = curve.radii;
    const auto& ys = curve.rates;
    auto hi = std::lower_bound(xs.begin(), xs.end(), r);
    if (hi == xs.end() || (hi == xs.begin() && *hi > r))
        throw ShapeError("radius outside the curve's range");
    if (*hi == r) return ys[static_cast<std::size_t>(hi - xs.begin())];
    const std::size_t i = static_cast<std::size_t>(hi - xs.begin());
    const double t = (r - xs[i - 1]) / (xs[i] - xs[i - 1]);
    return ys[i - 1] + t * (ys[i] - ys[i - 1]);
}

} // namespace

double detection_rate(const std::vector<EvalSample>& samples, double radius, double torso_norm) {
    if (radius < 0.0) throw ShapeError("detection radius must be nonnegative");
    return rate_at(normalized_errors(samples, torso_norm), radius);
}

PckCurve pck_curve(const std::vector<EvalSample>& samples, const std::string& label,
                   std::vector<double> radii, double torso_norm) {
    if (radii.empty())
        for (int r = 0; r <= 30; ++r) radii.push_back(static_cast<double>(r));
    for (std::size_t i = 0; i < radii.size(); ++i) {
        if (radii[i] < 0.0) throw ShapeError("detection radius must be nonnegative");
        if (i > 0 && radii[i] <= radii[i - 1])
            throw ShapeError("curve radii must be strictly increasing");
    }

    const std::vector<double> errors = normalized_errors(samples, torso_norm);
    PckCurve curve;
    curve.label = label;
    curve.radii = std::move(radii);
    curve.rates.reserve(curve.radii.size());
    for (double r : curve.radii) curve.rates.push_back(rate_at(errors, r));
    return curve;
}

double mean_precision(const PckCurve& curve, double r_lo, double r_hi) {
    if (curve.radii.size() != curve.rates.size() || curve.radii.size() < 2)
        throw ShapeError("curve needs at least two points");
    if (!(r_lo < r_hi)) throw ShapeError("integration window is empty");
    if (r_lo < curve.radii.front() || r_hi > curve.radii.back())
        throw ShapeError("integration window is outside the curve");

    // breakpoints: the window ends plus every curve radius inside it
    std::vector<double> xs = {r_lo};
    for (double r : curve.radii)
        if (r > r_lo && r < r_hi) xs.push_back(r);
    xs.push_back(r_hi);

    double area = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i)
        area += 0.5 * (curve_value(curve, xs[i - 1]) + curve_value(curve, xs[i])) *
                (xs[i] - xs[i - 1]);
    return area / (r_hi - r_lo);
}

void emit_results(const std::vector<PckCurve>& curves, const std::string& csv_path,
                  const std::string& svg_path) {
    if (curves.empty()) throw DataError("no curves to emit");
    const std::vector<double>& radii = curves.front().radii;
    if (radii.empty()) throw ShapeError("curves carry no points");
    for (const PckCurve& c : curves) {
        if (c.radii != radii) throw ShapeError("all curves must share the same radii");
        if (c.rates.size() != c.radii.size())
            throw ShapeError("curve '" + c.label + "' has mismatched rates");
    }

    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
    csv << "radius";
    for (const PckCurve& c : curves) csv << "," << c.label;
    csv << "\n";
    for (std::size_t i = 0; i < radii.size(); ++i) {
        csv << fmt(radii[i]);
        for (const PckCurve& c : curves) csv << "," << fmt(c.rates[i]);
        csv << "\n";
    }
    if (!csv) throw IoError("short write to '" + csv_path + "'");
    csv.close();

    // standalone SVG: axes, light radius/rate grid, one polyline per curve
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    const int width = 640, height = 480, margin = 56;
    const double plot_w = width - 2 * margin, plot_h = height - 2 * margin;
    const double r_min = radii.front(), r_max = radii.back();
    auto px = [&](double r) { return margin + (r - r_min) / (r_max - r_min) * plot_w; };
    auto py = [&](double rate) { return margin + (1.0 - rate) * plot_h; };

    std::ofstream svg(svg_path, std::ios::trunc);
    if (!svg) throw IoError("cannot open '" + svg_path + "' for writing");
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    for (int i = 0; i <= 4; ++i) {
        const double rate = i / 4.0;
        svg << "<line x1=\"" << margin << "\" y1=\"" << py(rate) << "\" x2=\"" << width - margin
            << "\" y2=\"" << py(rate) << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << margin - 8 << "\" y=\"" << py(rate) + 4
            << "\" text-anchor=\"end\" font-size=\"12\">" << rate << "</text>\n";
    }
    const double r_step = (r_max - r_min) > 10.0 ? 5.0 : 1.0;
    for (double r = r_min; r <= r_max + 1e-9; r += r_step) {
        svg << "<line x1=\"" << px(r) << "\" y1=\"" << margin << "\" x2=\"" << px(r) << "\" y2=\""
            << height - margin << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << px(r) << "\" y=\"" << height - margin + 16
            << "\" text-anchor=\"middle\" font-size=\"12\">" << r << "</text>\n";
    }
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">normalized radius (px)</text>\n";
    svg << "<text x=\"16\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " << height / 2
        << ")\">detection rate</text>\n";

    for (std::size_t c = 0; c < curves.size(); ++c) {
        const char* color = kColors[c % (sizeof kColors / sizeof kColors[0])];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < radii.size(); ++i) {
            if (i) svg << " ";
            svg << px(radii[i]) << "," << py(curves[c].rates[i]);
        }
        svg << "\"/>\n";
        const double ly = margin + 18.0 * static_cast<double>(c);
        svg << "<rect x=\"" << width - margin - 150 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\""
            << color << "\"/>\n";
        svg << "<text x=\"" << width - margin - 132 << "\" y=\"" << ly + 10
            << "\" font-size=\"12\">" << curves[c].label << "</text>\n";
    }
    svg << "</svg>\n";
    if (!svg) throw IoError("short write to '" + svg_path + "'");
}

} // namespace mpose

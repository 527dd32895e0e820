#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "error.hpp"

namespace widen::svg {

struct Series {
    std::string label;
    std::vector<double> x, y;
    bool step = false; // draw as a staircase (value holds until the next x)
};

struct Bars {
    std::string label;
    std::vector<double> values;
    std::vector<double> errors; // optional half-heights of error bars
};

struct Panel {
    std::string title;
    std::string x_label;
    std::string y_label;
    int width = 640;
    int height = 400;
};

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    return palette[i % (sizeof palette / sizeof palette[0])];
}

/// 1, 2 or 5 times a power of ten, giving at most ~6 intervals.
inline double tick_step(double span) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / 5.0;
    const double p = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * p >= raw) return m * p;
    return 10.0 * p;
}

inline std::string tick_label(double v, double step) {
    char buf[32];
    if (std::abs(v) < 1e-9 * step) v = 0.0;
    if (std::abs(v) >= 1e6) std::snprintf(buf, sizeof buf, "%.3gM", v / 1e6);
    else if (std::abs(v) >= 1e4) std::snprintf(buf, sizeof buf, "%.4gk", v / 1e3);
    else if (step >= 1.0) std::snprintf(buf, sizeof buf, "%.0f", v);
    else std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

namespace detail {

struct Frame {
    double x0, x1, y0, y1;
    double left = 70, right = 20, top = 40, bottom = 50;
    int w, h;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
    double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline void expand_range(double& lo, double& hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
        const double pad = std::max(1.0, std::abs(hi) * 0.1);
        lo -= pad;
        hi += pad;
    }
}

inline std::string header(const Panel& p) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(p.width) + "\" height=\"" +
                    std::to_string(p.height) + "\" viewBox=\"0 0 " + std::to_string(p.width) + " " +
                    std::to_string(p.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(p.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(p.title) +
         "</text>\n";
    return s;
}

inline std::string axes(const Panel& p, const Frame& f, bool x_ticks = true) {
    std::string s;
    const double xa = f.left, xb = f.w - f.right, ya = f.top, yb = f.h - f.bottom;
    s += "<g stroke=\"#444\" fill=\"none\">\n";
    s += "<line x1=\"" + num(xa) + "\" y1=\"" + num(yb) + "\" x2=\"" + num(xb) + "\" y2=\"" + num(yb) + "\"/>\n";
    s += "<line x1=\"" + num(xa) + "\" y1=\"" + num(ya) + "\" x2=\"" + num(xa) + "\" y2=\"" + num(yb) + "\"/>\n";
    s += "</g>\n<g fill=\"#222\">\n";
    const double ys = tick_step(f.y1 - f.y0);
    for (double v = std::ceil(f.y0 / ys - 1e-9) * ys; v <= f.y1 + 1e-9 * ys; v += ys) {
        s += "<text x=\"" + num(xa - 6) + "\" y=\"" + num(f.py(v) + 4) + "\" text-anchor=\"end\">" + tick_label(v, ys) +
             "</text>\n";
    }
    if (x_ticks) {
        const double xs = tick_step(f.x1 - f.x0);
        for (double v = std::ceil(f.x0 / xs - 1e-9) * xs; v <= f.x1 + 1e-9 * xs; v += xs) {
            s += "<text x=\"" + num(f.px(v)) + "\" y=\"" + num(yb + 16) + "\" text-anchor=\"middle\">" +
                 tick_label(v, xs) + "</text>\n";
        }
    }
    s += "<text x=\"" + num((xa + xb) / 2) + "\" y=\"" + num(f.h - 12.0) + "\" text-anchor=\"middle\">" +
         escape(p.x_label) + "</text>\n";
    s += "<text x=\"16\" y=\"" + num((ya + yb) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((ya + yb) / 2) + ")\">" + escape(p.y_label) + "</text>\n";
    s += "</g>\n";
    return s;
}

inline std::string legend(const std::vector<std::string>& labels, const Frame& f) {
    std::string s;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double y = f.top + 8 + 16.0 * static_cast<double>(i);
        const double x = f.w - f.right - 150;
        s += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 8) + "\" width=\"10\" height=\"10\" fill=\"" + color(i) + "\"/>\n";
        s += "<text x=\"" + num(x + 16) + "\" y=\"" + num(y + 1) + "\">" + escape(labels[i]) + "</text>\n";
    }
    return s;
}

} // namespace detail

/// Line chart. Output depends only on the inputs.
inline std::string line_chart(const Panel& p, const std::vector<Series>& series) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = 0.0, y1 = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ShapeError("svg: series '" + s.label + "' has unequal x/y lengths");
        for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    detail::expand_range(x0, x1);
    detail::expand_range(y0, y1);
    y1 += (y1 - y0) * 0.05;
    detail::Frame f{x0, x1, y0, y1};
    f.w = p.width;
    f.h = p.height;
    std::string out = detail::header(p) + detail::axes(p, f);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        labels.push_back(s.label);
        std::string pts;
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            if (s.step && k > 0) pts += num(f.px(s.x[k])) + "," + num(f.py(s.y[k - 1])) + " ";
            pts += num(f.px(s.x[k])) + "," + num(f.py(s.y[k])) + " ";
        }
        if (!pts.empty()) pts.pop_back();
        out += "<polyline fill=\"none\" stroke=\"" + std::string(color(i)) + "\" stroke-width=\"2\" points=\"" + pts +
               "\"/>\n";
    }
    out += detail::legend(labels, f);
    out += "</svg>\n";
    return out;
}

/// Grouped bar chart: one group per category, one bar per Bars entry.
inline std::string bar_chart(const Panel& p, const std::vector<std::string>& categories, const std::vector<Bars>& bars) {
    double y1 = 0.0;
    for (const auto& b : bars) {
        if (b.values.size() != categories.size())
            throw ShapeError("svg: bar series '" + b.label + "' does not match the category count");
        if (!b.errors.empty() && b.errors.size() != b.values.size())
            throw ShapeError("svg: bar series '" + b.label + "' has mismatched error bars");
        for (std::size_t k = 0; k < b.values.size(); ++k)
            y1 = std::max(y1, b.values[k] + (b.errors.empty() ? 0.0 : b.errors[k]));
    }
    double y0 = 0.0;
    detail::expand_range(y0, y1);
    y0 = 0.0;
    y1 *= 1.05;
    const double n = std::max<double>(1.0, static_cast<double>(categories.size()));
    detail::Frame f{0.0, n, y0, y1};
    f.w = p.width;
    f.h = p.height;
    std::string out = detail::header(p) + detail::axes(p, f, false);
    const double group = f.px(1.0) - f.px(0.0);
    const double bw = group * 0.8 / std::max<double>(1.0, static_cast<double>(bars.size()));
    out += "<g fill=\"#222\">\n";
    for (std::size_t c = 0; c < categories.size(); ++c) {
        out += "<text x=\"" + num(f.px(static_cast<double>(c) + 0.5)) + "\" y=\"" + num(f.h - f.bottom + 16) +
               "\" text-anchor=\"middle\">" + escape(categories[c]) + "</text>\n";
    }
    out += "</g>\n";
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        labels.push_back(bars[i].label);
        for (std::size_t c = 0; c < categories.size(); ++c) {
            const double x = f.px(static_cast<double>(c)) + group * 0.1 + bw * static_cast<double>(i);
            const double v = bars[i].values[c];
            out += "<rect x=\"" + num(x) + "\" y=\"" + num(f.py(v)) + "\" width=\"" + num(bw) + "\" height=\"" +
                   num(f.py(0.0) - f.py(v)) + "\" fill=\"" + color(i) + "\"/>\n";
            if (!bars[i].errors.empty()) {
                const double e = bars[i].errors[c], cx = x + bw / 2;
                out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(f.py(v - e)) + "\" x2=\"" + num(cx) + "\" y2=\"" +
                       num(f.py(v + e)) + "\" stroke=\"#000\"/>\n";
            }
        }
    }
    out += detail::legend(labels, f);
    out += "</svg>\n";
    return out;
}

} // namespace widen::svg

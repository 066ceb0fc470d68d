#pragma once
#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "clab/errors.hpp"

namespace clab {

// Minimal self-contained SVG line chart: one polyline over an x/y frame.
inline std::string svg_line_chart(const std::string& title, const std::vector<double>& xs,
                                  const std::vector<double>& ys) {
    if (xs.empty() || xs.size() != ys.size()) throw UsageError("svg_line_chart: need matching non-empty series");
    const double w = 640, h = 400, ml = 70, mr = 20, mt = 40, mb = 40;
    double x_lo = *std::min_element(xs.begin(), xs.end());
    double x_hi = *std::max_element(xs.begin(), xs.end());
    double y_lo = *std::min_element(ys.begin(), ys.end());
    double y_hi = *std::max_element(ys.begin(), ys.end());
    if (x_hi - x_lo < 1e-12) x_hi = x_lo + 1.0;
    if (y_hi - y_lo < 1e-12) y_hi = y_lo + 1.0;

    auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - y_lo) / (y_hi - y_lo) * (h - mt - mb); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    auto label = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
    s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + title +
         "</text>\n";
    s += "<line x1=\"" + num(ml) + "\" y1=\"" + num(h - mb) + "\" x2=\"" + num(w - mr) + "\" y2=\"" + num(h - mb) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" + num(h - mb) +
         "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(y_lo)) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + label(y_lo) + "</text>\n";
    s += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(y_hi)) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + label(y_hi) + "</text>\n";
    s += "<text x=\"" + num(px(x_lo)) + "\" y=\"" + num(h - mb + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + label(x_lo) + "</text>\n";
    s += "<text x=\"" + num(px(x_hi)) + "\" y=\"" + num(h - mb + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + label(x_hi) + "</text>\n";
    s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += " ";
        s += num(px(xs[i])) + "," + num(py(ys[i]));
    }
    s += "\"/>\n</svg>\n";
    return s;
}

}  // namespace clab

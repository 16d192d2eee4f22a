#pragma once

// Minimal deterministic SVG line and scatter plots. Output depends only on
// the data: fixed number formatting, no timestamps, no random ids.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace magps::svg {

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                               "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors;
}

inline std::string color(std::size_t k) { return palette()[k % palette().size()]; }

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::string label;
  std::string color = "#1f77b4";
  bool dashed = false;
  bool endpoints = false;  // circle at the start, square at the end
};

/// Shaded region between lo and hi.
struct Band {
  std::vector<double> x;
  std::vector<double> lo;
  std::vector<double> hi;
  std::string color = "#1f77b4";
};

struct Marker {
  double x = 0.0;
  double y = 0.0;
  std::string label;
  std::string color = "#000000";
  bool cross = true;  // cross or filled diamond
};

struct Panel {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
  std::vector<Band> bands;
  std::vector<Marker> markers;
  bool equal_aspect = false;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finalize() {
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

/// Roughly five round tick values inside [lo, hi].
inline std::vector<double> ticks(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push_back(v);
  return out;
}

}  // namespace detail

/// Panels laid out left to right in one drawing.
inline std::string render(const std::vector<Panel>& panels, const std::string& title = "",
                          int panel_width = 420, int panel_height = 360) {
  using detail::num;
  const int top = title.empty() ? 10 : 36;
  const int W = panel_width * static_cast<int>(panels.size());
  const int H = panel_height + top;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  if (!title.empty())
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::escape(title) << "</text>\n";

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double ox = static_cast<double>(p) * panel_width, oy = top;
    const double left = ox + 62, right = ox + panel_width - 14;
    const double upper = oy + 24, lower = oy + panel_height - 46;

    detail::Range xr, yr;
    for (const auto& s : panel.series) {
      for (double v : s.x) xr.add(v);
      for (double v : s.y) yr.add(v);
    }
    for (const auto& b : panel.bands) {
      for (double v : b.x) xr.add(v);
      for (double v : b.lo) yr.add(v);
      for (double v : b.hi) yr.add(v);
    }
    for (const auto& m : panel.markers) {
      xr.add(m.x);
      yr.add(m.y);
    }
    xr.finalize();
    yr.finalize();
    if (panel.equal_aspect) {
      // Same data units per pixel on both axes.
      const double sx = (xr.hi - xr.lo) / (right - left), sy = (yr.hi - yr.lo) / (lower - upper);
      const double s = std::max(sx, sy);
      const double cx = 0.5 * (xr.lo + xr.hi), cy = 0.5 * (yr.lo + yr.hi);
      xr.lo = cx - 0.5 * s * (right - left);
      xr.hi = cx + 0.5 * s * (right - left);
      yr.lo = cy - 0.5 * s * (lower - upper);
      yr.hi = cy + 0.5 * s * (lower - upper);
    }
    auto X = [&](double v) { return left + (v - xr.lo) / (xr.hi - xr.lo) * (right - left); };
    auto Y = [&](double v) { return lower - (v - yr.lo) / (yr.hi - yr.lo) * (lower - upper); };

    o << "<g>\n";
    o << "<text x=\"" << num(0.5 * (left + right)) << "\" y=\"" << num(oy + 16)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::escape(panel.title) << "</text>\n";
    o << "<rect x=\"" << num(left) << "\" y=\"" << num(upper) << "\" width=\"" << num(right - left)
      << "\" height=\"" << num(lower - upper) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (double t : detail::ticks(xr.lo, xr.hi)) {
      o << "<line x1=\"" << num(X(t)) << "\" y1=\"" << num(lower) << "\" x2=\"" << num(X(t))
        << "\" y2=\"" << num(lower + 4) << "\" stroke=\"#444\"/>";
      o << "<text x=\"" << num(X(t)) << "\" y=\"" << num(lower + 16) << "\" text-anchor=\"middle\">"
        << detail::tick(t) << "</text>\n";
    }
    for (double t : detail::ticks(yr.lo, yr.hi)) {
      o << "<line x1=\"" << num(left - 4) << "\" y1=\"" << num(Y(t)) << "\" x2=\"" << num(left)
        << "\" y2=\"" << num(Y(t)) << "\" stroke=\"#444\"/>";
      o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(Y(t) + 4) << "\" text-anchor=\"end\">"
        << detail::tick(t) << "</text>\n";
    }
    o << "<text x=\"" << num(0.5 * (left + right)) << "\" y=\"" << num(lower + 34)
      << "\" text-anchor=\"middle\">" << detail::escape(panel.xlabel) << "</text>\n";
    o << "<text transform=\"translate(" << num(ox + 14) << "," << num(0.5 * (upper + lower))
      << ") rotate(-90)\" text-anchor=\"middle\">" << detail::escape(panel.ylabel) << "</text>\n";

    for (const auto& b : panel.bands) {
      o << "<polygon fill=\"" << b.color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t k = 0; k < b.x.size(); ++k) o << num(X(b.x[k])) << "," << num(Y(b.hi[k])) << " ";
      for (std::size_t k = b.x.size(); k-- > 0;) o << num(X(b.x[k])) << "," << num(Y(b.lo[k])) << " ";
      o << "\"/>\n";
    }
    for (const auto& s : panel.series) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
      for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k)
        if (std::isfinite(s.x[k]) && std::isfinite(s.y[k])) o << num(X(s.x[k])) << "," << num(Y(s.y[k])) << " ";
      o << "\"/>\n";
      if (s.endpoints && !s.x.empty() && std::isfinite(s.x.back()) && std::isfinite(s.y.back())) {
        o << "<circle cx=\"" << num(X(s.x.front())) << "\" cy=\"" << num(Y(s.y.front()))
          << "\" r=\"3.5\" fill=\"" << s.color << "\"/>";
        o << "<rect x=\"" << num(X(s.x.back()) - 3.5) << "\" y=\"" << num(Y(s.y.back()) - 3.5)
          << "\" width=\"7\" height=\"7\" fill=\"" << s.color << "\"/>\n";
      }
    }
    for (const auto& m : panel.markers) {
      const double x = X(m.x), y = Y(m.y);
      if (m.cross) {
        o << "<path d=\"M" << num(x - 5) << "," << num(y - 5) << "L" << num(x + 5) << ","
          << num(y + 5) << "M" << num(x - 5) << "," << num(y + 5) << "L" << num(x + 5) << ","
          << num(y - 5) << "\" stroke=\"" << m.color << "\" stroke-width=\"2\"/>";
      } else {
        o << "<path d=\"M" << num(x) << "," << num(y - 6) << "L" << num(x + 6) << "," << num(y)
          << "L" << num(x) << "," << num(y + 6) << "L" << num(x - 6) << "," << num(y)
          << "Z\" fill=\"" << m.color << "\"/>";
      }
      o << "<text x=\"" << num(x + 8) << "\" y=\"" << num(y - 6) << "\">" << detail::escape(m.label)
        << "</text>\n";
    }

    // Legend in the upper right corner.
    double ly = upper + 14;
    for (const auto& s : panel.series) {
      if (s.label.empty()) continue;
      o << "<line x1=\"" << num(right - 110) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(right - 92)
        << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>";
      o << "<text x=\"" << num(right - 88) << "\" y=\"" << num(ly) << "\">" << detail::escape(s.label)
        << "</text>\n";
      ly += 14;
    }
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace magps::svg

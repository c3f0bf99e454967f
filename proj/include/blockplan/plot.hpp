#pragma once

// Self-contained SVG line charts for evaluation curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace blockplan::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  if (std::fabs(v) >= 1000.0) std::snprintf(buf, sizeof buf, "%.0fK", v / 1000.0);
  else std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

}  // namespace detail

/// Writes a 640x400 chart with axes, five ticks per axis and a legend.
inline void write_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 180, T = 40, B = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  using detail::num;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << detail::escape(title) << "</text>\n";
  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    out << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << H - B << "\" x2=\"" << num(px(xv)) << "\" y2=\"" << H - B + 5
        << "\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << detail::label(xv)
        << "</text>\n";
    out << "<line x1=\"" << L - 5 << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << W - R << "\" y2=\"" << num(py(yv))
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << L - 8 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << detail::label(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << detail::escape(x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << num((T + H - B) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << detail::escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << (i ? " " : "") << num(px(s.x[i])) << "," << num(py(s.y[i]));
    out << "\"/>\n";
    const double ly = T + 14 + 20.0 * static_cast<double>(k);
    out << "<line x1=\"" << W - R + 12 << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << W - R + 36 << "\" y2=\""
        << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 42 << "\" y=\"" << num(ly) << "\">" << detail::escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace blockplan::plot

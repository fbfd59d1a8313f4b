#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hnndecon::svg {

struct Axis {
  std::string label;
  bool log = false;
};

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::vector<double> lo, hi;  // optional shaded band, same length as y
};

struct Bar {
  std::string label;
  double value = 0.0;
  double err = 0.0;  // symmetric error bar in data units (0 = none)
};

namespace detail {

inline constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % 8];
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Maps data values on one axis to pixels; log axes drop non-positive values.
struct Scale {
  bool log = false;
  double lo = 0, hi = 1, p0 = 0, p1 = 1;

  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0); }
  double t(double v) const { return log ? std::log10(v) : v; }
  double operator()(double v) const { return p0 + (t(v) - lo) / (hi - lo) * (p1 - p0); }

  void fit(const std::vector<double>& values) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (double v : values)
      if (usable(v)) {
        lo = std::min(lo, t(v));
        hi = std::max(hi, t(v));
      }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    if (log) {
      lo = std::floor(lo);
      hi = std::ceil(hi);
    } else {
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    }
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      const int step = std::max(1, static_cast<int>((hi - lo) / 6));
      for (double e = lo; e <= hi + 1e-9; e += step) out.push_back(std::pow(10.0, e));
    } else {
      for (int k = 0; k <= 5; ++k) out.push_back(lo + (hi - lo) * k / 5.0);
    }
    return out;
  }
};

inline std::string open(const std::string& title) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n";
  return o.str();
}

inline std::string frame(const Scale& sx, const Scale& sy, const Axis& ax, const Axis& ay) {
  std::ostringstream o;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  o << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double v : sx.ticks()) {
    const double px = sx(v);
    o << "<line x1=\"" << px << "\" y1=\"" << y0 << "\" x2=\"" << px << "\" y2=\"" << y0 + 4 << "\" stroke=\"black\"/>"
      << "<text x=\"" << px << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << num(v) << "</text>\n";
  }
  for (double v : sy.ticks()) {
    const double py = sy(v);
    o << "<line x1=\"" << x0 - 4 << "\" y1=\"" << py << "\" x2=\"" << x0 << "\" y2=\"" << py << "\" stroke=\"black\"/>"
      << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << escape(ax.label)
    << "</text>\n"
    << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (y0 + y1) / 2 << ")\">" << escape(ay.label) << "</text>\n";
  return o.str();
}

inline std::string legend(const std::vector<std::string>& labels) {
  std::ostringstream o;
  const double x = kWidth - kRight + 12;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = kTop + 14 + 16.0 * static_cast<double>(i);
    o << "<rect x=\"" << x << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\"" << color(i) << "\"/>"
      << "<text x=\"" << x + 14 << "\" y=\"" << y + 1 << "\">" << escape(labels[i]) << "</text>\n";
  }
  return o.str();
}

inline std::pair<Scale, Scale> scales(const std::vector<Series>& series, const Axis& ax, const Axis& ay) {
  Scale sx{ax.log}, sy{ay.log};
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
    ys.insert(ys.end(), s.lo.begin(), s.lo.end());
    ys.insert(ys.end(), s.hi.begin(), s.hi.end());
  }
  sx.fit(xs);
  sy.fit(ys);
  sx.p0 = kLeft, sx.p1 = kWidth - kRight;
  sy.p0 = kHeight - kBottom, sy.p1 = kTop;
  return {sx, sy};
}

inline std::vector<std::string> labels_of(const std::vector<Series>& series) {
  std::vector<std::string> out;
  for (const auto& s : series) out.push_back(s.label);
  return out;
}

}  // namespace detail

inline std::string line_plot(const std::string& title, const Axis& ax, const Axis& ay, const std::vector<Series>& series) {
  const auto [sx, sy] = detail::scales(series, ax, ay);
  std::ostringstream o;
  o << detail::open(title) << detail::frame(sx, sy, ax, ay);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.lo.size() == s.y.size() && s.hi.size() == s.y.size() && !s.y.empty()) {
      std::ostringstream band;
      for (std::size_t k = 0; k < s.x.size(); ++k)
        if (sx.usable(s.x[k]) && sy.usable(s.hi[k])) band << sx(s.x[k]) << ',' << sy(s.hi[k]) << ' ';
      for (std::size_t k = s.x.size(); k-- > 0;)
        if (sx.usable(s.x[k]) && sy.usable(s.lo[k])) band << sx(s.x[k]) << ',' << sy(s.lo[k]) << ' ';
      o << "<polygon points=\"" << band.str() << "\" fill=\"" << detail::color(i) << "\" fill-opacity=\"0.2\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << detail::color(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k)
      if (sx.usable(s.x[k]) && sy.usable(s.y[k])) o << sx(s.x[k]) << ',' << sy(s.y[k]) << ' ';
    o << "\"/>\n";
  }
  o << detail::legend(detail::labels_of(series)) << "</svg>\n";
  return o.str();
}

/// Scatter plot; `diagonal` draws the line y = x.
inline std::string scatter_plot(const std::string& title, const Axis& ax, const Axis& ay,
                                const std::vector<Series>& series, bool diagonal = false) {
  auto [sx, sy] = detail::scales(series, ax, ay);
  if (diagonal && ax.log == ay.log) {
    sx.lo = sy.lo = std::min(sx.lo, sy.lo);
    sx.hi = sy.hi = std::max(sx.hi, sy.hi);
  }
  std::ostringstream o;
  o << detail::open(title) << detail::frame(sx, sy, ax, ay);
  if (diagonal && ax.log == ay.log) {
    o << "<line x1=\"" << sx.p0 << "\" y1=\"" << sy.p0 << "\" x2=\"" << sx.p1 << "\" y2=\"" << sy.p1
      << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i)
    for (std::size_t k = 0; k < series[i].x.size() && k < series[i].y.size(); ++k)
      if (sx.usable(series[i].x[k]) && sy.usable(series[i].y[k]))
        o << "<circle cx=\"" << sx(series[i].x[k]) << "\" cy=\"" << sy(series[i].y[k]) << "\" r=\"3.5\" fill=\""
          << detail::color(i) << "\" fill-opacity=\"0.8\"/>\n";
  o << detail::legend(detail::labels_of(series)) << "</svg>\n";
  return o.str();
}

inline std::string bar_chart(const std::string& title, const Axis& ay, const std::vector<Bar>& bars) {
  detail::Scale sy{ay.log};
  std::vector<double> ys;
  for (const auto& b : bars) {
    ys.push_back(b.value);
    if (b.err > 0) {
      ys.push_back(b.value + b.err);
      if (b.value - b.err > 0 || !ay.log) ys.push_back(b.value - b.err);
    }
  }
  sy.fit(ys);
  sy.p0 = detail::kHeight - detail::kBottom, sy.p1 = detail::kTop;
  detail::Scale sx{false, 0, static_cast<double>(std::max<std::size_t>(bars.size(), 1)), detail::kLeft,
                   detail::kWidth - detail::kRight};
  std::ostringstream o;
  o << detail::open(title);
  const double x0 = detail::kLeft, x1 = detail::kWidth - detail::kRight, y0 = sy.p0;
  o << "<rect x=\"" << x0 << "\" y=\"" << sy.p1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - sy.p1
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double v : sy.ticks())
    o << "<text x=\"" << x0 - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\">" << detail::num(v) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (y0 + sy.p1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (y0 + sy.p1) / 2 << ")\">" << detail::escape(ay.label) << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double left = sx(static_cast<double>(i) + 0.15), right = sx(static_cast<double>(i) + 0.85);
    const double top = sy.usable(b.value) ? sy(b.value) : y0;
    o << "<rect x=\"" << left << "\" y=\"" << std::min(top, y0) << "\" width=\"" << right - left << "\" height=\""
      << std::abs(y0 - top) << "\" fill=\"" << detail::color(i) << "\"/>\n";
    if (b.err > 0) {
      const double mid = (left + right) / 2;
      const double lo = sy.usable(b.value - b.err) ? sy(b.value - b.err) : y0;
      o << "<line x1=\"" << mid << "\" y1=\"" << lo << "\" x2=\"" << mid << "\" y2=\"" << sy(b.value + b.err)
        << "\" stroke=\"black\"/>\n";
    }
    o << "<text x=\"" << (left + right) / 2 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
      << detail::escape(b.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_svg(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace hnndecon::svg

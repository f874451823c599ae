#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sflex::plot {

struct Pt {
  double x = 0, y = 0;
};

// Minimal static scatter: gray underlay series, highlighted subject series,
// linear axes with four labeled ticks. Self-contained SVG, no dependencies.
inline void write_scatter_svg(const std::string& path, const std::string& title,
                              const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Pt>& underlay, const std::vector<Pt>& subject) {
  const int W = 640, H = 440;
  const double ml = 70, mr = 25, mt = 45, mb = 55;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto grow = [&](const std::vector<Pt>& v) {
    for (const Pt& p : v) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  };
  grow(underlay);
  grow(subject);
  if (xmin > xmax) throw std::invalid_argument("scatter needs at least one point");
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double p = span > 0 ? 0.08 * span : std::max(0.1, std::abs(hi) * 0.1);
    lo -= p;
    hi += p;
  };
  pad(xmin, xmax);
  pad(ymin, ymax);

  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto sy = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
    << "' viewBox='0 0 " << W << " " << H << "'>\n"
    << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n"
    << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15' "
       "font-family='sans-serif'>"
    << title << "</text>\n";

  for (int i = 0; i <= 3; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 3.0;
    const double yv = ymin + (ymax - ymin) * i / 3.0;
    const double px = sx(xv), py = sy(yv);
    f << "<line x1='" << px << "' y1='" << mt << "' x2='" << px << "' y2='" << H - mb
      << "' stroke='#e0e0e0'/>\n"
      << "<line x1='" << ml << "' y1='" << py << "' x2='" << W - mr << "' y2='" << py
      << "' stroke='#e0e0e0'/>\n"
      << "<text x='" << px << "' y='" << H - mb + 18
      << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << fmt(xv)
      << "</text>\n"
      << "<text x='" << ml - 8 << "' y='" << py + 4
      << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << fmt(yv)
      << "</text>\n";
  }
  f << "<rect x='" << ml << "' y='" << mt << "' width='" << W - ml - mr << "' height='"
    << H - mt - mb << "' fill='none' stroke='#444'/>\n"
    << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
    << "' text-anchor='middle' font-size='13' font-family='sans-serif'>" << xlabel
    << "</text>\n"
    << "<text x='18' y='" << (mt + H - mb) / 2
    << "' text-anchor='middle' font-size='13' font-family='sans-serif' transform='rotate(-90 18 "
    << (mt + H - mb) / 2 << ")'>" << ylabel << "</text>\n";

  for (const Pt& p : underlay)
    f << "<circle cx='" << sx(p.x) << "' cy='" << sy(p.y)
      << "' r='3.5' fill='#9aa7b0' fill-opacity='0.75'/>\n";
  for (const Pt& p : subject)
    f << "<circle cx='" << sx(p.x) << "' cy='" << sy(p.y)
      << "' r='5.5' fill='#d62728' stroke='#7a1010'/>\n";
  f << "</svg>\n";
}

}  // namespace sflex::plot

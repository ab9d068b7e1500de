#include "fff/boundaries.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "fff/error.hpp"

namespace fff {

namespace {

constexpr double kAreaEps = 1e-14;

double side(const Point2& p, double a1, double a2, double c) { return a1 * p[0] + a2 * p[1] + c; }

}  // namespace

Point2 LeafRaster::pixel_center(const BoundaryDomain& d, std::size_t resolution, std::size_t row,
                                std::size_t col) {
  const double h = (d.hi - d.lo) / static_cast<double>(resolution);
  return {d.lo + (static_cast<double>(col) + 0.5) * h, d.hi - (static_cast<double>(row) + 0.5) * h};
}

Polygon clip_half_plane(const Polygon& poly, double a1, double a2, double c, bool keep_nonneg) {
  Polygon out;
  const auto inside = [&](const Point2& p) {
    const double s = side(p, a1, a2, c);
    return keep_nonneg ? s >= 0.0 : s < 0.0;
  };
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& cur = poly[i];
    const Point2& nxt = poly[(i + 1) % poly.size()];
    const bool ci = inside(cur), ni = inside(nxt);
    if (ci) out.push_back(cur);
    if (ci != ni) {
      const double sc = side(cur, a1, a2, c), sn = side(nxt, a1, a2, c);
      const double t = sc / (sc - sn);
      out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
    }
  }
  return out;
}

double polygon_area(const Polygon& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % poly.size()];
    s += a[0] * b[1] - a[1] * b[0];
  }
  return 0.5 * std::abs(s);
}

namespace {

// Intersection of the line with a convex polygon, as two points or empty.
Polygon line_in_polygon(const Polygon& poly, double a1, double a2, double c) {
  Polygon pts;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    const double sp = side(p, a1, a2, c), sq = side(q, a1, a2, c);
    if (sp == 0.0) pts.push_back(p);
    if ((sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0)) {
      const double t = sp / (sp - sq);
      pts.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
    }
  }
  if (pts.size() < 2) return {};
  // Keep the two extreme points along the line direction.
  const Point2 dir{-a2, a1};
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double t = pts[i][0] * dir[0] + pts[i][1] * dir[1];
    if (t < pts[lo][0] * dir[0] + pts[lo][1] * dir[1]) lo = i;
    if (t > pts[hi][0] * dir[0] + pts[hi][1] * dir[1]) hi = i;
  }
  if (lo == hi) return {};
  return {pts[lo], pts[hi]};
}

}  // namespace

BoundaryExport export_boundaries(const ForestParams& params, std::size_t resolution,
                                 const BoundaryDomain& domain) {
  params.validate();
  if (params.d_in != 2)
    throw DimensionError("export_boundaries: layer has d_in = " + std::to_string(params.d_in) +
                         ", boundaries need d_in = 2");
  if (resolution == 0) throw std::invalid_argument("export_boundaries: resolution must be positive");
  const std::size_t nodes = params.nodes(), depth = params.depth;
  BoundaryExport out;
  out.leaf_regions.assign(params.trees, std::vector<Polygon>(params.leaves()));
  const Polygon square{{domain.lo, domain.lo},
                       {domain.hi, domain.lo},
                       {domain.hi, domain.hi},
                       {domain.lo, domain.hi}};
  for (std::size_t p = 0; p < params.trees; ++p) {
    std::vector<Polygon> region(nodes);
    region[0] = square;
    for (std::size_t n = 0; n < nodes; ++n) {
      if (region[n].size() < 3 || polygon_area(region[n]) <= kAreaEps) continue;
      const std::size_t row = p * nodes + n;
      // z = w·(s·x + t) + b in data coordinates.
      BoundarySegment seg;
      seg.tree = p;
      seg.level = node_level(n);
      seg.slot = n - (node_index(seg.level, 0));
      seg.w1 = domain.scale * params.w_in(row, 0);
      seg.w2 = domain.scale * params.w_in(row, 1);
      seg.b = params.b_in(p, n) + domain.shift * (params.w_in(row, 0) + params.w_in(row, 1));
      seg.region = region[n];
      seg.segment = line_in_polygon(region[n], seg.w1, seg.w2, seg.b);
      if (seg.level < depth) {
        region[2 * n + 1] = clip_half_plane(region[n], seg.w1, seg.w2, seg.b, false);
        region[2 * n + 2] = clip_half_plane(region[n], seg.w1, seg.w2, seg.b, true);
      } else {
        out.leaf_regions[p][seg.slot] = region[n];
      }
      out.segments.push_back(std::move(seg));
    }
  }

  auto& r = out.raster;
  r.resolution = resolution;
  r.trees = params.trees;
  r.leaf.resize(params.trees * resolution * resolution);
  Matrix pts(resolution * resolution, 2);
  for (std::size_t row = 0; row < resolution; ++row)
    for (std::size_t col = 0; col < resolution; ++col) {
      const Point2 c = LeafRaster::pixel_center(domain, resolution, row, col);
      pts(row * resolution + col, 0) = domain.scale * c[0] + domain.shift;
      pts(row * resolution + col, 1) = domain.scale * c[1] + domain.shift;
    }
  const RouteMask mask = compute_mask(all_logits(params, pts), params.trees, depth);
  for (std::size_t i = 0; i < pts.rows(); ++i)
    for (std::size_t p = 0; p < params.trees; ++p)
      r.leaf[p * resolution * resolution + i] = static_cast<std::uint32_t>(mask.leaf(i, p));
  return out;
}

void write_boundaries_csv(std::ostream& out, const BoundaryExport& e) {
  out << "tree,level,slot,w1,w2,b,clip_poly\n";
  out.precision(17);
  for (const auto& s : e.segments) {
    out << s.tree << ',' << s.level << ',' << s.slot << ',' << s.w1 << ',' << s.w2 << ',' << s.b
        << ',';
    for (std::size_t i = 0; i < s.region.size(); ++i)
      out << (i ? ";" : "") << s.region[i][0] << ' ' << s.region[i][1];
    out << '\n';
  }
}

void write_raster_pgm(std::ostream& out, const LeafRaster& raster, std::size_t depth) {
  const std::size_t maxval = std::max<std::size_t>(1, leaves_per_tree(depth) - 1);
  out << "P2\n" << raster.resolution << ' ' << raster.trees * raster.resolution << '\n'
      << maxval << '\n';
  for (std::size_t row = 0; row < raster.trees * raster.resolution; ++row) {
    for (std::size_t col = 0; col < raster.resolution; ++col)
      out << (col ? " " : "") << raster.leaf[row * raster.resolution + col];
    out << '\n';
  }
}

void write_palette_json(std::ostream& out, std::size_t depth) {
  const std::size_t leaves = leaves_per_tree(depth);
  nlohmann::json palette = nlohmann::json::object();
  for (std::size_t k = 0; k < leaves; ++k) {
    // Evenly spaced hues at full saturation.
    const double h = 6.0 * static_cast<double>(k) / static_cast<double>(leaves);
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double rgb[3] = {0, 0, 0};
    const int sector = static_cast<int>(h);
    const int hi[6][3] = {{0, 1, 2}, {1, 0, 2}, {1, 2, 0}, {2, 1, 0}, {2, 0, 1}, {0, 2, 1}};
    rgb[hi[sector][0]] = 1.0;
    rgb[hi[sector][1]] = x;
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(rgb[0] * 255)),
                  static_cast<int>(std::lround(rgb[1] * 255)),
                  static_cast<int>(std::lround(rgb[2] * 255)));
    palette[std::to_string(k)] = buf;
  }
  nlohmann::json j{{"depth", depth},
                   {"maxval", std::max<std::size_t>(1, leaves - 1)},
                   {"palette", palette}};
  out << j.dump(1) << '\n';
}

}  // namespace fff

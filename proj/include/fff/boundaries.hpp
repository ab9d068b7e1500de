#pragma once

// Routing-induced partitions of a 2-D input space: per-node split lines
// clipped to the region in which the node is reachable, and a leaf-id raster.

#include <array>
#include <iosfwd>
#include <vector>

#include "fff/forest.hpp"

namespace fff {

using Point2 = std::array<double, 2>;
using Polygon = std::vector<Point2>;

/// Axis-aligned square on which regions are clipped, plus the affine map
/// u = scale·x + shift (applied to both coordinates) that the model sees.
struct BoundaryDomain {
  double lo = 0.0, hi = 1.0;
  double scale = 1.0, shift = 0.0;
};

struct BoundarySegment {
  std::size_t tree = 0, level = 0, slot = 0;
  double w1 = 0.0, w2 = 0.0, b = 0.0;  ///< w·x + b = 0 in data coordinates
  Polygon region;   ///< convex region of the domain in which the node is visited
  Polygon segment;  ///< the line clipped to the region: two points, or empty
};

struct LeafRaster {
  std::size_t resolution = 0;  ///< pixels per side of each tree's panel
  std::size_t trees = 0;
  std::vector<std::uint32_t> leaf;  ///< (trees·resolution) × resolution, trees stacked vertically

  std::uint32_t at(std::size_t tree, std::size_t row, std::size_t col) const {
    return leaf[(tree * resolution + row) * resolution + col];
  }
  /// Data-space centre of a pixel; row 0 is the top (largest x₂).
  static Point2 pixel_center(const BoundaryDomain& d, std::size_t resolution, std::size_t row,
                             std::size_t col);
};

struct BoundaryExport {
  std::vector<BoundarySegment> segments;
  /// Leaf regions per tree, indexed by leaf id; empty when unreachable.
  std::vector<std::vector<Polygon>> leaf_regions;
  LeafRaster raster;
};

/// Requires d_in = 2.
BoundaryExport export_boundaries(const ForestParams& params, std::size_t resolution,
                                 const BoundaryDomain& domain = {});

/// Keeps the part of a convex polygon where a·x + c >= 0 (keep_nonneg) or < 0.
Polygon clip_half_plane(const Polygon& poly, double a1, double a2, double c, bool keep_nonneg);
double polygon_area(const Polygon& poly);

/// CSV "tree,level,slot,w1,w2,b,clip_poly"; clip_poly is "x y;x y;...".
void write_boundaries_csv(std::ostream& out, const BoundaryExport& e);
/// Plain PGM (P2), gray level = leaf id.
void write_raster_pgm(std::ostream& out, const LeafRaster& raster, std::size_t depth);
/// JSON {"depth", "maxval", "palette": {"<leaf id>": "#rrggbb", ...}}.
void write_palette_json(std::ostream& out, std::size_t depth);

}  // namespace fff

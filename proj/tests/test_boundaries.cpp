#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fff/boundaries.hpp"
#include "fff/error.hpp"

using namespace fff;

namespace {

bool convex(const Polygon& poly) {
  int sign = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2 &a = poly[i], &b = poly[(i + 1) % poly.size()], &c = poly[(i + 2) % poly.size()];
    const double cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
    if (std::abs(cross) < 1e-12) continue;
    const int s = cross > 0 ? 1 : -1;
    if (sign && s != sign) return false;
    sign = s;
  }
  return true;
}

// Leaf reached by a data-space point using only the exported half-planes.
std::size_t walk_segments(const BoundaryExport& e, std::size_t tree, std::size_t depth,
                          const Point2& pt) {
  std::size_t level = 0, slot = 0;
  while (true) {
    const BoundarySegment* seg = nullptr;
    for (const auto& s : e.segments)
      if (s.tree == tree && s.level == level && s.slot == slot) seg = &s;
    if (!seg) return SIZE_MAX;
    if (level == depth) return slot;
    const bool high = seg->w1 * pt[0] + seg->w2 * pt[1] + seg->b >= 0;
    slot = 2 * slot + (high ? 1 : 0);
    ++level;
  }
}

}  // namespace

TEST(ClipHalfPlane, UnitSquareCuts) {
  const Polygon sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_NEAR(polygon_area(clip_half_plane(sq, 1, 0, -0.25, true)), 0.75, 1e-15);
  EXPECT_NEAR(polygon_area(clip_half_plane(sq, 1, 0, -0.25, false)), 0.25, 1e-15);
  EXPECT_NEAR(polygon_area(clip_half_plane(sq, 1, 1, -1, true)), 0.5, 1e-15);
  EXPECT_TRUE(clip_half_plane(sq, 1, 0, -2, true).empty());
}

TEST(Boundaries, DepthZeroGivesOneLinePerTree) {
  Rng rng(1);
  const ForestParams f = init_forest(rng, 5, 0, 2, 1, Variant::PreGelu);
  const BoundaryExport e = export_boundaries(f, 8);
  ASSERT_EQ(e.segments.size(), 5u);
  for (std::size_t p = 0; p < 5; ++p) {
    const auto& s = e.segments[p];
    EXPECT_EQ(s.tree, p);
    EXPECT_EQ(s.level, 0u);
    EXPECT_NEAR(polygon_area(s.region), 1.0, 1e-15);
    for (const auto& pt : s.segment) EXPECT_NEAR(s.w1 * pt[0] + s.w2 * pt[1] + s.b, 0.0, 1e-12);
  }
  for (auto v : e.raster.leaf) EXPECT_EQ(v, 0u);
}

TEST(Boundaries, RegionsPartitionTheDomain) {
  Rng rng(2);
  const ForestParams f = init_forest(rng, 3, 4, 2, 1, Variant::PreGelu);
  const BoundaryDomain dom{0.0, 1.0, 2.0, -1.0};
  const BoundaryExport e = export_boundaries(f, 16, dom);
  for (std::size_t p = 0; p < 3; ++p) {
    double area = 0;
    std::size_t nonempty = 0;
    for (const auto& poly : e.leaf_regions[p]) {
      EXPECT_TRUE(convex(poly));
      area += polygon_area(poly);
      nonempty += !poly.empty();
    }
    EXPECT_NEAR(area, 1.0, 1e-12);
    EXPECT_GE(nonempty, 1u);
    EXPECT_LE(nonempty, 16u);
    std::size_t segs = 0;
    for (const auto& s : e.segments) segs += s.tree == p;
    EXPECT_LE(segs, 31u);
  }
  for (const auto& s : e.segments) EXPECT_TRUE(convex(s.region));
}

TEST(Boundaries, RasterMatchesIndependentHalfPlaneWalk) {
  Rng rng(3);
  for (std::size_t depth : {1u, 3u, 5u}) {
    const ForestParams f = init_forest(rng, 2, depth, 2, 1, Variant::PostGelu);
    const BoundaryDomain dom{0.0, 1.0, 2.0, -1.0};
    const std::size_t res = 24;
    const BoundaryExport e = export_boundaries(f, res, dom);
    std::size_t mismatches = 0;
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t row = 0; row < res; ++row)
        for (std::size_t col = 0; col < res; ++col) {
          const Point2 c = LeafRaster::pixel_center(dom, res, row, col);
          mismatches += walk_segments(e, p, depth, c) != e.raster.at(p, row, col);
        }
    // Pixels within rounding of a split line may disagree; none do in practice.
    EXPECT_EQ(mismatches, 0u) << "depth " << depth;
  }
}

TEST(Boundaries, PixelCentreOrientation) {
  const BoundaryDomain d;
  const Point2 top_left = LeafRaster::pixel_center(d, 4, 0, 0);
  EXPECT_DOUBLE_EQ(top_left[0], 0.125);
  EXPECT_DOUBLE_EQ(top_left[1], 0.875);
}

TEST(Boundaries, WritersAndValidation) {
  Rng rng(4);
  const ForestParams f = init_forest(rng, 2, 2, 2, 1, Variant::PreGelu);
  const BoundaryExport e = export_boundaries(f, 4);
  std::ostringstream csv, pgm, pal;
  write_boundaries_csv(csv, e);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "tree,level,slot,w1,w2,b,clip_poly");
  write_raster_pgm(pgm, e.raster, 2);
  EXPECT_EQ(pgm.str().substr(0, 9), "P2\n4 8\n3\n");
  write_palette_json(pal, 2);
  EXPECT_NE(pal.str().find("\"#ff0000\""), std::string::npos);
  EXPECT_THROW(export_boundaries(init_forest(rng, 1, 1, 3, 1, Variant::PreGelu), 4), DimensionError);
}

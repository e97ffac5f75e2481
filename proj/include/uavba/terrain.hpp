#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uavba/geometry.hpp"

namespace uavba {

/// Coarse DSM raster. Elevations are point samples at node positions
/// origin + (col, row) * cell_size, row 0 at the south edge.
struct DsmRaster {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 1.0;
  int n_cols = 0;
  int n_rows = 0;
  std::vector<double> elevations;  // row-major, row 0 south
  double nodata = -9999.0;

  void validate() const {
    if (cell_size <= 0.0) throw ConfigError("dsm: cell_size must be positive");
    if (n_cols < 2 || n_rows < 2) throw ConfigError("dsm: need at least 2x2 nodes");
    if (static_cast<int>(elevations.size()) != n_cols * n_rows)
      throw ConfigError("dsm: elevation count does not match grid");
    for (double e : elevations)
      if (e != nodata && !std::isfinite(e)) throw ConfigError("dsm: non-finite elevation");
  }

  double at(int row, int col) const { return elevations[row * n_cols + col]; }

  double max_x() const { return origin_x + (n_cols - 1) * cell_size; }
  double max_y() const { return origin_y + (n_rows - 1) * cell_size; }

  static DsmRaster constant(double z, double x0, double y0, double extent, double cell) {
    DsmRaster d;
    d.origin_x = x0;
    d.origin_y = y0;
    d.cell_size = cell;
    d.n_cols = d.n_rows = static_cast<int>(std::ceil(extent / cell)) + 1;
    d.elevations.assign(static_cast<size_t>(d.n_cols) * d.n_rows, z);
    return d;
  }
};

inline double elevation_at(const DsmRaster& dsm, double x, double y) {
  const double fx = (x - dsm.origin_x) / dsm.cell_size;
  const double fy = (y - dsm.origin_y) / dsm.cell_size;
  if (fx < 0.0 || fy < 0.0 || fx > dsm.n_cols - 1 || fy > dsm.n_rows - 1)
    throw OutOfExtent();
  int c0 = std::min(static_cast<int>(std::floor(fx)), dsm.n_cols - 2);
  int r0 = std::min(static_cast<int>(std::floor(fy)), dsm.n_rows - 2);
  const double tx = fx - c0, ty = fy - r0;
  const double v00 = dsm.at(r0, c0), v01 = dsm.at(r0, c0 + 1);
  const double v10 = dsm.at(r0 + 1, c0), v11 = dsm.at(r0 + 1, c0 + 1);
  if (v00 == dsm.nodata || v01 == dsm.nodata || v10 == dsm.nodata || v11 == dsm.nodata)
    throw NoDataCell();
  return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
}

/// March a descending ray until it crosses the terrain, then bisect to 0.01 m.
inline Vec3 ray_intersect(const DsmRaster& dsm, const Vec3& origin, const Vec3& direction) {
  if (direction.z() >= 0.0)
    throw NoIntersection("ray must descend");
  auto height_above = [&](double t) {
    const Vec3 p = origin + t * direction;
    return p.z() - elevation_at(dsm, p.x(), p.y());
  };

  const double step = dsm.cell_size / 2.0;
  double t_lo = 0.0;
  double f_lo;
  try {
    f_lo = height_above(0.0);
  } catch (const OutOfExtent&) {
    throw NoIntersection("ray origin outside raster extent");
  }
  if (f_lo <= 0.0) throw NoIntersection("ray origin below terrain");

  double t_hi = t_lo;
  bool bracketed = false;
  for (;;) {
    t_hi += step;
    double f_hi;
    try {
      f_hi = height_above(t_hi);
    } catch (const OutOfExtent&) {
      throw NoIntersection();
    }
    if (f_hi <= 0.0) {
      bracketed = true;
      break;
    }
    t_lo = t_hi;
    f_lo = f_hi;
  }
  (void)bracketed;
  for (int i = 0; i < 30; ++i) {
    const double t_mid = 0.5 * (t_lo + t_hi);
    if (height_above(t_mid) > 0.0)
      t_lo = t_mid;
    else
      t_hi = t_mid;
  }
  return origin + 0.5 * (t_lo + t_hi) * direction;
}

/// DSM-projected ground quadrilateral of one image.
/// Corners ordered as the image corners TL, TR, BR, BL.
struct Footprint {
  std::array<Vec2, 4> corners;
  Vec2 center = Vec2::Zero();
  double heading_rad = 0.0;

  double area() const {
    double a = 0.0;
    for (int i = 0; i < 4; ++i) {
      const Vec2& p = corners[i];
      const Vec2& q = corners[(i + 1) % 4];
      a += p.x() * q.y() - q.x() * p.y();
    }
    return 0.5 * std::abs(a);
  }
};

/// Heading: bearing (CCW from north) of the ground direction of image "up",
/// the vector from the BL-BR edge midpoint to the TL-TR edge midpoint.
inline double footprint_heading(const std::array<Vec2, 4>& corners) {
  const Vec2 top_mid = 0.5 * (corners[0] + corners[1]);
  const Vec2 bot_mid = 0.5 * (corners[3] + corners[2]);
  const Vec2 up = top_mid - bot_mid;
  return std::atan2(-up.x(), up.y());
}

inline Footprint compute_footprint(const CameraModel& camera, const Pose& pose,
                                   const DsmRaster& dsm) {
  const double w = camera.width_px, h = camera.height_px;
  const std::array<Vec2, 4> corner_px = {Vec2(0, 0), Vec2(w, 0), Vec2(w, h), Vec2(0, h)};
  Footprint fp;
  for (int i = 0; i < 4; ++i) {
    const Vec3 dir = pixel_ray(camera, pose, corner_px[i]);
    try {
      const Vec3 ground = ray_intersect(dsm, pose.translation, dir);
      fp.corners[i] = ground.head<2>();
    } catch (const NoIntersection&) {
      throw CornerMiss(i);
    }
  }
  fp.center = 0.25 * (fp.corners[0] + fp.corners[1] + fp.corners[2] + fp.corners[3]);
  fp.heading_rad = footprint_heading(fp.corners);
  return fp;
}

namespace detail {

inline double signed_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

inline bool is_convex(const std::vector<Vec2>& poly) {
  const size_t n = poly.size();
  int sign = 0;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[(i + 1) % n] - poly[i];
    const Vec2 b = poly[(i + 2) % n] - poly[(i + 1) % n];
    const double cross = a.x() * b.y() - a.y() * b.x();
    if (std::abs(cross) < 1e-12) continue;
    const int s = cross > 0.0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

/// Sutherland-Hodgman clip of `subject` against convex `clip` (CCW).
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::vector<Vec2>& clip) {
  const size_t n = clip.size();
  for (size_t i = 0; i < n && !subject.empty(); ++i) {
    const Vec2 a = clip[i];
    const Vec2 b = clip[(i + 1) % n];
    const Vec2 edge = b - a;
    auto inside = [&](const Vec2& p) {
      return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()) >= -1e-12;
    };
    auto intersect = [&](const Vec2& p, const Vec2& q) {
      const Vec2 d = q - p;
      const double denom = edge.x() * d.y() - edge.y() * d.x();
      const double t = (edge.x() * (a.y() - p.y()) - edge.y() * (a.x() - p.x())) / denom;
      return Vec2(p + t * d);
    };
    std::vector<Vec2> out;
    const size_t m = subject.size();
    for (size_t j = 0; j < m; ++j) {
      const Vec2& cur = subject[j];
      const Vec2& prev = subject[(j + m - 1) % m];
      const bool cur_in = inside(cur), prev_in = inside(prev);
      if (cur_in) {
        if (!prev_in) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(intersect(prev, cur));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline std::vector<Vec2> ccw_polygon(const Footprint& fp) {
  std::vector<Vec2> poly(fp.corners.begin(), fp.corners.end());
  if (signed_area(poly) < 0.0) std::reverse(poly.begin(), poly.end());
  return poly;
}

}  // namespace detail

/// area(intersection) / min(area(a), area(b)); footprints treated as convex.
inline double footprint_overlap(const Footprint& a, const Footprint& b) {
  const double area_a = a.area(), area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) throw DegenerateFootprint();
  std::vector<Vec2> pa = detail::ccw_polygon(a);
  std::vector<Vec2> pb = detail::ccw_polygon(b);
  if (!detail::is_convex(pa) || !detail::is_convex(pb))
    throw DegenerateFootprint("non-convex footprint");
  const std::vector<Vec2> inter = detail::clip_convex(pa, pb);
  if (inter.size() < 3) return 0.0;
  const double area_i = std::abs(detail::signed_area(inter));
  return std::min(1.0, area_i / std::min(area_a, area_b));
}

inline bool point_in_footprint(const Footprint& fp, const Vec2& p) {
  const std::vector<Vec2> poly = detail::ccw_polygon(fp);
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 e = poly[(i + 1) % n] - poly[i];
    if (e.x() * (p.y() - poly[i].y()) - e.y() * (p.x() - poly[i].x()) < -1e-12) return false;
  }
  return true;
}

// ---- ESRI-ASCII-grid-style DSM I/O ----

inline DsmRaster load_dsm_asc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open DSM file: " + path);
  DsmRaster dsm;
  double xll = 0.0, yll = 0.0;
  int ncols = 0, nrows = 0;
  for (int i = 0; i < 6; ++i) {
    std::string key;
    in >> key;
    std::transform(key.begin(), key.end(), key.begin(), ::tolower);
    if (key == "ncols") in >> ncols;
    else if (key == "nrows") in >> nrows;
    else if (key == "xllcorner") in >> xll;
    else if (key == "yllcorner") in >> yll;
    else if (key == "cellsize") in >> dsm.cell_size;
    else if (key == "nodata_value") in >> dsm.nodata;
    else throw IoError("unexpected DSM header key: " + key);
  }
  dsm.n_cols = ncols;
  dsm.n_rows = nrows;
  dsm.origin_x = xll;
  dsm.origin_y = yll;
  dsm.elevations.assign(static_cast<size_t>(ncols) * nrows, dsm.nodata);
  // file rows run north to south; storage row 0 is south
  for (int r = nrows - 1; r >= 0; --r)
    for (int c = 0; c < ncols; ++c)
      if (!(in >> dsm.elevations[r * ncols + c]))
        throw IoError("truncated DSM file: " + path);
  dsm.validate();
  return dsm;
}

inline void save_dsm_asc(const DsmRaster& dsm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write DSM file: " + path);
  out.precision(17);
  out << "ncols " << dsm.n_cols << "\n"
      << "nrows " << dsm.n_rows << "\n"
      << "xllcorner " << dsm.origin_x << "\n"
      << "yllcorner " << dsm.origin_y << "\n"
      << "cellsize " << dsm.cell_size << "\n"
      << "nodata_value " << dsm.nodata << "\n";
  for (int r = dsm.n_rows - 1; r >= 0; --r) {
    for (int c = 0; c < dsm.n_cols; ++c)
      out << dsm.at(r, c) << (c + 1 == dsm.n_cols ? '\n' : ' ');
  }
}

}  // namespace uavba

#pragma once

#include <cmath>
#include <vector>

#include "uavba/geometry.hpp"
#include "uavba/terrain.hpp"

namespace uavba {

/// User-defined grid of tracked patch windows.
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  double patch_size_px = 0.0;
  Vec2 grid_center = Vec2::Zero();  // c of the footprint transfer
  int image_width = 0;
  int image_height = 0;
};

/// One tracked patch center with a stable identity.
struct PatchState {
  int patch_id = 0;
  Vec2 center_px = Vec2::Zero();
  int generation = 0;  // wrap-around re-initializations
  bool lost = false;
};

struct TrackerConfig {
  double nominal_depth_m = 300.0;  // lambda of the nav transfer
  enum class TransferMode { Nav, Footprint } transfer_mode = TransferMode::Footprint;
  bool wrap_enabled = true;

  void validate() const {
    if (nominal_depth_m <= 0.0) throw ConfigError("tracker: nominal depth must be positive");
  }
};

struct GridInit {
  PatchGrid grid;
  std::vector<PatchState> states;
};

/// Non-overlapping patch block centered in the image, ids row-major from id_base.
inline GridInit make_grid(int rows, int cols, double patch_size_px, int image_width,
                          int image_height, int id_base = 0) {
  if (rows < 1 || cols < 1 || patch_size_px < 16.0) throw GridDoesNotFit("invalid grid shape");
  if (rows * patch_size_px > image_height || cols * patch_size_px > image_width)
    throw GridDoesNotFit();
  GridInit out;
  out.grid = {rows, cols, patch_size_px, Vec2::Zero(), image_width, image_height};
  const double x0 = (image_width - cols * patch_size_px) / 2.0;
  const double y0 = (image_height - rows * patch_size_px) / 2.0;
  Vec2 sum = Vec2::Zero();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      PatchState s;
      s.patch_id = id_base + r * cols + c;
      s.center_px = Vec2(x0 + (c + 0.5) * patch_size_px, y0 + (r + 0.5) * patch_size_px);
      sum += s.center_px;
      out.states.push_back(s);
    }
  out.grid.grid_center = sum / static_cast<double>(rows * cols);
  return out;
}

/// Initial (home) center of a patch given its row-major index within the grid.
inline Vec2 grid_home_center(const PatchGrid& grid, int local_index) {
  const double x0 = (grid.image_width - grid.cols * grid.patch_size_px) / 2.0;
  const double y0 = (grid.image_height - grid.rows * grid.patch_size_px) / 2.0;
  const int r = local_index / grid.cols, c = local_index % grid.cols;
  return Vec2(x0 + (c + 0.5) * grid.patch_size_px, y0 + (r + 0.5) * grid.patch_size_px);
}

/// GNSS/IMU patch transfer: back-project each center at the nominal depth from
/// image 0 and re-project into image k. Patches landing behind the camera are
/// flagged lost and re-initialized at their previous position.
inline std::vector<PatchState> transfer_nav(const std::vector<PatchState>& states,
                                            const Pose& pose_0, const Pose& pose_k,
                                            const CameraModel& camera,
                                            const TrackerConfig& cfg) {
  cfg.validate();
  std::vector<PatchState> out = states;
  for (auto& s : out) {
    const Vec3 ground = back_project(camera, pose_0, s.center_px, cfg.nominal_depth_m);
    try {
      s.center_px = project(camera, pose_k, ground);
      s.lost = false;
    } catch (const PointBehindCamera&) {
      s.lost = true;
      s.generation += 1;
    }
  }
  return out;
}

namespace detail {

/// Ground directions of the pixel axes for a footprint at the given heading.
/// Column 0: pixel +x on the ground; column 1: pixel +y. A reflection
/// (det -1) since pixel y runs south for heading 0; it is its own inverse.
inline Eigen::Matrix2d pixel_axes_on_ground(double heading_rad) {
  Eigen::Matrix2d a;
  a << std::cos(heading_rad), std::sin(heading_rad),
       std::sin(heading_rad), -std::cos(heading_rad);
  return a;
}

inline Eigen::Matrix2d rot2(double theta) {
  Eigen::Matrix2d r;
  r << std::cos(theta), -std::sin(theta),
       std::sin(theta), std::cos(theta);
  return r;
}

}  // namespace detail

/// Pixels-per-meter ground scale of a footprint: image width over the length
/// of the TL-TR footprint edge.
inline double footprint_px_per_m(const Footprint& fp, int image_width_px) {
  const double edge = (fp.corners[1] - fp.corners[0]).norm();
  if (edge <= 0.0) throw DegenerateFootprint();
  return image_width_px / edge;
}

/// Ground position of a pixel under the footprint transfer model (pivot at the
/// grid center c).
inline Vec2 footprint_pixel_to_ground(const Footprint& fp, const PatchGrid& grid,
                                      const Vec2& pixel, double px_per_m) {
  return fp.center + detail::pixel_axes_on_ground(fp.heading_rad) * (pixel - grid.grid_center) / px_per_m;
}

/// Footprint patch transfer: in-plane rotation by the relative heading about
/// the grid center plus the footprint-center displacement mapped into pixels.
inline std::vector<PatchState> transfer_footprint(const std::vector<PatchState>& states,
                                                  const Footprint& fp_0, const Footprint& fp_k,
                                                  const PatchGrid& grid, double px_per_m) {
  if (fp_0.area() <= 0.0 || fp_k.area() <= 0.0) throw DegenerateFootprint();
  if (px_per_m <= 0.0) throw ConfigError("px_per_m must be positive");
  const double theta = fp_k.heading_rad - fp_0.heading_rad;
  const Eigen::Matrix2d rot = detail::rot2(theta);
  // camera moved by (g_k - g_0); tracked ground regions move the opposite way,
  // expressed in the target image's pixel axes
  const Eigen::Matrix2d axes_k = detail::pixel_axes_on_ground(fp_k.heading_rad);
  const Vec2 shift_px = -px_per_m * (axes_k * (fp_k.center - fp_0.center));
  std::vector<PatchState> out = states;
  for (auto& s : out)
    s.center_px = rot * (s.center_px - grid.grid_center) + grid.grid_center + shift_px;
  return out;
}

/// Re-enter out-of-band centers at the opposite edge (per-axis modular
/// arithmetic on the legal band); idempotent, conserves patch count.
inline std::vector<PatchState> wrap_patches(const std::vector<PatchState>& states,
                                            int image_width, int image_height,
                                            double patch_size_px) {
  const double half = patch_size_px / 2.0;
  auto wrap_axis = [&](double v, double dim, bool& wrapped) {
    const double lo = half, band = dim - patch_size_px;
    if (v >= lo && v <= lo + band) return v;
    wrapped = true;
    double w = std::fmod(v - lo, band);
    if (w < 0.0) w += band;
    return lo + w;
  };
  std::vector<PatchState> out = states;
  for (auto& s : out) {
    bool wrapped = false;
    s.center_px.x() = wrap_axis(s.center_px.x(), image_width, wrapped);
    s.center_px.y() = wrap_axis(s.center_px.y(), image_height, wrapped);
    if (wrapped) s.generation += 1;
  }
  return out;
}

/// Re-project patches from an overlapping neighbor-strip image into the
/// target image, keeping source patch ids. Patches whose ground position
/// falls outside the target footprint are omitted.
inline std::vector<PatchState> cross_strip_project(const std::vector<PatchState>& source_states,
                                                   const Footprint& source_fp,
                                                   const Footprint& target_fp,
                                                   const PatchGrid& grid, double px_per_m,
                                                   double overlap_threshold = 0.10) {
  if (footprint_overlap(source_fp, target_fp) < overlap_threshold) throw NoOverlap();
  const std::vector<PatchState> transferred =
      transfer_footprint(source_states, source_fp, target_fp, grid, px_per_m);
  std::vector<PatchState> out;
  for (size_t i = 0; i < source_states.size(); ++i) {
    const Vec2 ground =
        footprint_pixel_to_ground(source_fp, grid, source_states[i].center_px, px_per_m);
    if (point_in_footprint(target_fp, ground)) out.push_back(transferred[i]);
  }
  return out;
}

}  // namespace uavba

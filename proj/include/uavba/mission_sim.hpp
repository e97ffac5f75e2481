#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "uavba/features.hpp"
#include "uavba/geometry.hpp"
#include "uavba/terrain.hpp"

namespace uavba {

struct FlightPlan {
  double velocity_mps = 20.0;
  double altitude_m = 300.0;
  double shoot_interval_s = 0.0;  // derived from overlap when 0
  double overlap_pct = 80.0;      // along-track
  double footprint_along_m = 0.0; // derived from camera + altitude when 0
  double processing_budget_s = 0.0;
  int strip_count = 2;
  double side_overlap_pct = 30.0;
  int images_per_strip = 30;

  void validate() const {
    if (velocity_mps <= 0.0) throw InvalidPlan("velocity must be positive");
    if (altitude_m <= 0.0) throw InvalidPlan("altitude must be positive");
    if (overlap_pct < 0.0 || overlap_pct >= 100.0) throw InvalidPlan("overlap must be in [0,100)");
    if (side_overlap_pct < 0.0 || side_overlap_pct >= 100.0)
      throw InvalidPlan("side overlap must be in [0,100)");
    if (strip_count < 1 || images_per_strip < 2) throw InvalidPlan("too few images");
  }
};

/// Along-track ground footprint (m) of an image: N * theta_um * h / (1000 * f_mm).
inline double footprint_extent_m(double focal_mm, int n_px, double pitch_um, double h_flight_m) {
  return n_px * pitch_um * h_flight_m / (1000.0 * focal_mm);
}

/// Along-track overlap percentage from acquisition parameters, clamped to [0, 100).
inline double overlap_from_params(double f_mm, double v_mps, double dt_s, int n_px,
                                  double theta_um, double h_flight_m) {
  if (f_mm <= 0.0 || v_mps <= 0.0 || dt_s <= 0.0 || n_px <= 0 || theta_um <= 0.0 ||
      h_flight_m <= 0.0)
    throw NonPositiveParameter();
  const double h_im = footprint_extent_m(f_mm, n_px, theta_um, h_flight_m);
  const double beta = (1.0 - v_mps * dt_s / h_im) * 100.0;
  return std::max(0.0, beta);
}

/// Maximum processing time per image pair: t = h_im (1 - beta/100) / v.
inline double max_pair_time(double h_im_m, double overlap_pct, double v_mps) {
  if (v_mps <= 0.0) throw NonPositiveVelocity();
  if (overlap_pct < 0.0 || overlap_pct >= 100.0) throw InvalidPlan("overlap must be in [0,100)");
  return h_im_m * (1.0 - overlap_pct / 100.0) / v_mps;
}

struct TerrainSpec {
  enum class Type { Flat, Inclined, Hills } type = Type::Flat;
  double base_z = 0.0;
  double slope_x = 0.0, slope_y = 0.0;       // inclined plane
  double amplitude_m = 0.0, wavelength_m = 500.0;  // sinusoidal hills
  double cell_size_m = 20.0;

  double height(double x, double y) const {
    switch (type) {
      case Type::Flat: return base_z;
      case Type::Inclined: return base_z + slope_x * x + slope_y * y;
      case Type::Hills:
        return base_z + amplitude_m * std::sin(2.0 * M_PI * x / wavelength_m) *
                            std::cos(2.0 * M_PI * y / wavelength_m);
    }
    return base_z;
  }
};

struct NoiseSpec {
  double sigma_pos_m = 1.0;
  double sigma_att_deg = 0.2;
  double observation_px = 0.5;
  double attitude_jitter_deg = 1.0;  // truth-pose deviation from exact nadir

  void validate() const {
    if (sigma_pos_m < 0.0 || sigma_att_deg < 0.0 || observation_px < 0.0 ||
        attitude_jitter_deg < 0.0)
      throw ConfigError("noise sigmas must be non-negative");
  }
};

struct MissionImage {
  int image_id = -1;
  int strip_id = -1;
  double timestamp_s = 0.0;
  Pose truth_pose;
  Pose nav_pose;
};

struct Mission {
  CameraModel camera;
  GeoAnchor anchor;
  DsmRaster dsm;
  FlightPlan plan;
  NoiseSpec noise;
  TerrainSpec terrain;
  std::vector<MissionImage> images;
  std::vector<Landmark> landmarks;
  std::uint64_t seed = 0;

  const MissionImage* find_image(int image_id) const {
    for (const auto& im : images)
      if (im.image_id == image_id) return &im;
    return nullptr;
  }
};

/// Lawnmower two-axis mission: strips run east/west, alternating direction,
/// with along-track spacing v*dt and side overlap per plan. Fully
/// deterministic per seed.
inline Mission generate_mission(const FlightPlan& plan_in, const CameraModel& camera,
                                const TerrainSpec& terrain, const NoiseSpec& noise,
                                std::uint64_t seed,
                                double landmarks_per_footprint = 30.0) {
  FlightPlan plan = plan_in;
  plan.validate();
  noise.validate();

  const double h_im =
      plan.footprint_along_m > 0.0
          ? plan.footprint_along_m
          : footprint_extent_m(camera.focal_length_mm, camera.width_px, camera.pixel_pitch_um,
                               plan.altitude_m);
  plan.footprint_along_m = h_im;
  const double spacing = h_im * (1.0 - plan.overlap_pct / 100.0);
  if (plan.shoot_interval_s <= 0.0) plan.shoot_interval_s = spacing / plan.velocity_mps;
  const double across =
      footprint_extent_m(camera.focal_length_mm, camera.height_px, camera.pixel_pitch_um,
                         plan.altitude_m);
  const double strip_spacing = across * (1.0 - plan.side_overlap_pct / 100.0);

  Mission mission;
  mission.camera = camera;
  mission.anchor = GeoAnchor(52.0, 13.0, 0.0);
  mission.plan = plan;
  mission.noise = noise;
  mission.terrain = terrain;
  mission.seed = seed;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double jitter = deg2rad(noise.attitude_jitter_deg);
  const double sig_att = deg2rad(noise.sigma_att_deg);
  int image_id = 0;
  const double strip_len = (plan.images_per_strip - 1) * spacing;
  for (int s = 0; s < plan.strip_count; ++s) {
    const bool eastbound = (s % 2 == 0);
    const double y = s * strip_spacing;
    for (int i = 0; i < plan.images_per_strip; ++i) {
      const double x = eastbound ? i * spacing : strip_len - i * spacing;
      MissionImage im;
      im.image_id = image_id;
      im.strip_id = s;
      im.timestamp_s = (s * plan.images_per_strip + i) * plan.shoot_interval_s;
      const double ground_z = terrain.height(x, y);
      const Vec3 position(x, y, ground_z + plan.altitude_m);
      const double yaw = eastbound ? 0.0 : M_PI;
      const Vec3 jitter_aa(jitter * gauss(rng), jitter * gauss(rng), jitter * gauss(rng));
      Pose truth = nadir_pose(position, yaw);
      truth.rotation = (truth.rotation * rotation_exp(jitter_aa)).normalized();
      im.truth_pose = truth;

      const Vec3 pos_noise(noise.sigma_pos_m * gauss(rng), noise.sigma_pos_m * gauss(rng),
                           noise.sigma_pos_m * gauss(rng));
      const Vec3 att_noise(sig_att * gauss(rng), sig_att * gauss(rng), sig_att * gauss(rng));
      im.nav_pose = Pose((truth.rotation * rotation_exp(att_noise)).normalized(),
                         truth.translation + pos_noise);
      mission.images.push_back(im);
      ++image_id;
    }
  }

  // ground extent: union of footprints over flat-equivalent terrain, with margin
  const double margin = std::max(h_im, across);
  const double x_min = -0.5 * h_im - margin, x_max = strip_len + 0.5 * h_im + margin;
  const double y_min = -0.5 * across - margin;
  const double y_max = (plan.strip_count - 1) * strip_spacing + 0.5 * across + margin;

  DsmRaster dsm;
  dsm.cell_size = terrain.cell_size_m;
  dsm.origin_x = x_min;
  dsm.origin_y = y_min;
  dsm.n_cols = static_cast<int>(std::ceil((x_max - x_min) / dsm.cell_size)) + 1;
  dsm.n_rows = static_cast<int>(std::ceil((y_max - y_min) / dsm.cell_size)) + 1;
  dsm.elevations.resize(static_cast<size_t>(dsm.n_cols) * dsm.n_rows);
  for (int r = 0; r < dsm.n_rows; ++r)
    for (int c = 0; c < dsm.n_cols; ++c)
      dsm.elevations[r * dsm.n_cols + c] =
          terrain.height(dsm.origin_x + c * dsm.cell_size, dsm.origin_y + r * dsm.cell_size);
  mission.dsm = dsm;

  // landmarks scattered uniformly over the covered ground at the given density
  const double covered_x0 = -0.5 * h_im, covered_x1 = strip_len + 0.5 * h_im;
  const double covered_y0 = -0.5 * across;
  const double covered_y1 = (plan.strip_count - 1) * strip_spacing + 0.5 * across;
  const double footprint_area = h_im * across;
  const double covered_area = (covered_x1 - covered_x0) * (covered_y1 - covered_y0);
  const long n_landmarks =
      static_cast<long>(std::ceil(landmarks_per_footprint * covered_area / footprint_area));
  std::uniform_real_distribution<double> ux(covered_x0, covered_x1);
  std::uniform_real_distribution<double> uy(covered_y0, covered_y1);
  long lm_id = 0;
  for (long i = 0; i < n_landmarks; ++i) {
    const double x = ux(rng), y = uy(rng);
    Landmark lm;
    lm.id = lm_id++;
    lm.position = Vec3(x, y, terrain.height(x, y));
    // keep only landmarks observed by at least two truth poses
    int views = 0;
    for (const auto& im : mission.images) {
      try {
        const Vec2 px = project(camera, im.truth_pose, lm.position);
        if (px.x() >= 0 && px.x() < camera.width_px && px.y() >= 0 && px.y() < camera.height_px)
          ++views;
      } catch (const PointBehindCamera&) {
      }
      if (views >= 2) break;
    }
    if (views >= 2) mission.landmarks.push_back(lm);
  }
  return mission;
}

// ---- evaluation ----

struct MetricsReport {
  double mean_reproj_px = 0.0;
  double std_reproj_px = 0.0;  // population convention (divide by n)
  double total_runtime_s = 0.0;
  double per_pair_runtime_s = 0.0;
  double extract_time_s = 0.0;
  double match_time_s = 0.0;
  double position_rmse_m = 0.0;
  double attitude_rmse_deg = 0.0;
};

/// Pipeline output in the form the evaluator consumes.
struct RunSummary {
  std::map<int, Pose> poses;
  std::vector<double> inlier_residual_norms;
  StageTimings timings;
  int image_count = 0;
};

inline double angular_distance_rad(const Quat& a, const Quat& b) {
  const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return 2.0 * std::acos(d);
}

inline MetricsReport evaluate(const RunSummary& run, const Mission& mission) {
  MetricsReport rep;
  const auto& r = run.inlier_residual_norms;
  if (!r.empty()) {
    double sum = 0.0;
    for (double v : r) sum += v;
    rep.mean_reproj_px = sum / r.size();
    double ss = 0.0;
    for (double v : r) ss += (v - rep.mean_reproj_px) * (v - rep.mean_reproj_px);
    rep.std_reproj_px = std::sqrt(ss / r.size());
  }
  double pos_sq = 0.0, att_sq = 0.0;
  for (const auto& [id, pose] : run.poses) {
    const MissionImage* im = mission.find_image(id);
    if (!im) throw IdMismatch("result image " + std::to_string(id) + " not in mission");
    pos_sq += (pose.translation - im->truth_pose.translation).squaredNorm();
    const double ang = rad2deg(angular_distance_rad(pose.rotation, im->truth_pose.rotation));
    att_sq += ang * ang;
  }
  if (!run.poses.empty()) {
    rep.position_rmse_m = std::sqrt(pos_sq / run.poses.size());
    rep.attitude_rmse_deg = std::sqrt(att_sq / run.poses.size());
  }
  rep.total_runtime_s = run.timings.total_s;
  rep.extract_time_s = run.timings.extract_s;
  rep.match_time_s = run.timings.match_s;
  const int pairs = std::max(1, run.image_count - 1);
  rep.per_pair_runtime_s = run.timings.total_s / pairs;
  return rep;
}

/// Position RMSE of the raw nav initialization, the accuracy baseline.
inline double nav_position_rmse(const Mission& mission) {
  double s = 0.0;
  for (const auto& im : mission.images)
    s += (im.nav_pose.translation - im.truth_pose.translation).squaredNorm();
  return std::sqrt(s / mission.images.size());
}

}  // namespace uavba

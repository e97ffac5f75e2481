#pragma once

#include <cmath>
#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "uavba/errors.hpp"

namespace uavba {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

constexpr double kDepthEpsilon = 1e-6;  // behind-camera test, meters

/// Shared pinhole camera for the whole mission. Intrinsics are never refined.
struct CameraModel {
  double focal_length_mm = 0.0;
  double pixel_pitch_um = 0.0;
  int width_px = 0;
  int height_px = 0;
  Vec2 principal_point = Vec2::Zero();

  CameraModel() = default;
  CameraModel(double f_mm, double pitch_um, int w, int h, Vec2 pp)
      : focal_length_mm(f_mm), pixel_pitch_um(pitch_um), width_px(w), height_px(h),
        principal_point(pp) {
    validate();
  }

  static CameraModel centered(double f_mm, double pitch_um, int w, int h) {
    return CameraModel(f_mm, pitch_um, w, h, Vec2(w / 2.0, h / 2.0));
  }

  double focal_px() const { return focal_length_mm * 1000.0 / pixel_pitch_um; }

  void validate() const {
    if (focal_length_mm <= 0.0 || pixel_pitch_um <= 0.0)
      throw ConfigError("camera: focal length and pixel pitch must be positive");
    if (width_px < 2 || height_px < 2)
      throw ConfigError("camera: image dimensions must be at least 2 px");
    if (principal_point.x() < 0.0 || principal_point.x() >= width_px ||
        principal_point.y() < 0.0 || principal_point.y() >= height_px)
      throw ConfigError("camera: principal point outside image");
  }

  Mat3 intrinsic_matrix() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = k(1, 1) = focal_px();
    k(0, 2) = principal_point.x();
    k(1, 2) = principal_point.y();
    return k;
  }
};

/// Rigid camera pose: world-from-camera rotation and camera center in mission ENU.
struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Quat& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  /// World point into the camera frame: R^T (X - T).
  Vec3 world_to_camera(const Vec3& point_world) const {
    return rotation.conjugate() * (point_world - translation);
  }
  Vec3 camera_to_world(const Vec3& point_cam) const {
    return rotation * point_cam + translation;
  }
};

/// WGS84 geodetic origin of the mission ENU frame.
struct GeoAnchor {
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;
  double altitude_m = 0.0;

  GeoAnchor() = default;
  GeoAnchor(double lat, double lon, double alt)
      : latitude_deg(lat), longitude_deg(lon), altitude_m(alt) {
    if (std::abs(lat) > 90.0 || std::abs(lon) > 180.0)
      throw ConfigError("anchor: latitude/longitude out of range");
  }
};

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

// WGS84 ellipsoid
namespace wgs84 {
constexpr double kA = 6378137.0;
constexpr double kF = 1.0 / 298.257223563;
constexpr double kE2 = kF * (2.0 - kF);
}  // namespace wgs84

inline Vec3 geodetic_to_ecef(double lat_deg, double lon_deg, double alt_m) {
  const double lat = deg2rad(lat_deg), lon = deg2rad(lon_deg);
  const double slat = std::sin(lat), clat = std::cos(lat);
  const double n = wgs84::kA / std::sqrt(1.0 - wgs84::kE2 * slat * slat);
  return Vec3((n + alt_m) * clat * std::cos(lon),
              (n + alt_m) * clat * std::sin(lon),
              (n * (1.0 - wgs84::kE2) + alt_m) * slat);
}

/// Rotation taking ECEF deltas into the local ENU frame at (lat, lon).
inline Mat3 ecef_to_enu_rotation(double lat_deg, double lon_deg) {
  const double lat = deg2rad(lat_deg), lon = deg2rad(lon_deg);
  const double sl = std::sin(lat), cl = std::cos(lat);
  const double so = std::sin(lon), co = std::cos(lon);
  Mat3 r;
  r << -so, co, 0.0,
       -sl * co, -sl * so, cl,
        cl * co, cl * so, sl;
  return r;
}

inline Vec3 geodetic_to_enu(double lat_deg, double lon_deg, double alt_m,
                            const GeoAnchor& anchor) {
  const Vec3 ecef = geodetic_to_ecef(lat_deg, lon_deg, alt_m);
  const Vec3 ecef0 =
      geodetic_to_ecef(anchor.latitude_deg, anchor.longitude_deg, anchor.altitude_m);
  return ecef_to_enu_rotation(anchor.latitude_deg, anchor.longitude_deg) * (ecef - ecef0);
}

/// Inverse of geodetic_to_enu. Bowring-style iteration on the latitude.
inline void enu_to_geodetic(const Vec3& enu, const GeoAnchor& anchor,
                            double& lat_deg, double& lon_deg, double& alt_m) {
  const Vec3 ecef0 =
      geodetic_to_ecef(anchor.latitude_deg, anchor.longitude_deg, anchor.altitude_m);
  const Mat3 r = ecef_to_enu_rotation(anchor.latitude_deg, anchor.longitude_deg);
  const Vec3 ecef = ecef0 + r.transpose() * enu;

  const double x = ecef.x(), y = ecef.y(), z = ecef.z();
  const double p = std::hypot(x, y);
  lon_deg = rad2deg(std::atan2(y, x));
  double lat = std::atan2(z, p * (1.0 - wgs84::kE2));
  double n = wgs84::kA;
  for (int i = 0; i < 10; ++i) {
    const double slat = std::sin(lat);
    n = wgs84::kA / std::sqrt(1.0 - wgs84::kE2 * slat * slat);
    const double alt = p / std::cos(lat) - n;
    lat = std::atan2(z, p * (1.0 - wgs84::kE2 * n / (n + alt)));
  }
  const double slat = std::sin(lat);
  n = wgs84::kA / std::sqrt(1.0 - wgs84::kE2 * slat * slat);
  alt_m = p / std::cos(lat) - n;
  lat_deg = rad2deg(lat);
}

/// Pinhole projection p = pi(K R^T (X - T)).
inline Vec2 project(const CameraModel& camera, const Pose& pose, const Vec3& point_world) {
  const Vec3 pc = pose.world_to_camera(point_world);
  if (pc.z() <= kDepthEpsilon) throw PointBehindCamera();
  const double f = camera.focal_px();
  return Vec2(f * pc.x() / pc.z() + camera.principal_point.x(),
              f * pc.y() / pc.z() + camera.principal_point.y());
}

/// Pixel ray at the given camera-frame depth, mapped back to world coordinates.
inline Vec3 back_project(const CameraModel& camera, const Pose& pose, const Vec2& pixel,
                         double depth_m) {
  if (depth_m <= 0.0) throw NonPositiveDepth();
  const double f = camera.focal_px();
  const Vec3 pc(depth_m * (pixel.x() - camera.principal_point.x()) / f,
                depth_m * (pixel.y() - camera.principal_point.y()) / f,
                depth_m);
  return pose.camera_to_world(pc);
}

/// Unit ray through a pixel, in world coordinates.
inline Vec3 pixel_ray(const CameraModel& camera, const Pose& pose, const Vec2& pixel) {
  const double f = camera.focal_px();
  const Vec3 dir_cam((pixel.x() - camera.principal_point.x()) / f,
                     (pixel.y() - camera.principal_point.y()) / f, 1.0);
  return (pose.rotation * dir_cam).normalized();
}

/// SO(3) exponential map (Rodrigues).
inline Quat rotation_exp(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * axis_angle.x(), 0.5 * axis_angle.y(), 0.5 * axis_angle.z());
    return q.normalized();
  }
  return Quat(Eigen::AngleAxisd(angle, axis_angle / angle));
}

/// SO(3) logarithm. At angle pi the axis with the largest-magnitude component
/// is taken positive (deterministic branch).
inline Vec3 rotation_log(const Quat& rotation) {
  Quat q = rotation.normalized();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const double sin_half = q.vec().norm();
  const double cos_half = q.w();
  if (sin_half < 1e-12) return 2.0 * q.vec();  // small-angle
  double angle = 2.0 * std::atan2(sin_half, cos_half);
  Vec3 axis = q.vec() / sin_half;
  if (angle > M_PI - 1e-9) {
    int imax = 0;
    axis.cwiseAbs().maxCoeff(&imax);
    if (axis[imax] < 0.0) axis = -axis;
    angle = M_PI;
  }
  return angle * axis;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

/// Nadir-looking pose with yaw measured counter-clockwise from north.
/// Camera x maps to pixel-east, camera y to pixel-south, camera z straight down.
inline Pose nadir_pose(const Vec3& position, double yaw_ccw_rad = 0.0) {
  Mat3 base;
  base << 1.0, 0.0, 0.0,
          0.0, -1.0, 0.0,
          0.0, 0.0, -1.0;
  const Mat3 yaw = Eigen::AngleAxisd(yaw_ccw_rad, Vec3::UnitZ()).toRotationMatrix();
  return Pose(Quat(yaw * base), position);
}

}  // namespace uavba

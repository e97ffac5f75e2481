#pragma once

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "uavba/ba_solver.hpp"
#include "uavba/terrain.hpp"

namespace uavba {

/// Metadata of one image in the acquisition stream.
struct StreamImage {
  int image_id = -1;
  int strip_id = -1;
  Footprint footprint;
};

/// A sliding group of images optimized jointly.
struct Cluster {
  std::vector<int> image_ids;    // carryover first, then new images, acquisition order
  std::vector<int> fixed_ids;    // carryover poses frozen at previous optimum
  std::vector<int> fusion_ids;   // carryover poses re-estimated then fused
  std::vector<int> injected_ids; // neighbor-strip images added by overlap detection
  int m_target = 0;
};

struct FusionWeights {
  double omega_old = 0.0;
  double omega_new = 0.0;

  void validate() const {
    if (omega_old < 0.0 || omega_new < 0.0 || omega_old + omega_new <= 0.0)
      throw ConfigError("fusion weights must be non-negative with positive sum");
  }
};

inline int carryover_count(int m_size, double overlap_fraction = 0.25) {
  return static_cast<int>(std::ceil(overlap_fraction * m_size));
}

/// Slice the stream into clusters of M new images prefixed by the carryover
/// of the previous cluster, and attach overlapping neighbor-strip images.
inline std::vector<Cluster> form_clusters(const std::vector<StreamImage>& stream, int m_size,
                                          double overlap_fraction = 0.25,
                                          double inject_threshold = 0.10) {
  if (m_size < 4) throw ConfigError("cluster size must be at least 4");
  const int n = static_cast<int>(stream.size());
  std::vector<Cluster> clusters;
  const int carry_n = carryover_count(m_size, overlap_fraction);

  std::vector<int> carry;  // stream indices
  int next_new = 0;
  while (next_new < n) {
    Cluster cl;
    cl.m_target = m_size;
    std::vector<int> member_idx = carry;
    const int take = std::min(m_size, n - next_new);
    for (int i = 0; i < take; ++i) member_idx.push_back(next_new + i);
    next_new += take;

    std::set<int> member_set;
    for (int idx : member_idx) {
      cl.image_ids.push_back(stream[idx].image_id);
      member_set.insert(idx);
    }

    // cross-strip injection: previously seen images of other strips whose
    // footprint overlaps any member
    const int first_new_idx = member_idx[carry.size()];
    for (int cand = 0; cand < first_new_idx; ++cand) {
      if (member_set.count(cand)) continue;
      bool other_strip = false;
      bool overlaps = false;
      for (int idx : member_idx) {
        if (stream[cand].strip_id == stream[idx].strip_id) continue;
        other_strip = true;
        double ov = 0.0;
        try {
          ov = footprint_overlap(stream[cand].footprint, stream[idx].footprint);
        } catch (const DegenerateFootprint&) {
          continue;  // extreme-terrain footprint, treated as non-overlapping
        }
        if (ov >= inject_threshold) {
          overlaps = true;
          break;
        }
      }
      if (other_strip && overlaps) cl.injected_ids.push_back(stream[cand].image_id);
    }

    // handoff split of the carryover: first half fixed, remainder fused
    const int nc = static_cast<int>(carry.size());
    const int n_fixed = (nc + 1) / 2;  // ceil(nc/2)
    for (int i = 0; i < nc; ++i) {
      const int id = stream[carry[i]].image_id;
      (i < n_fixed ? cl.fixed_ids : cl.fusion_ids).push_back(id);
    }

    clusters.push_back(std::move(cl));
    if (next_new >= n) break;
    carry.clear();
    const int keep = std::min(carry_n, static_cast<int>(member_idx.size()));
    for (int i = static_cast<int>(member_idx.size()) - keep;
         i < static_cast<int>(member_idx.size()); ++i)
      carry.push_back(member_idx[i]);
  }
  return clusters;
}

/// Initialize the next cluster's BA problem from the previous cluster's
/// result: fixed carryover poses frozen, fusion carryover initialized from
/// the previous optimum, everything else from nav; injected images fixed at
/// their previously optimized pose when available.
inline BAProblem handoff(const std::map<int, Pose>& prev_optimized, const Cluster& cluster,
                         const std::map<int, Pose>& nav_poses, const CameraModel& camera,
                         double robust_delta_px, double sigma_pos_m, double sigma_att_rad) {
  BAProblem problem;
  problem.camera = camera;
  problem.robust_delta_px = robust_delta_px;

  std::set<int> fixed_set(cluster.fixed_ids.begin(), cluster.fixed_ids.end());
  std::set<int> fusion_set(cluster.fusion_ids.begin(), cluster.fusion_ids.end());

  auto add_pose = [&](int id) {
    if (fixed_set.count(id)) {
      auto it = prev_optimized.find(id);
      if (it == prev_optimized.end()) throw MissingPose("fixed image " + std::to_string(id));
      problem.poses[id] = {it->second, true};
      return;
    }
    if (fusion_set.count(id)) {
      auto it = prev_optimized.find(id);
      if (it == prev_optimized.end()) throw MissingPose("fusion image " + std::to_string(id));
      problem.poses[id] = {it->second, false};
    } else {
      auto nav = nav_poses.find(id);
      if (nav == nav_poses.end()) throw MissingPose("nav pose for image " + std::to_string(id));
      problem.poses[id] = {nav->second, false};
    }
    auto nav = nav_poses.find(id);
    if (nav != nav_poses.end())
      problem.priors[id] = {nav->second.translation, nav->second.rotation, sigma_pos_m,
                            sigma_att_rad};
  };
  for (int id : cluster.image_ids) add_pose(id);
  for (int id : cluster.injected_ids) {
    auto it = prev_optimized.find(id);
    if (it != prev_optimized.end()) {
      problem.poses[id] = {it->second, true};  // already optimized, kept frozen
    } else {
      auto nav = nav_poses.find(id);
      if (nav == nav_poses.end()) throw MissingPose("nav pose for image " + std::to_string(id));
      problem.poses[id] = {nav->second, false};
      problem.priors[id] = {nav->second.translation, nav->second.rotation, sigma_pos_m,
                            sigma_att_rad};
    }
  }
  return problem;
}

/// Match-count-weighted pose blend between successive clusters: weighted
/// arithmetic translation mean and sign-aligned weighted quaternion mean.
inline Pose fuse_pose(const Pose& p_old, const Pose& p_new, const FusionWeights& w) {
  w.validate();
  const double total = w.omega_old + w.omega_new;
  const Vec3 t = (w.omega_old * p_old.translation + w.omega_new * p_new.translation) / total;

  Quat q_old = p_old.rotation.normalized();
  Quat q_new = p_new.rotation.normalized();
  if (q_old.dot(q_new) < 0.0) q_new.coeffs() *= -1.0;
  const double gap = 2.0 * std::acos(std::min(1.0, std::abs(q_old.dot(q_new))));
  if (gap >= M_PI / 2.0) throw AntipodalRotations();
  Quat q;
  q.coeffs() = w.omega_old * q_old.coeffs() + w.omega_new * q_new.coeffs();
  q.normalize();
  return Pose(q, t);
}

}  // namespace uavba

#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "uavba/features.hpp"
#include "uavba/geometry.hpp"

namespace uavba {

struct BAObservation {
  int image_id = -1;
  long track_id = -1;
  Vec2 pixel = Vec2::Zero();
};

struct PoseEntry {
  Pose pose;
  bool fixed = false;
};

/// Nav prior applied when a pose is not fixed; keeps results geo-referenced
/// and removes the gauge freedom when no pose is held fixed.
struct PosePrior {
  Vec3 position = Vec3::Zero();
  Quat rotation = Quat::Identity();
  double sigma_pos_m = 1.0;
  double sigma_att_rad = 0.0;  // 0 disables the attitude term
};

struct BAProblem {
  CameraModel camera;
  std::map<int, PoseEntry> poses;
  std::map<long, Vec3> points;
  std::vector<BAObservation> observations;
  std::map<int, PosePrior> priors;
  double robust_delta_px = 2.0;
  double obs_sigma_px = 1.0;  // reprojection weight 1/sigma^2 relative to the priors

  void validate() const {
    bool any_fixed = false;
    for (const auto& [id, p] : poses) any_fixed |= p.fixed;
    if (!any_fixed && priors.empty())
      throw ConfigError("ba: no fixed pose and no prior; gauge undetermined");
    for (const auto& o : observations) {
      if (!poses.count(o.image_id)) throw ConfigError("ba: observation references unknown pose");
      if (!points.count(o.track_id)) throw ConfigError("ba: observation references unknown point");
    }
  }
};

struct SolveOptions {
  int max_iterations = 100;
  double gradient_tol = 1e-8;   // infinity norm
  double cost_rel_tol = 1e-10;
  double step_tol = 1e-10;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double lambda_max = 1e12;
};

struct BAResult {
  std::map<int, Pose> poses;
  std::map<long, Vec3> points;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_norms;  // per observation, solver order
  std::vector<bool> outlier;           // behind-camera at convergence
  double wall_time_s = 0.0;
};

/// Huber loss on a squared input: rho(s) = s for s <= delta^2,
/// 2*delta*sqrt(s) - delta^2 otherwise. Returns (value, d rho / d s).
inline std::pair<double, double> robust_loss(double s, double delta) {
  if (s < 0.0 || delta <= 0.0) throw ConfigError("robust_loss: s >= 0 and delta > 0 required");
  const double d2 = delta * delta;
  if (s <= d2) return {s, 1.0};
  const double sq = std::sqrt(s);
  return {2.0 * delta * sq - d2, delta / sq};
}

/// Reprojection residual: observed pixel minus projected pixel.
inline Vec2 residual(const BAObservation& obs, const CameraModel& camera, const Pose& pose,
                     const Vec3& point) {
  return obs.pixel - project(camera, pose, point);
}

/// Linear (DLT) triangulation of one track from the given poses.
inline Vec3 triangulate(const std::vector<Observation>& observations,
                        const std::map<int, Pose>& poses, const CameraModel& camera) {
  if (observations.size() < 2) throw DegenerateBaseline("need at least two observations");
  double max_baseline = 0.0;
  for (size_t i = 0; i < observations.size(); ++i)
    for (size_t j = i + 1; j < observations.size(); ++j)
      max_baseline = std::max(max_baseline,
                              (poses.at(observations[i].image_id).translation -
                               poses.at(observations[j].image_id).translation)
                                  .norm());
  if (max_baseline < 1e-9) throw DegenerateBaseline();

  const double f = camera.focal_px();
  Eigen::MatrixXd a(2 * observations.size(), 4);
  for (size_t i = 0; i < observations.size(); ++i) {
    const Pose& pose = poses.at(observations[i].image_id);
    const Mat3 rt = pose.rotation_matrix().transpose();
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = rt;
    p.col(3) = -rt * pose.translation;
    const double xn = (observations[i].pixel.x() - camera.principal_point.x()) / f;
    const double yn = (observations[i].pixel.y() - camera.principal_point.y()) / f;
    a.row(2 * i) = xn * p.row(2) - p.row(0);
    a.row(2 * i + 1) = yn * p.row(2) - p.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-12) throw DegenerateBaseline("point at infinity");
  const Vec3 x = h.head<3>() / h[3];
  for (const auto& o : observations)
    if (poses.at(o.image_id).world_to_camera(x).z() <= kDepthEpsilon) throw BehindCamera();
  return x;
}

namespace detail {

/// Inverse of the SO(3) right Jacobian, for composing the attitude prior.
inline Mat3 right_jacobian_inv(const Vec3& phi) {
  const double angle = phi.norm();
  const Mat3 s = skew(phi);
  if (angle < 1e-8) return Mat3::Identity() + 0.5 * s;
  const double a2 = angle * angle;
  const double coef = 1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * std::sin(angle));
  return Mat3::Identity() + 0.5 * s + coef * s * s;
}

struct State {
  std::vector<Pose> poses;       // free poses, solver order
  std::vector<Vec3> points;      // free points, solver order
};

}  // namespace detail

/// Levenberg-Marquardt bundle adjustment with a Schur complement on the
/// points. Accepted steps strictly decrease the robust cost; fixed poses are
/// returned bit-identical.
inline BAResult solve(const BAProblem& problem, const SolveOptions& opt = {}) {
  const auto t_start = std::chrono::steady_clock::now();
  problem.validate();

  // solver indexing
  std::map<int, int> pose_index;   // image_id -> free pose idx, -1 fixed
  std::vector<int> pose_ids;
  for (const auto& [id, entry] : problem.poses) {
    if (entry.fixed) {
      pose_index[id] = -1;
    } else {
      pose_index[id] = static_cast<int>(pose_ids.size());
      pose_ids.push_back(id);
    }
  }
  std::map<long, int> point_index;
  std::vector<long> point_ids;
  for (const auto& [id, x] : problem.points) {
    point_index[id] = static_cast<int>(point_ids.size());
    point_ids.push_back(id);
  }
  const int np = static_cast<int>(pose_ids.size());
  const int nq = static_cast<int>(point_ids.size());

  detail::State state;
  state.poses.reserve(np);
  for (int p = 0; p < np; ++p) state.poses.push_back(problem.poses.at(pose_ids[p]).pose);
  state.points.reserve(nq);
  for (int q = 0; q < nq; ++q) state.points.push_back(problem.points.at(point_ids[q]));

  const size_t nobs = problem.observations.size();
  std::vector<Vec2> frozen(nobs, Vec2::Zero());  // last valid residual per observation
  std::vector<bool> ever_valid(nobs, false);

  auto pose_of = [&](const detail::State& s, int image_id) -> const Pose& {
    const int idx = pose_index.at(image_id);
    return idx >= 0 ? s.poses[idx] : problem.poses.at(image_id).pose;
  };

  // Robust cost of a state. Behind-camera observations contribute their frozen
  // residual; when update_frozen is set the frozen values are refreshed.
  const double w_obs = 1.0 / (problem.obs_sigma_px * problem.obs_sigma_px);

  auto evaluate_cost = [&](const detail::State& s, bool update_frozen,
                           std::vector<double>* norms = nullptr,
                           std::vector<bool>* invalid = nullptr) {
    double cost = 0.0;
    if (norms) norms->assign(nobs, 0.0);
    if (invalid) invalid->assign(nobs, false);
    for (size_t i = 0; i < nobs; ++i) {
      const BAObservation& o = problem.observations[i];
      const Pose& pose = pose_of(s, o.image_id);
      const Vec3& x = s.points[point_index.at(o.track_id)];
      Vec2 r;
      const Vec3 pc = pose.world_to_camera(x);
      if (pc.z() > kDepthEpsilon) {
        const double f = problem.camera.focal_px();
        r = o.pixel - Vec2(f * pc.x() / pc.z() + problem.camera.principal_point.x(),
                           f * pc.y() / pc.z() + problem.camera.principal_point.y());
        if (update_frozen) {
          frozen[i] = r;
          ever_valid[i] = true;
        }
      } else {
        r = frozen[i];
        if (invalid) (*invalid)[i] = true;
      }
      cost += w_obs * robust_loss(r.squaredNorm(), problem.robust_delta_px).first;
      if (norms) (*norms)[i] = r.norm();
    }
    for (int p = 0; p < np; ++p) {
      auto it = problem.priors.find(pose_ids[p]);
      if (it == problem.priors.end()) continue;
      const PosePrior& pr = it->second;
      cost += ((s.poses[p].translation - pr.position) / pr.sigma_pos_m).squaredNorm();
      if (pr.sigma_att_rad > 0.0) {
        const Vec3 dphi = rotation_log(pr.rotation.conjugate() * s.poses[p].rotation);
        cost += (dphi / pr.sigma_att_rad).squaredNorm();
      }
    }
    if (!std::isfinite(cost)) throw NumericalFailure();
    return cost;
  };

  BAResult result;
  result.initial_cost = evaluate_cost(state, true);

  double lambda = opt.lambda_init;
  double cost = result.initial_cost;
  bool converged = false;
  int iter = 0;

  // normal-equation storage
  std::vector<Eigen::Matrix<double, 6, 6>> b_blocks(np);
  std::vector<Eigen::Matrix<double, 6, 1>> g_pose(np);
  std::vector<Mat3> c_blocks(nq);
  std::vector<Vec3> g_point(nq);
  // per point: observing free poses and coupling blocks
  std::vector<std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>>> e_blocks(nq);

  for (iter = 0; iter < opt.max_iterations; ++iter) {
    for (int p = 0; p < np; ++p) {
      b_blocks[p].setZero();
      g_pose[p].setZero();
    }
    for (int q = 0; q < nq; ++q) {
      c_blocks[q].setZero();
      g_point[q].setZero();
      e_blocks[q].clear();
    }

    const double f = problem.camera.focal_px();
    double grad_inf = 0.0;

    for (size_t i = 0; i < nobs; ++i) {
      const BAObservation& o = problem.observations[i];
      const int p = pose_index.at(o.image_id);
      const int q = point_index.at(o.track_id);
      const Pose& pose = pose_of(state, o.image_id);
      const Vec3& x = state.points[q];
      const Vec3 pc = pose.world_to_camera(x);
      if (pc.z() <= kDepthEpsilon) continue;  // frozen: constant cost, no gradient
      const Vec2 r = o.pixel - Vec2(f * pc.x() / pc.z() + problem.camera.principal_point.x(),
                                    f * pc.y() / pc.z() + problem.camera.principal_point.y());
      const double w = w_obs * robust_loss(r.squaredNorm(), problem.robust_delta_px).second;

      Eigen::Matrix<double, 2, 3> j_pi;
      const double iz = 1.0 / pc.z();
      j_pi << f * iz, 0.0, -f * pc.x() * iz * iz,
              0.0, f * iz, -f * pc.y() * iz * iz;

      const Mat3 rt = pose.rotation_matrix().transpose();
      const Eigen::Matrix<double, 2, 3> j_point = -j_pi * rt;  // d r / d X
      Eigen::Matrix<double, 2, 6> j_pose;                      // d r / d [dtheta; dT]
      if (p >= 0) {
        j_pose.leftCols<3>() = -j_pi * skew(pc);
        j_pose.rightCols<3>() = j_pi * rt;
      }

      c_blocks[q] += w * j_point.transpose() * j_point;
      g_point[q] += w * j_point.transpose() * r;
      if (p >= 0) {
        b_blocks[p] += w * j_pose.transpose() * j_pose;
        g_pose[p] += w * j_pose.transpose() * r;
        e_blocks[q].emplace_back(p, Eigen::Matrix<double, 6, 3>(w * j_pose.transpose() * j_point));
      }
    }

    for (int p = 0; p < np; ++p) {
      auto it = problem.priors.find(pose_ids[p]);
      if (it == problem.priors.end()) continue;
      const PosePrior& pr = it->second;
      const double wp = 1.0 / (pr.sigma_pos_m * pr.sigma_pos_m);
      const Vec3 rp = state.poses[p].translation - pr.position;
      b_blocks[p].bottomRightCorner<3, 3>() += wp * Mat3::Identity();
      g_pose[p].tail<3>() += wp * rp;
      if (pr.sigma_att_rad > 0.0) {
        const Vec3 dphi = rotation_log(pr.rotation.conjugate() * state.poses[p].rotation);
        const Mat3 j = detail::right_jacobian_inv(dphi);
        const double wa = 1.0 / (pr.sigma_att_rad * pr.sigma_att_rad);
        b_blocks[p].topLeftCorner<3, 3>() += wa * j.transpose() * j;
        g_pose[p].head<3>() += wa * j.transpose() * dphi;
      }
    }

    for (int p = 0; p < np; ++p) grad_inf = std::max(grad_inf, g_pose[p].cwiseAbs().maxCoeff());
    for (int q = 0; q < nq; ++q) grad_inf = std::max(grad_inf, g_point[q].cwiseAbs().maxCoeff());
    if (grad_inf < opt.gradient_tol) {
      converged = true;
      break;
    }

    // inner damping loop
    bool accepted = false;
    while (lambda <= opt.lambda_max) {
      // damped copies of the diagonal blocks (Marquardt scaling)
      std::vector<Mat3> c_damped(nq);
      for (int q = 0; q < nq; ++q) {
        c_damped[q] = c_blocks[q];
        for (int k = 0; k < 3; ++k)
          c_damped[q](k, k) += lambda * std::max(c_blocks[q](k, k), 1e-12);
      }

      Eigen::MatrixXd s_mat = Eigen::MatrixXd::Zero(6 * np, 6 * np);
      Eigen::VectorXd s_rhs = Eigen::VectorXd::Zero(6 * np);
      for (int p = 0; p < np; ++p) {
        Eigen::Matrix<double, 6, 6> b = b_blocks[p];
        for (int k = 0; k < 6; ++k) b(k, k) += lambda * std::max(b_blocks[p](k, k), 1e-12);
        s_mat.block<6, 6>(6 * p, 6 * p) = b;
        s_rhs.segment<6>(6 * p) = -g_pose[p];
      }
      std::vector<Mat3> c_inv(nq);
      for (int q = 0; q < nq; ++q) {
        c_inv[q] = c_damped[q].inverse();
        const Vec3 ci_g = c_inv[q] * g_point[q];
        for (const auto& [p1, e1] : e_blocks[q]) {
          s_rhs.segment<6>(6 * p1) += e1 * ci_g;
          for (const auto& [p2, e2] : e_blocks[q])
            s_mat.block<6, 6>(6 * p1, 6 * p2) -= e1 * c_inv[q] * e2.transpose();
        }
      }

      Eigen::VectorXd dp;
      if (np > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(s_mat);
        if (ldlt.info() != Eigen::Success) {
          lambda *= opt.lambda_up;
          continue;
        }
        dp = ldlt.solve(s_rhs);
      } else {
        dp = Eigen::VectorXd::Zero(0);
      }

      detail::State trial = state;
      double step_sq = dp.squaredNorm();
      for (int p = 0; p < np; ++p) {
        const Vec3 dtheta = dp.segment<3>(6 * p);
        const Vec3 dt = dp.segment<3>(6 * p + 3);
        trial.poses[p].rotation = (state.poses[p].rotation * rotation_exp(dtheta)).normalized();
        trial.poses[p].translation += dt;
      }
      for (int q = 0; q < nq; ++q) {
        Vec3 rhs = -g_point[q];
        for (const auto& [p1, e1] : e_blocks[q]) rhs -= e1.transpose() * dp.segment<6>(6 * p1);
        const Vec3 dx = c_inv[q] * rhs;
        trial.points[q] += dx;
        step_sq += dx.squaredNorm();
      }

      const double trial_cost = evaluate_cost(trial, false);
      if (trial_cost < cost) {
        state = std::move(trial);
        const double rel_change = (cost - trial_cost) / std::max(cost, 1e-300);
        cost = trial_cost;
        evaluate_cost(state, true);  // refresh frozen residuals
        lambda = std::max(lambda / opt.lambda_down, 1e-12);
        accepted = true;
        if (rel_change < opt.cost_rel_tol || std::sqrt(step_sq) < opt.step_tol) converged = true;
        break;
      }
      lambda *= opt.lambda_up;
    }
    if (!accepted) {
      converged = true;  // no improving step found at any damping; local minimum
      break;
    }
    if (converged) {
      ++iter;
      break;
    }
  }

  for (int p = 0; p < np; ++p) result.poses[pose_ids[p]] = state.poses[p];
  for (const auto& [id, entry] : problem.poses)
    if (entry.fixed) result.poses[id] = entry.pose;
  for (int q = 0; q < nq; ++q) result.points[point_ids[q]] = state.points[q];
  std::vector<bool> invalid;
  result.final_cost = evaluate_cost(state, false, &result.residual_norms, &invalid);
  result.outlier = invalid;
  result.iterations = iter;
  result.converged = converged;
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---- strategy modes (baselines of the comparison protocol) ----

struct SequenceImage {
  int image_id = -1;
  Pose nav_pose;
  std::vector<Feature> features;
};

struct SequenceData {
  CameraModel camera;
  std::vector<SequenceImage> images;  // acquisition order
};

struct IncrementalOptions {
  SolveOptions solve;
  MatchOptions match;
  double robust_delta_px = 2.0;
  double obs_sigma_px = 1.0;
  int min_matches = 15;
  double sigma_pos_m = 1.0;
  double sigma_att_rad = deg2rad(0.2);
  StageTimings* timings = nullptr;  // optional stage clock, owned by the caller
};

namespace detail {

inline BAProblem assemble_problem(const CameraModel& camera,
                                  const std::map<int, Pose>& initial_poses,
                                  const std::map<int, PosePrior>& priors,
                                  const std::vector<Track>& tracks, double robust_delta,
                                  const std::map<int, bool>& fixed_flags = {}) {
  BAProblem problem;
  problem.camera = camera;
  problem.robust_delta_px = robust_delta;
  problem.priors = priors;
  for (const auto& [id, pose] : initial_poses) {
    auto it = fixed_flags.find(id);
    problem.poses[id] = {pose, it != fixed_flags.end() && it->second};
  }
  for (const auto& t : tracks) {
    Vec3 x;
    try {
      x = t.world_point ? *t.world_point : triangulate(t.observations, initial_poses, camera);
    } catch (const Error&) {
      continue;  // degenerate or behind-camera track, skipped
    }
    problem.points[t.track_id] = x;
    for (const auto& o : t.observations)
      problem.observations.push_back({o.image_id, t.track_id, o.pixel});
  }
  return problem;
}

}  // namespace detail

/// Traditional incremental BA: each new image is matched against the previous
/// one, the track list grows monotonically, and the full problem is
/// re-optimized at every step.
inline std::vector<BAResult> run_incremental(const SequenceData& seq,
                                             const IncrementalOptions& opt = {}) {
  std::vector<BAResult> results;
  if (seq.images.size() < 2) return results;

  std::map<int, std::vector<Feature>> features_by_image;
  std::map<int, Pose> poses;     // current estimates
  std::map<int, PosePrior> priors;
  std::vector<Match> all_matches;

  auto add_image = [&](const SequenceImage& im) {
    features_by_image[im.image_id] = im.features;
    poses[im.image_id] = im.nav_pose;
    priors[im.image_id] = {im.nav_pose.translation, im.nav_pose.rotation, opt.sigma_pos_m,
                           opt.sigma_att_rad};
  };
  add_image(seq.images[0]);

  for (size_t k = 1; k < seq.images.size(); ++k) {
    const SequenceImage& prev = seq.images[k - 1];
    const SequenceImage& cur = seq.images[k];
    add_image(cur);
    const auto t_match = std::chrono::steady_clock::now();
    const std::vector<Match> m = match_patchwise(prev.features, cur.features, prev.image_id,
                                                 cur.image_id, {}, opt.match);
    if (opt.timings)
      opt.timings->match_s +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_match).count();
    if (static_cast<int>(m.size()) < opt.min_matches)
      throw RegistrationFailure("image " + std::to_string(cur.image_id) + " shares only " +
                                std::to_string(m.size()) + " matches");
    all_matches.insert(all_matches.end(), m.begin(), m.end());

    const std::vector<Track> tracks = build_tracks(features_by_image, all_matches);
    BAProblem problem = detail::assemble_problem(seq.camera, poses, priors, tracks,
                                                 opt.robust_delta_px);
    problem.obs_sigma_px = opt.obs_sigma_px;
    BAResult r = solve(problem, opt.solve);
    for (const auto& [id, pose] : r.poses) poses[id] = pose;
    results.push_back(std::move(r));
  }
  return results;
}

/// Cluster-incremental baseline: incremental BA restricted to clusters of M
/// new images, the track list reset at each cluster entrance except for the
/// carryover images. No cross-strip injection.
inline std::vector<BAResult> run_cluster_incremental(const SequenceData& seq, int m_size,
                                                     int carryover,
                                                     const IncrementalOptions& opt = {}) {
  if (m_size < 3) throw ConfigError("cluster size must be at least 3");
  if (carryover >= m_size) throw ConfigError("carryover must be smaller than cluster size");
  std::vector<BAResult> results;
  const int n = static_cast<int>(seq.images.size());
  std::map<int, Pose> carried;  // optimized poses handed to the next cluster

  int next_new = 0;
  std::vector<int> carry_idx;  // indices into seq.images
  while (next_new < n) {
    std::vector<int> members = carry_idx;
    const int take = std::min(m_size, n - next_new);
    for (int i = 0; i < take; ++i) members.push_back(next_new + i);
    next_new += take;

    SequenceData cluster_seq;
    cluster_seq.camera = seq.camera;
    for (int idx : members) {
      SequenceImage im = seq.images[idx];
      auto it = carried.find(im.image_id);
      if (it != carried.end()) im.nav_pose = it->second;  // optimized init from previous cluster
      cluster_seq.images.push_back(std::move(im));
    }
    std::vector<BAResult> cluster_results = run_incremental(cluster_seq, opt);
    if (!cluster_results.empty()) {
      const BAResult& last = cluster_results.back();
      carried.clear();
      for (const auto& [id, pose] : last.poses) carried[id] = pose;
      results.push_back(last);
    }

    carry_idx.clear();
    const int keep = std::min<int>(carryover, static_cast<int>(members.size()));
    for (int i = static_cast<int>(members.size()) - keep; i < static_cast<int>(members.size()); ++i)
      carry_idx.push_back(members[i]);
    if (next_new >= n) break;
  }
  return results;
}

}  // namespace uavba

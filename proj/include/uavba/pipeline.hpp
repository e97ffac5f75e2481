#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "uavba/ba_solver.hpp"
#include "uavba/cluster_manager.hpp"
#include "uavba/io.hpp"
#include "uavba/mission_sim.hpp"
#include "uavba/patch_tracker.hpp"

namespace uavba {

enum class PipelineMode { Proposed, Incremental, ClusterIncremental, Global };

struct PipelineOptions {
  PipelineMode mode = PipelineMode::Proposed;
  int grid_rows = 4;
  int grid_cols = 4;
  double patch_size_px = 100.0;
  int cluster_m = 12;
  double overlap_fraction = 0.25;
  TrackerConfig::TransferMode transfer_mode = TrackerConfig::TransferMode::Footprint;
  double robust_delta_px = 2.0;
  double obs_sigma_px = 0.5;        // observation weighting relative to the nav priors
  double overlap_threshold = 0.10;  // footprint overlap for matching and injection
  int min_matches = 15;
  double sigma_pos_m = 1.0;
  double sigma_att_deg = 0.2;
  SolveOptions solve;
  MatchOptions match{.ratio = 0.8, .max_distance = 0.7};
};

struct ClusterLog {
  std::vector<int> member_ids;
  std::vector<int> injected_ids;
  std::vector<int> fixed_ids;
  std::vector<int> fusion_ids;
  std::map<int, std::pair<double, double>> fusion_weights;     // id -> (old, new)
  std::map<int, double> fusion_pose_delta_m;                   // pre/post fusion position shift
  double cost = 0.0;
  int iterations = 0;
};

struct PipelineResult {
  std::map<int, Pose> poses;
  std::map<long, Vec3> points;
  std::vector<double> inlier_residual_norms;
  std::map<int, std::vector<Feature>> features_by_image;  // last context per image
  std::vector<Match> matches;                             // all matches produced
  std::vector<Track> tracks;                              // final stage tracks
  std::vector<BAObservation> observations;                // final stage observations
  std::vector<double> observation_residuals;
  std::vector<bool> observation_outliers;
  std::vector<ClusterLog> cluster_logs;
  std::vector<PatchTrajectoryRow> patch_rows;
  StageTimings timings;
  double final_cost = 0.0;
  int image_count = 0;

  RunSummary summary() const {
    RunSummary s;
    s.poses = poses;
    s.inlier_residual_norms = inlier_residual_norms;
    s.timings = timings;
    s.image_count = image_count;
    return s;
  }
};

/// Per-image front-end state: nav footprint and the tracked patch set.
struct FrontEndImage {
  int image_id = -1;
  int strip_id = -1;
  Pose nav_pose;
  Footprint footprint;
  std::vector<PatchState> states;
  std::vector<PatchWindow> own_windows;
};

struct FrontEnd {
  PatchGrid grid;
  std::vector<FrontEndImage> images;  // acquisition order
};

/// Extraction callback: features of one image for a given set of windows.
using ExtractFn =
    std::function<std::vector<Feature>(int image_id, const std::vector<PatchWindow>&)>;

/// One continuous patch grid tracked across the whole stream using nav poses
/// and footprints; out-of-band centers wrap to the opposite edge.
inline FrontEnd build_front_end(const Mission& mission, const PipelineOptions& opt) {
  FrontEnd fe;
  GridInit init = make_grid(opt.grid_rows, opt.grid_cols, opt.patch_size_px,
                            mission.camera.width_px, mission.camera.height_px);
  fe.grid = init.grid;

  TrackerConfig cfg;
  cfg.nominal_depth_m = mission.plan.altitude_m;
  cfg.transfer_mode = opt.transfer_mode;

  std::vector<PatchState> states = init.states;
  const FrontEndImage* prev = nullptr;
  for (const auto& im : mission.images) {
    FrontEndImage f;
    f.image_id = im.image_id;
    f.strip_id = im.strip_id;
    f.nav_pose = im.nav_pose;
    f.footprint = compute_footprint(mission.camera, im.nav_pose, mission.dsm);
    if (prev) {
      if (cfg.transfer_mode == TrackerConfig::TransferMode::Nav) {
        states = transfer_nav(states, prev->nav_pose, im.nav_pose, mission.camera, cfg);
        for (size_t i = 0; i < states.size(); ++i)
          if (states[i].lost) {
            states[i].center_px = grid_home_center(fe.grid, static_cast<int>(i));
            states[i].lost = false;
          }
      } else {
        const double ppm = footprint_px_per_m(prev->footprint, mission.camera.width_px);
        states = transfer_footprint(states, prev->footprint, f.footprint, fe.grid, ppm);
      }
      states = wrap_patches(states, mission.camera.width_px, mission.camera.height_px,
                            opt.patch_size_px);
    }
    f.states = states;
    f.own_windows = patch_windows(states, opt.patch_size_px);
    fe.images.push_back(std::move(f));
    prev = &fe.images.back();
  }
  return fe;
}

/// Synthetic extraction: landmarks imaged through the truth pose with seeded
/// per-image observation noise; deterministic regardless of call order.
inline ExtractFn make_synth_extractor(const Mission& mission) {
  return [&mission](int image_id, const std::vector<PatchWindow>& windows) {
    const MissionImage* im = mission.find_image(image_id);
    if (!im) throw IdMismatch("unknown image id " + std::to_string(image_id));
    std::mt19937_64 rng(mission.seed * 0x9e3779b97f4a7c15ULL +
                        static_cast<std::uint64_t>(image_id) + 1);
    return synth_observations(mission.landmarks, mission.camera, im->truth_pose, windows,
                              image_id, mission.noise.observation_px, rng);
  };
}

namespace detail {

struct StageClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double stop() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

/// Merge features of one image that are the same physical detection (identical
/// position) into one canonical index, so a corner seen through both an own
/// window and an injected window joins a single track.
inline std::vector<int> canonical_indices(const std::vector<Feature>& feats) {
  std::vector<int> canon(feats.size());
  std::map<std::pair<double, double>, int> seen;
  for (int i = 0; i < static_cast<int>(feats.size()); ++i) {
    const auto key = std::make_pair(feats[i].position_px.x(), feats[i].position_px.y());
    auto [it, inserted] = seen.emplace(key, i);
    canon[i] = it->second;
  }
  return canon;
}

inline int injected_patch_id(int source_image_id, int patch_id) {
  return (source_image_id + 1) * 100000 + patch_id;
}

}  // namespace detail

/// Proposed mode (and its single-cluster degeneracy, mode=Global): sliding
/// clusters with carryover handoff, cross-strip patch injection, and weighted
/// pose fusion between clusters.
inline PipelineResult run_pipeline(const Mission& mission, const PipelineOptions& opt,
                                   const ExtractFn& extract_in = {}) {
  PipelineResult out;
  const detail::StageClock total_clock;
  const ExtractFn extract = extract_in ? extract_in : make_synth_extractor(mission);
  const FrontEnd fe = build_front_end(mission, opt);
  const int n = static_cast<int>(fe.images.size());
  out.image_count = n;

  std::map<int, const FrontEndImage*> by_id;
  for (const auto& f : fe.images) by_id[f.image_id] = &f;
  for (const auto& f : fe.images)
    for (const auto& s : f.states)
      out.patch_rows.push_back({f.image_id, s.patch_id, s.center_px, s.generation});

  std::map<int, Pose> nav_poses;
  for (const auto& f : fe.images) nav_poses[f.image_id] = f.nav_pose;

  const double sigma_att_rad = deg2rad(opt.sigma_att_deg);

  auto timed_extract = [&](int image_id, const std::vector<PatchWindow>& windows) {
    const detail::StageClock c;
    auto f = extract(image_id, windows);
    out.timings.extract_s += c.stop();
    return f;
  };
  auto timed_match = [&](const std::vector<Feature>& a, const std::vector<Feature>& b, int ia,
                         int ib, const std::unordered_map<int, int>& pmap) {
    const detail::StageClock c;
    auto m = match_patchwise(a, b, ia, ib, pmap, opt.match);
    out.timings.match_s += c.stop();
    return m;
  };

  if (opt.mode == PipelineMode::Incremental || opt.mode == PipelineMode::ClusterIncremental) {
    SequenceData seq;
    seq.camera = mission.camera;
    for (const auto& f : fe.images) {
      SequenceImage im;
      im.image_id = f.image_id;
      im.nav_pose = f.nav_pose;
      im.features = timed_extract(f.image_id, f.own_windows);
      out.features_by_image[f.image_id] = im.features;
      seq.images.push_back(std::move(im));
    }
    IncrementalOptions iopt;
    iopt.solve = opt.solve;
    iopt.match = opt.match;
    iopt.robust_delta_px = opt.robust_delta_px;
    iopt.obs_sigma_px = opt.obs_sigma_px;
    iopt.min_matches = opt.min_matches;
    iopt.sigma_pos_m = opt.sigma_pos_m;
    iopt.sigma_att_rad = sigma_att_rad;
    iopt.timings = &out.timings;

    std::vector<BAResult> results;
    if (opt.mode == PipelineMode::Incremental) {
      results = run_incremental(seq, iopt);
      if (!results.empty()) {
        const BAResult& last = results.back();
        out.poses = last.poses;
        out.points = last.points;
        out.final_cost = last.final_cost;
        for (size_t i = 0; i < last.residual_norms.size(); ++i)
          if (!last.outlier[i]) out.inlier_residual_norms.push_back(last.residual_norms[i]);
      }
    } else {
      const int carry = carryover_count(opt.cluster_m, opt.overlap_fraction);
      results = run_cluster_incremental(seq, opt.cluster_m, carry, iopt);
      for (const BAResult& r : results) {
        for (const auto& [id, pose] : r.poses) out.poses[id] = pose;
        for (size_t i = 0; i < r.residual_norms.size(); ++i)
          if (!r.outlier[i]) out.inlier_residual_norms.push_back(r.residual_norms[i]);
        out.final_cost += r.final_cost;
      }
      if (!results.empty())
        for (const auto& [id, x] : results.back().points) out.points[id] = x;
    }
    out.timings.total_s = total_clock.stop();
    return out;
  }

  // Global and Proposed share the cluster machinery; Global is the
  // single-cluster instance with M = image count.
  const int m_size = (opt.mode == PipelineMode::Global) ? n : opt.cluster_m;
  std::vector<StreamImage> stream;
  for (const auto& f : fe.images) stream.push_back({f.image_id, f.strip_id, f.footprint});
  const std::vector<Cluster> clusters =
      form_clusters(stream, std::max(4, m_size), opt.overlap_fraction, opt.overlap_threshold);

  std::map<int, Pose> optimized;               // best pose known so far, per image
  std::map<int, std::vector<Feature>> own_features;  // cache for own-window extraction
  auto own_feats = [&](int id) -> const std::vector<Feature>& {
    auto it = own_features.find(id);
    if (it == own_features.end())
      it = own_features.emplace(id, timed_extract(id, by_id.at(id)->own_windows)).first;
    return it->second;
  };
  std::map<int, int> prev_inlier_obs;  // fusion weights from the previous cluster

  long point_id_base = 0;
  for (size_t ci = 0; ci < clusters.size(); ++ci) {
    const Cluster& cluster = clusters[ci];
    ClusterLog log;
    log.member_ids = cluster.image_ids;
    log.injected_ids = cluster.injected_ids;
    log.fixed_ids = cluster.fixed_ids;
    log.fusion_ids = cluster.fusion_ids;

    std::set<int> member_set(cluster.image_ids.begin(), cluster.image_ids.end());
    std::vector<int> participants = cluster.image_ids;
    for (int id : cluster.injected_ids) participants.push_back(id);

    // injected cross-strip windows per member image
    std::map<int, std::vector<PatchWindow>> extra_windows;
    // per ordered cross-strip pair: patch map for injection matching
    std::map<std::pair<int, int>, std::unordered_map<int, int>> inject_maps;
    for (int src : participants) {
      const FrontEndImage& s = *by_id.at(src);
      for (int dst : cluster.image_ids) {
        if (dst == src) continue;
        const FrontEndImage& t = *by_id.at(dst);
        if (t.strip_id == s.strip_id) continue;
        // only project from earlier images into later ones
        if (!(src < dst) && member_set.count(src)) continue;
        double ov;
        try {
          ov = footprint_overlap(s.footprint, t.footprint);
        } catch (const DegenerateFootprint&) {
          continue;
        }
        if (ov < opt.overlap_threshold) continue;
        const double ppm = footprint_px_per_m(s.footprint, mission.camera.width_px);
        std::vector<PatchState> injected;
        try {
          injected = cross_strip_project(s.states, s.footprint, t.footprint, fe.grid, ppm,
                                         opt.overlap_threshold);
        } catch (const NoOverlap&) {
          continue;
        }
        if (injected.empty()) continue;
        std::unordered_map<int, int> pmap;
        for (auto& p : injected) {
          const int nid = detail::injected_patch_id(src, p.patch_id);
          pmap[p.patch_id] = nid;
          p.patch_id = nid;
        }
        auto w = patch_windows(injected, opt.patch_size_px);
        auto& dstw = extra_windows[dst];
        dstw.insert(dstw.end(), w.begin(), w.end());
        inject_maps[{src, dst}] = std::move(pmap);
      }
    }

    // features: members get own + injected windows, injected images own only
    std::map<int, std::vector<Feature>> features;
    for (int id : cluster.image_ids) {
      std::vector<PatchWindow> windows = by_id.at(id)->own_windows;
      auto it = extra_windows.find(id);
      if (it != extra_windows.end())
        windows.insert(windows.end(), it->second.begin(), it->second.end());
      features[id] = timed_extract(id, windows);
    }
    for (int id : cluster.injected_ids) features[id] = own_feats(id);

    // matching: identity map for member pairs, injection maps across strips
    std::vector<Match> matches;
    auto consider_pair = [&](int ia, int ib) {
      const FrontEndImage& a = *by_id.at(ia);
      const FrontEndImage& b = *by_id.at(ib);
      double ov;
      try {
        ov = footprint_overlap(a.footprint, b.footprint);
      } catch (const DegenerateFootprint&) {
        return;
      }
      if (ov < opt.overlap_threshold) return;
      if (member_set.count(ia) && member_set.count(ib)) {
        auto m = timed_match(features.at(ia), features.at(ib), ia, ib, {});
        matches.insert(matches.end(), m.begin(), m.end());
      }
      auto im = inject_maps.find({ia, ib});
      if (im != inject_maps.end()) {
        auto m = timed_match(features.at(ia), features.at(ib), ia, ib, im->second);
        matches.insert(matches.end(), m.begin(), m.end());
      }
    };
    for (size_t i = 0; i < participants.size(); ++i)
      for (size_t j = i + 1; j < participants.size(); ++j) {
        const int ia = std::min(participants[i], participants[j]);
        const int ib = std::max(participants[i], participants[j]);
        if (!member_set.count(ib)) continue;  // target must be a member
        consider_pair(ia, ib);
      }

    // canonicalize duplicate detections before track building
    std::map<int, std::vector<int>> canon;
    for (const auto& [id, feats] : features) canon[id] = detail::canonical_indices(feats);
    std::vector<Match> canon_matches = matches;
    for (auto& m : canon_matches) {
      m.feat_a = canon.at(m.image_a)[m.feat_a];
      m.feat_b = canon.at(m.image_b)[m.feat_b];
    }
    std::vector<Track> tracks = build_tracks(features, canon_matches);
    for (auto& t : tracks) t.track_id += point_id_base;
    point_id_base += 10'000'000;

    BAProblem problem = handoff(optimized, cluster, nav_poses, mission.camera,
                                opt.robust_delta_px, opt.sigma_pos_m, sigma_att_rad);
    problem.obs_sigma_px = opt.obs_sigma_px;
    {
      std::map<int, Pose> init_poses;
      for (const auto& [id, entry] : problem.poses) init_poses[id] = entry.pose;
      for (const auto& t : tracks) {
        Vec3 x;
        try {
          x = triangulate(t.observations, init_poses, mission.camera);
        } catch (const Error&) {
          continue;
        }
        problem.points[t.track_id] = x;
        for (const auto& o : t.observations)
          problem.observations.push_back({o.image_id, t.track_id, o.pixel});
      }
    }

    BAResult result = solve(problem, opt.solve);
    log.cost = result.final_cost;
    log.iterations = result.iterations;

    // inlier bookkeeping for metrics and fusion weights
    std::map<int, int> inlier_obs;
    for (size_t i = 0; i < problem.observations.size(); ++i) {
      if (result.outlier[i]) continue;
      inlier_obs[problem.observations[i].image_id] += 1;
      out.inlier_residual_norms.push_back(result.residual_norms[i]);
    }

    // pose handoff: fixed stay, fusion blended by match-count weights
    std::set<int> fusion_set(cluster.fusion_ids.begin(), cluster.fusion_ids.end());
    for (const auto& [id, pose] : result.poses) {
      if (fusion_set.count(id)) {
        const Pose& p_old = optimized.at(id);
        FusionWeights w{static_cast<double>(prev_inlier_obs.count(id) ? prev_inlier_obs[id] : 0),
                        static_cast<double>(inlier_obs.count(id) ? inlier_obs[id] : 0)};
        if (w.omega_old + w.omega_new <= 0.0) w = {1.0, 1.0};
        Pose fused;
        try {
          fused = fuse_pose(p_old, pose, w);
        } catch (const AntipodalRotations&) {
          fused = pose;  // nav noise would have to be extreme; keep the fresh estimate
        }
        log.fusion_weights[id] = {w.omega_old, w.omega_new};
        log.fusion_pose_delta_m[id] = (fused.translation - pose.translation).norm();
        optimized[id] = fused;
      } else {
        optimized[id] = pose;
      }
    }
    prev_inlier_obs = inlier_obs;

    for (const auto& [id, x] : result.points) out.points[id] = x;
    if (ci + 1 == clusters.size()) {
      out.tracks = tracks;
      out.observations = problem.observations;
      out.observation_residuals = result.residual_norms;
      out.observation_outliers = result.outlier;
      out.final_cost = result.final_cost;
    }
    for (const auto& [id, feats] : features) out.features_by_image[id] = feats;
    out.matches.insert(out.matches.end(), matches.begin(), matches.end());
    out.cluster_logs.push_back(std::move(log));
  }

  out.poses = optimized;
  out.timings.total_s = total_clock.stop();
  return out;
}

}  // namespace uavba

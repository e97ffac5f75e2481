#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "uavba/geometry.hpp"
#include "uavba/image.hpp"
#include "uavba/patch_tracker.hpp"

namespace uavba {

struct Feature {
  int image_id = -1;
  int patch_id = -1;
  Vec2 position_px = Vec2::Zero();
  Eigen::VectorXd descriptor;  // unit norm
  double score = 0.0;
  long landmark_id = -1;  // simulator provenance; -1 for detected features
};

/// Match between two features of the same patch id.
struct Match {
  int image_a = -1;
  int image_b = -1;
  int feat_a = -1;  // index into image a's feature vector
  int feat_b = -1;
  int patch_id = -1;
  double distance = 0.0;
};

struct Observation {
  int image_id = -1;
  Vec2 pixel = Vec2::Zero();
};

struct Track {
  long track_id = -1;
  std::vector<Observation> observations;  // unique image ids
  std::optional<Vec3> world_point;
};

struct DetectOptions {
  double score_threshold = 50.0;  // min-eigenvalue response
  int max_per_patch = 50;
  int nms_radius = 3;
  int descriptor_half = 5;  // 11x11 window
};

/// Axis-aligned pixel window of a patch.
struct PatchWindow {
  int patch_id = -1;
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
  bool contains(const Vec2& p) const {
    return p.x() >= x_min && p.x() < x_max && p.y() >= y_min && p.y() < y_max;
  }
};

inline std::vector<PatchWindow> patch_windows(const std::vector<PatchState>& states,
                                              double patch_size_px) {
  std::vector<PatchWindow> out;
  const double h = patch_size_px / 2.0;
  for (const auto& s : states)
    out.push_back({s.patch_id, s.center_px.x() - h, s.center_px.y() - h,
                   s.center_px.x() + h, s.center_px.y() + h});
  return out;
}

namespace detail {

inline Eigen::VectorXd intensity_descriptor(const ImageRaster& img, int cx, int cy, int half) {
  const int side = 2 * half + 1;
  Eigen::VectorXd d(side * side);
  int k = 0;
  for (int y = cy - half; y <= cy + half; ++y)
    for (int x = cx - half; x <= cx + half; ++x) d[k++] = img.at(x, y);
  d.array() -= d.mean();
  const double n = d.norm();
  if (n > 1e-12) d /= n;
  return d;
}

}  // namespace detail

/// Shi-Tomasi style corner detection restricted to one patch window.
/// Minimum-eigenvalue score of the 3x3-aggregated structure tensor, non-max
/// suppressed, strongest max_per_patch kept.
inline std::vector<Feature> detect(const ImageRaster& img, const PatchWindow& window,
                                   int image_id, const DetectOptions& opt = {}) {
  const int margin = opt.descriptor_half + 2;
  const int x0 = std::max(static_cast<int>(std::ceil(window.x_min)), margin);
  const int y0 = std::max(static_cast<int>(std::ceil(window.y_min)), margin);
  const int x1 = std::min(static_cast<int>(std::floor(window.x_max)), img.width - margin - 1);
  const int y1 = std::min(static_cast<int>(std::floor(window.y_max)), img.height - margin - 1);
  if (x1 <= x0 || y1 <= y0) return {};

  const int w = x1 - x0 + 1, h = y1 - y0 + 1;
  std::vector<double> score(static_cast<size_t>(w) * h, 0.0);
  auto sobel = [&](int x, int y, double& gx, double& gy) {
    gx = (img.at(x + 1, y - 1) + 2.0 * img.at(x + 1, y) + img.at(x + 1, y + 1)) -
         (img.at(x - 1, y - 1) + 2.0 * img.at(x - 1, y) + img.at(x - 1, y + 1));
    gy = (img.at(x - 1, y + 1) + 2.0 * img.at(x, y + 1) + img.at(x + 1, y + 1)) -
         (img.at(x - 1, y - 1) + 2.0 * img.at(x, y - 1) + img.at(x + 1, y - 1));
  };
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double a = 0.0, b = 0.0, c = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          double gx, gy;
          sobel(x + dx, y + dy, gx, gy);
          a += gx * gx;
          b += gx * gy;
          c += gy * gy;
        }
      // smaller eigenvalue of [[a,b],[b,c]], normalized by window size
      const double tr = 0.5 * (a + c);
      const double det = a * c - b * b;
      score[(y - y0) * static_cast<size_t>(w) + (x - x0)] =
          (tr - std::sqrt(std::max(0.0, tr * tr - det))) / (9.0 * 16.0);
    }

  std::vector<Feature> found;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double s = score[(y - y0) * static_cast<size_t>(w) + (x - x0)];
      if (s < opt.score_threshold) continue;
      bool is_max = true;
      for (int dy = -opt.nms_radius; dy <= opt.nms_radius && is_max; ++dy)
        for (int dx = -opt.nms_radius; dx <= opt.nms_radius && is_max; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < x0 || nx > x1 || ny < y0 || ny > y1) continue;
          const double ns = score[(ny - y0) * static_cast<size_t>(w) + (nx - x0)];
          if (ns > s || (ns == s && (dy < 0 || (dy == 0 && dx < 0)))) is_max = false;
        }
      if (!is_max) continue;
      Feature f;
      f.image_id = image_id;
      f.patch_id = window.patch_id;
      f.position_px = Vec2(x, y);
      f.score = s;
      f.descriptor = detail::intensity_descriptor(img, x, y, opt.descriptor_half);
      found.push_back(std::move(f));
    }
  std::sort(found.begin(), found.end(), [](const Feature& a, const Feature& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.position_px.y() != b.position_px.y()) return a.position_px.y() < b.position_px.y();
    return a.position_px.x() < b.position_px.x();
  });
  if (static_cast<int>(found.size()) > opt.max_per_patch) found.resize(opt.max_per_patch);
  return found;
}

inline std::vector<Feature> detect_all(const ImageRaster& img,
                                       const std::vector<PatchWindow>& windows, int image_id,
                                       const DetectOptions& opt = {}) {
  std::vector<Feature> out;
  for (const auto& w : windows) {
    auto f = detect(img, w, image_id, opt);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

struct MatchOptions {
  double ratio = 0.8;  // Lowe ratio on L2 descriptor distance
  double max_distance = std::numeric_limits<double>::infinity();  // absolute gate
};

namespace detail {

/// Nearest and second-nearest candidate of `query` among `candidates`.
/// Returns index of nearest, or -1; the ratio test accepts a sole candidate.
inline int nearest_with_ratio(const Eigen::VectorXd& query, const std::vector<Feature>& feats,
                              const std::vector<int>& candidates, double ratio,
                              double& best_dist) {
  int best = -1;
  double d1 = std::numeric_limits<double>::infinity();
  double d2 = std::numeric_limits<double>::infinity();
  for (int idx : candidates) {
    const double d = (feats[idx].descriptor - query).norm();
    if (d < d1) {
      d2 = d1;
      d1 = d;
      best = idx;
    } else if (d < d2) {
      d2 = d;
    }
  }
  best_dist = d1;
  if (best < 0) return -1;
  if (std::isfinite(d2) && d1 > ratio * d2) return -1;
  return best;
}

}  // namespace detail

/// Patch-ID-constrained matching: mutual nearest neighbors plus ratio test,
/// restricted to corresponding patch windows. patch_map takes a patch id of
/// image a to the corresponding id in image b (identity when empty).
inline std::vector<Match> match_patchwise(const std::vector<Feature>& feats_a,
                                          const std::vector<Feature>& feats_b,
                                          int image_a, int image_b,
                                          const std::unordered_map<int, int>& patch_map = {},
                                          const MatchOptions& opt = {}) {
  std::map<int, std::vector<int>> by_patch_a, by_patch_b;
  for (int i = 0; i < static_cast<int>(feats_a.size()); ++i)
    by_patch_a[feats_a[i].patch_id].push_back(i);
  for (int i = 0; i < static_cast<int>(feats_b.size()); ++i)
    by_patch_b[feats_b[i].patch_id].push_back(i);

  std::vector<Match> matches;
  for (const auto& [pid_a, idx_a] : by_patch_a) {
    int pid_b = pid_a;
    if (!patch_map.empty()) {
      auto it = patch_map.find(pid_a);
      if (it == patch_map.end()) continue;
      pid_b = it->second;
    }
    auto it_b = by_patch_b.find(pid_b);
    if (it_b == by_patch_b.end()) continue;
    const std::vector<int>& idx_b = it_b->second;
    for (int ia : idx_a) {
      double dab;
      const int ib = detail::nearest_with_ratio(feats_a[ia].descriptor, feats_b, idx_b,
                                                opt.ratio, dab);
      if (ib < 0 || dab > opt.max_distance) continue;
      double dba;
      const int back = detail::nearest_with_ratio(feats_b[ib].descriptor, feats_a, idx_a,
                                                  opt.ratio, dba);
      if (back != ia) continue;  // mutual nearest neighbor
      matches.push_back({image_a, image_b, ia, ib, pid_a, dab});
    }
  }
  return matches;
}

/// Unconstrained all-pairs matcher (baseline for the matching benchmark).
inline std::vector<Match> match_bruteforce(const std::vector<Feature>& feats_a,
                                           const std::vector<Feature>& feats_b,
                                           int image_a, int image_b,
                                           const MatchOptions& opt = {}) {
  std::vector<int> all_a(feats_a.size()), all_b(feats_b.size());
  for (size_t i = 0; i < all_a.size(); ++i) all_a[i] = static_cast<int>(i);
  for (size_t i = 0; i < all_b.size(); ++i) all_b[i] = static_cast<int>(i);
  std::vector<Match> matches;
  for (int ia = 0; ia < static_cast<int>(feats_a.size()); ++ia) {
    double dab;
    const int ib = detail::nearest_with_ratio(feats_a[ia].descriptor, feats_b, all_b, opt.ratio, dab);
    if (ib < 0 || dab > opt.max_distance) continue;
    double dba;
    const int back = detail::nearest_with_ratio(feats_b[ib].descriptor, feats_a, all_a, opt.ratio, dba);
    if (back != ia) continue;
    matches.push_back({image_a, image_b, ia, ib, feats_a[ia].patch_id, dab});
  }
  return matches;
}

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace detail

/// Transitive closure of matches into multi-image tracks. Components with two
/// features in one image are inconsistent and dropped.
inline std::vector<Track> build_tracks(
    const std::map<int, std::vector<Feature>>& features_by_image,
    const std::vector<Match>& matches) {
  // global feature index
  std::map<std::pair<int, int>, int> key_to_global;
  std::vector<std::pair<int, int>> global_keys;
  for (const auto& [image_id, feats] : features_by_image)
    for (int i = 0; i < static_cast<int>(feats.size()); ++i) {
      key_to_global[{image_id, i}] = static_cast<int>(global_keys.size());
      global_keys.emplace_back(image_id, i);
    }

  detail::UnionFind uf(static_cast<int>(global_keys.size()));
  for (const auto& m : matches) {
    auto a = key_to_global.find({m.image_a, m.feat_a});
    auto b = key_to_global.find({m.image_b, m.feat_b});
    if (a == key_to_global.end() || b == key_to_global.end())
      throw Error("match references unknown feature");
    uf.unite(a->second, b->second);
  }

  std::map<int, std::vector<int>> components;
  for (int g = 0; g < static_cast<int>(global_keys.size()); ++g)
    components[uf.find(g)].push_back(g);

  std::vector<Track> tracks;
  long next_id = 0;
  for (const auto& [root, members] : components) {
    if (members.size() < 2) continue;
    std::map<int, Vec2> per_image;
    bool consistent = true;
    for (int g : members) {
      const auto& [image_id, fidx] = global_keys[g];
      if (per_image.count(image_id)) {
        consistent = false;
        break;
      }
      per_image[image_id] = features_by_image.at(image_id)[fidx].position_px;
    }
    if (!consistent) continue;
    Track t;
    t.track_id = next_id++;
    for (const auto& [image_id, px] : per_image) t.observations.push_back({image_id, px});
    tracks.push_back(std::move(t));
  }
  return tracks;
}

struct Landmark {
  long id = -1;
  Vec3 position = Vec3::Zero();
};

/// Deterministic unit descriptor keyed on the landmark id; identical landmarks
/// match exactly, distinct ones are far apart with overwhelming probability.
inline Eigen::VectorXd landmark_descriptor(long landmark_id, int dim = 64) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(landmark_id) * 0x9e3779b97f4a7c15ULL + 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd d(dim);
  for (int i = 0; i < dim; ++i) d[i] = gauss(rng);
  d /= d.norm();
  return d;
}

/// Simulator front-end replacing detect(): projects landmarks, assigns each
/// to the patch windows containing its (noiseless) projection, then perturbs.
/// The noise draw depends only on the landmark order, not on the window set,
/// so repeated calls with different windows see consistent pixel positions.
inline std::vector<Feature> synth_observations(const std::vector<Landmark>& landmarks,
                                               const CameraModel& camera, const Pose& pose,
                                               const std::vector<PatchWindow>& windows,
                                               int image_id, double noise_px,
                                               std::mt19937_64& rng) {
  if (noise_px < 0.0) throw ConfigError("noise_px must be non-negative");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Feature> out;
  for (const auto& lm : landmarks) {
    Vec2 px;
    try {
      px = project(camera, pose, lm.position);
    } catch (const PointBehindCamera&) {
      continue;
    }
    if (px.x() < 0.0 || px.x() >= camera.width_px || px.y() < 0.0 || px.y() >= camera.height_px)
      continue;
    const Vec2 noisy = px + noise_px * Vec2(gauss(rng), gauss(rng));
    for (const auto& w : windows) {
      if (!w.contains(px)) continue;
      Feature f;
      f.image_id = image_id;
      f.patch_id = w.patch_id;
      f.position_px = noisy;
      f.descriptor = landmark_descriptor(lm.id);
      f.score = 1.0;
      f.landmark_id = lm.id;
      out.push_back(std::move(f));
    }
  }
  return out;
}

/// Wall-clock accounting of the pipeline's front-end stages.
struct StageTimings {
  double extract_s = 0.0;
  double match_s = 0.0;
  double total_s = 0.0;
};

}  // namespace uavba

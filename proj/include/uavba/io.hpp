#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uavba/ba_solver.hpp"
#include "uavba/mission_sim.hpp"
#include "uavba/terrain.hpp"

namespace uavba {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace detail {

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  return fields;
}

}  // namespace detail

// ---- pose CSV (image_id, x, y, z, qw, qx, qy, qz[, fixed]) ----

inline void save_poses_csv(const std::map<int, Pose>& poses, const fs::path& path,
                           const std::map<int, bool>* fixed_flags = nullptr) {
  auto out = detail::open_out(path);
  out << "image_id,x,y,z,qw,qx,qy,qz" << (fixed_flags ? ",fixed" : "") << "\n";
  for (const auto& [id, p] : poses) {
    out << id << ',' << p.translation.x() << ',' << p.translation.y() << ','
        << p.translation.z() << ',' << p.rotation.w() << ',' << p.rotation.x() << ','
        << p.rotation.y() << ',' << p.rotation.z();
    if (fixed_flags) out << ',' << (fixed_flags->count(id) && fixed_flags->at(id) ? 1 : 0);
    out << "\n";
  }
}

inline std::map<int, Pose> load_poses_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<int, Pose> poses;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() < 8) throw IoError("malformed pose row in " + path.string());
    const Quat q(std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7]));
    poses[std::stoi(f[0])] =
        Pose(q, Vec3(std::stod(f[1]), std::stod(f[2]), std::stod(f[3])));
  }
  return poses;
}

// ---- points PLY (ASCII) ----

inline void save_points_ply(const std::map<long, Vec3>& points, const fs::path& path) {
  auto out = detail::open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& [id, x] : points) out << x.x() << ' ' << x.y() << ' ' << x.z() << "\n";
}

// ---- residuals CSV ----

inline void save_residuals_csv(const std::vector<BAObservation>& observations,
                               const std::vector<double>& norms,
                               const std::vector<bool>& outlier, const fs::path& path) {
  auto out = detail::open_out(path);
  out << "image_id,track_id,x,y,residual_px,outlier\n";
  for (size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    out << o.image_id << ',' << o.track_id << ',' << o.pixel.x() << ',' << o.pixel.y() << ','
        << (i < norms.size() ? norms[i] : 0.0) << ','
        << (i < outlier.size() && outlier[i] ? 1 : 0) << "\n";
  }
}

// ---- footprints / patches / matches / tracks CSV ----

inline void save_footprints_csv(const std::map<int, Footprint>& footprints,
                                const fs::path& path) {
  auto out = detail::open_out(path);
  out << "image_id,tl_x,tl_y,tr_x,tr_y,br_x,br_y,bl_x,bl_y,center_x,center_y,heading_deg\n";
  for (const auto& [id, fp] : footprints) {
    out << id;
    for (const auto& c : fp.corners) out << ',' << c.x() << ',' << c.y();
    out << ',' << fp.center.x() << ',' << fp.center.y() << ',' << rad2deg(fp.heading_rad)
        << "\n";
  }
}

struct PatchTrajectoryRow {
  int image_id;
  int patch_id;
  Vec2 center;
  int generation;
};

inline void save_patch_trajectories_csv(const std::vector<PatchTrajectoryRow>& rows,
                                        const fs::path& path) {
  auto out = detail::open_out(path);
  out << "image_id,patch_id,cx,cy,generation\n";
  for (const auto& r : rows)
    out << r.image_id << ',' << r.patch_id << ',' << r.center.x() << ',' << r.center.y() << ','
        << r.generation << "\n";
}

inline void save_matches_csv(const std::vector<Match>& matches,
                             const std::map<int, std::vector<Feature>>& features_by_image,
                             const fs::path& path) {
  auto out = detail::open_out(path);
  out << "image_a,image_b,patch_id,xa,ya,xb,yb,distance\n";
  for (const auto& m : matches) {
    const Vec2& a = features_by_image.at(m.image_a)[m.feat_a].position_px;
    const Vec2& b = features_by_image.at(m.image_b)[m.feat_b].position_px;
    out << m.image_a << ',' << m.image_b << ',' << m.patch_id << ',' << a.x() << ',' << a.y()
        << ',' << b.x() << ',' << b.y() << ',' << m.distance << "\n";
  }
}

inline void save_tracks_csv(const std::vector<Track>& tracks, const fs::path& path) {
  auto out = detail::open_out(path);
  out << "track_id,image_id,x,y\n";
  for (const auto& t : tracks)
    for (const auto& o : t.observations)
      out << t.track_id << ',' << o.image_id << ',' << o.pixel.x() << ',' << o.pixel.y() << "\n";
}

// ---- metrics ----

inline json metrics_to_json(const MetricsReport& m) {
  return json{{"std_convention", "population (divide by n)"},
              {"mean_reprojection_error_px", m.mean_reproj_px},
              {"std_reprojection_error_px", m.std_reproj_px},
              {"total_feature_extraction_time_s", m.extract_time_s},
              {"total_feature_matching_time_s", m.match_time_s},
              {"total_run_time_s", m.total_runtime_s},
              {"run_time_per_image_pair_s", m.per_pair_runtime_s},
              {"position_rmse_m", m.position_rmse_m},
              {"attitude_rmse_deg", m.attitude_rmse_deg}};
}

/// Table-shaped comparison CSV: one column per run, six metric rows.
inline void save_comparison_csv(const std::vector<std::pair<std::string, MetricsReport>>& runs,
                                const fs::path& path) {
  auto out = detail::open_out(path);
  out << "metric";
  for (const auto& [name, m] : runs) out << ',' << name;
  out << "\n";
  auto row = [&](const std::string& label, auto getter) {
    out << label;
    for (const auto& [name, m] : runs) out << ',' << getter(m);
    out << "\n";
  };
  row("Mean of Reprojection Error (px)", [](const MetricsReport& m) { return m.mean_reproj_px; });
  row("Std-dev of Reprojection Errors (px)",
      [](const MetricsReport& m) { return m.std_reproj_px; });
  row("Total Feature Extraction Time (sec)",
      [](const MetricsReport& m) { return m.extract_time_s; });
  row("Total Feature Matching Time (sec)", [](const MetricsReport& m) { return m.match_time_s; });
  row("Total Run Time (sec)", [](const MetricsReport& m) { return m.total_runtime_s; });
  row("Run Time per Image Pairs (sec)",
      [](const MetricsReport& m) { return m.per_pair_runtime_s; });
}

// ---- mission directory ----

inline void save_mission(const Mission& mission, const fs::path& dir) {
  fs::create_directories(dir);
  json j;
  j["seed"] = mission.seed;
  j["anchor"] = {{"latitude_deg", mission.anchor.latitude_deg},
                 {"longitude_deg", mission.anchor.longitude_deg},
                 {"altitude_m", mission.anchor.altitude_m}};
  j["camera"] = {{"focal_length_mm", mission.camera.focal_length_mm},
                 {"pixel_pitch_um", mission.camera.pixel_pitch_um},
                 {"width_px", mission.camera.width_px},
                 {"height_px", mission.camera.height_px},
                 {"cx", mission.camera.principal_point.x()},
                 {"cy", mission.camera.principal_point.y()}};
  j["plan"] = {{"velocity_mps", mission.plan.velocity_mps},
               {"altitude_m", mission.plan.altitude_m},
               {"shoot_interval_s", mission.plan.shoot_interval_s},
               {"overlap_pct", mission.plan.overlap_pct},
               {"footprint_along_m", mission.plan.footprint_along_m},
               {"processing_budget_s", mission.plan.processing_budget_s},
               {"strip_count", mission.plan.strip_count},
               {"side_overlap_pct", mission.plan.side_overlap_pct},
               {"images_per_strip", mission.plan.images_per_strip}};
  j["noise"] = {{"sigma_pos_m", mission.noise.sigma_pos_m},
                {"sigma_att_deg", mission.noise.sigma_att_deg},
                {"observation_px", mission.noise.observation_px},
                {"attitude_jitter_deg", mission.noise.attitude_jitter_deg}};
  j["terrain"] = {{"type", static_cast<int>(mission.terrain.type)},
                  {"base_z", mission.terrain.base_z},
                  {"slope_x", mission.terrain.slope_x},
                  {"slope_y", mission.terrain.slope_y},
                  {"amplitude_m", mission.terrain.amplitude_m},
                  {"wavelength_m", mission.terrain.wavelength_m},
                  {"cell_size_m", mission.terrain.cell_size_m}};
  auto jf = detail::open_out(dir / "mission.json");
  jf << j.dump(2) << "\n";

  auto pose_csv = [&](const fs::path& path, bool truth) {
    auto out = detail::open_out(path);
    out << "image_id,strip_id,timestamp_s,x,y,z,qw,qx,qy,qz\n";
    for (const auto& im : mission.images) {
      const Pose& p = truth ? im.truth_pose : im.nav_pose;
      out << im.image_id << ',' << im.strip_id << ',' << im.timestamp_s << ','
          << p.translation.x() << ',' << p.translation.y() << ',' << p.translation.z() << ','
          << p.rotation.w() << ',' << p.rotation.x() << ',' << p.rotation.y() << ','
          << p.rotation.z() << "\n";
    }
  };
  pose_csv(dir / "truth_poses.csv", true);
  pose_csv(dir / "nav_poses.csv", false);

  auto lm = detail::open_out(dir / "landmarks.csv");
  lm << "landmark_id,x,y,z\n";
  for (const auto& l : mission.landmarks)
    lm << l.id << ',' << l.position.x() << ',' << l.position.y() << ',' << l.position.z()
       << "\n";

  save_dsm_asc(mission.dsm, (dir / "dsm.asc").string());
}

inline Mission load_mission(const fs::path& dir) {
  std::ifstream jf(dir / "mission.json");
  if (!jf) throw IoError("cannot open " + (dir / "mission.json").string());
  json j;
  jf >> j;
  Mission mission;
  mission.seed = j["seed"].get<std::uint64_t>();
  mission.anchor = GeoAnchor(j["anchor"]["latitude_deg"], j["anchor"]["longitude_deg"],
                             j["anchor"]["altitude_m"]);
  mission.camera =
      CameraModel(j["camera"]["focal_length_mm"], j["camera"]["pixel_pitch_um"],
                  j["camera"]["width_px"], j["camera"]["height_px"],
                  Vec2(j["camera"]["cx"], j["camera"]["cy"]));
  const json& p = j["plan"];
  mission.plan = {p["velocity_mps"],      p["altitude_m"],       p["shoot_interval_s"],
                  p["overlap_pct"],       p["footprint_along_m"], p["processing_budget_s"],
                  p["strip_count"],       p["side_overlap_pct"],  p["images_per_strip"]};
  const json& n = j["noise"];
  mission.noise = {n["sigma_pos_m"], n["sigma_att_deg"], n["observation_px"],
                   n["attitude_jitter_deg"]};
  const json& t = j["terrain"];
  mission.terrain.type = static_cast<TerrainSpec::Type>(t["type"].get<int>());
  mission.terrain.base_z = t["base_z"];
  mission.terrain.slope_x = t["slope_x"];
  mission.terrain.slope_y = t["slope_y"];
  mission.terrain.amplitude_m = t["amplitude_m"];
  mission.terrain.wavelength_m = t["wavelength_m"];
  mission.terrain.cell_size_m = t["cell_size_m"];

  auto load_pose_rows = [](const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::map<int, std::tuple<int, double, Pose>> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = detail::split_csv_line(line);
      if (f.size() < 10) throw IoError("malformed pose row in " + path.string());
      const Quat q(std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9]));
      rows[std::stoi(f[0])] = {std::stoi(f[1]), std::stod(f[2]),
                               Pose(q, Vec3(std::stod(f[3]), std::stod(f[4]), std::stod(f[5])))};
    }
    return rows;
  };
  auto truth = load_pose_rows(dir / "truth_poses.csv");
  auto nav = load_pose_rows(dir / "nav_poses.csv");
  for (const auto& [id, row] : truth) {
    auto it = nav.find(id);
    if (it == nav.end()) throw IoError("nav pose missing for image " + std::to_string(id));
    MissionImage im;
    im.image_id = id;
    im.strip_id = std::get<0>(row);
    im.timestamp_s = std::get<1>(row);
    im.truth_pose = std::get<2>(row);
    im.nav_pose = std::get<2>(it->second);
    mission.images.push_back(im);
  }

  std::ifstream lf(dir / "landmarks.csv");
  if (!lf) throw IoError("cannot open " + (dir / "landmarks.csv").string());
  std::string line;
  std::getline(lf, line);
  while (std::getline(lf, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    mission.landmarks.push_back(
        {std::stol(f[0]), Vec3(std::stod(f[1]), std::stod(f[2]), std::stod(f[3]))});
  }

  mission.dsm = load_dsm_asc((dir / "dsm.asc").string());
  return mission;
}

}  // namespace uavba

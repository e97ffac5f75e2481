// uavba command line: flight planning, mission simulation, pipeline runs,
// evaluation. Exit codes: 0 success, 2 config/input error, 3 I/O error,
// 4 pipeline failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <uavba/image.hpp>
#include <uavba/io.hpp>
#include <uavba/pipeline.hpp>

namespace {

using uavba::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitPipeline = 4;

uavba::CameraModel camera_from_json(const json& c) {
  return uavba::CameraModel(c.value("focal_length_mm", 8.0), c.value("pixel_pitch_um", 10.0),
                            c.value("width_px", 480), c.value("height_px", 480),
                            uavba::Vec2(c.value("cx", c.value("width_px", 480) / 2.0),
                                        c.value("cy", c.value("height_px", 480) / 2.0)));
}

uavba::TerrainSpec terrain_from_json(const json& t) {
  uavba::TerrainSpec spec;
  const std::string type = t.value("type", "flat");
  if (type == "flat")
    spec.type = uavba::TerrainSpec::Type::Flat;
  else if (type == "inclined")
    spec.type = uavba::TerrainSpec::Type::Inclined;
  else if (type == "hills")
    spec.type = uavba::TerrainSpec::Type::Hills;
  else
    throw uavba::ConfigError("unknown terrain type '" + type + "'");
  spec.base_z = t.value("base_z", 0.0);
  spec.slope_x = t.value("slope_x", 0.0);
  spec.slope_y = t.value("slope_y", 0.0);
  spec.amplitude_m = t.value("amplitude_m", 0.0);
  spec.wavelength_m = t.value("wavelength_m", 500.0);
  spec.cell_size_m = t.value("cell_size_m", 20.0);
  return spec;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw uavba::IoError("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

uavba::PipelineMode mode_from_string(const std::string& s) {
  if (s == "proposed") return uavba::PipelineMode::Proposed;
  if (s == "incremental") return uavba::PipelineMode::Incremental;
  if (s == "cluster_incremental") return uavba::PipelineMode::ClusterIncremental;
  if (s == "global") return uavba::PipelineMode::Global;
  throw uavba::ConfigError("unknown mode '" + s + "'");
}

/// Real-imagery layout: mission.json (camera/plan), nav_poses.csv, dsm.asc,
/// frames/<image_id>.pgm. Nav poses stand in for truth in the Mission record.
uavba::Mission load_real_mission(const fs::path& dir) {
  const json j = read_json_file(dir / "mission.json");
  uavba::Mission mission;
  mission.camera = camera_from_json(j.at("camera"));
  if (j.contains("plan")) {
    const json& p = j["plan"];
    mission.plan.velocity_mps = p.value("velocity_mps", mission.plan.velocity_mps);
    mission.plan.altitude_m = p.value("altitude_m", mission.plan.altitude_m);
    mission.plan.overlap_pct = p.value("overlap_pct", mission.plan.overlap_pct);
  }
  std::ifstream in(dir / "nav_poses.csv");
  if (!in) throw uavba::IoError("cannot open " + (dir / "nav_poses.csv").string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = uavba::detail::split_csv_line(line);
    if (f.size() < 10) throw uavba::IoError("malformed nav pose row");
    uavba::MissionImage im;
    im.image_id = std::stoi(f[0]);
    im.strip_id = std::stoi(f[1]);
    im.timestamp_s = std::stod(f[2]);
    const uavba::Quat q(std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9]));
    im.nav_pose = uavba::Pose(q, uavba::Vec3(std::stod(f[3]), std::stod(f[4]), std::stod(f[5])));
    im.truth_pose = im.nav_pose;
    mission.images.push_back(im);
  }
  mission.dsm = uavba::load_dsm_asc((dir / "dsm.asc").string());
  return mission;
}

int cmd_plan(double velocity, double altitude, std::optional<double> overlap,
             std::optional<double> footprint, std::optional<double> interval, double focal_mm,
             double pitch_um, int n_px, std::optional<double> budget, const std::string& json_out) {
  if (velocity <= 0.0) throw uavba::InvalidPlan("velocity must be positive");
  double h_im = footprint ? *footprint
                          : uavba::footprint_extent_m(focal_mm, n_px, pitch_um, altitude);
  double beta;
  if (overlap) {
    if (*overlap < 0.0 || *overlap >= 100.0)
      throw uavba::InvalidPlan("overlap must be in [0,100)");
    beta = *overlap;
  } else if (interval) {
    beta = uavba::overlap_from_params(focal_mm, velocity, *interval, n_px, pitch_um, altitude);
  } else {
    throw uavba::InvalidPlan("either --overlap or --interval is required");
  }
  const double t = uavba::max_pair_time(h_im, beta, velocity);

  std::cout << std::setprecision(17);
  std::cout << "h_im = " << h_im << " m\n";
  std::cout << "beta = " << beta << " %\n";
  std::cout << "t = " << t << " s\n";
  if (budget) {
    std::cout << "budget = " << *budget << " s -> "
              << (t >= *budget ? "fits (t >= budget)" : "does NOT fit (t < budget)") << "\n";
  }
  json j{{"velocity_mps", velocity}, {"footprint_along_m", h_im},
         {"overlap_pct", beta},     {"max_pair_time_s", t}};
  if (budget) {
    j["processing_budget_s"] = *budget;
    j["budget_fits"] = t >= *budget;
  }
  if (!json_out.empty()) {
    auto out = uavba::detail::open_out(json_out);
    out << j.dump(2) << "\n";
  } else {
    std::cout << j.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag) {
  json cfg = config_path.empty() ? json::object() : read_json_file(config_path);
  uavba::FlightPlan plan;
  if (cfg.contains("plan")) {
    const json& p = cfg["plan"];
    plan.velocity_mps = p.value("velocity_mps", plan.velocity_mps);
    plan.altitude_m = p.value("altitude_m", plan.altitude_m);
    plan.shoot_interval_s = p.value("shoot_interval_s", plan.shoot_interval_s);
    plan.overlap_pct = p.value("overlap_pct", plan.overlap_pct);
    plan.footprint_along_m = p.value("footprint_along_m", plan.footprint_along_m);
    plan.strip_count = p.value("strip_count", plan.strip_count);
    plan.side_overlap_pct = p.value("side_overlap_pct", plan.side_overlap_pct);
    plan.images_per_strip = p.value("images_per_strip", plan.images_per_strip);
  }
  const uavba::CameraModel camera =
      camera_from_json(cfg.contains("camera") ? cfg["camera"] : json::object());
  const uavba::TerrainSpec terrain =
      terrain_from_json(cfg.contains("terrain") ? cfg["terrain"] : json::object());
  uavba::NoiseSpec noise;
  if (cfg.contains("noise")) {
    const json& n = cfg["noise"];
    noise.sigma_pos_m = n.value("sigma_pos_m", noise.sigma_pos_m);
    noise.sigma_att_deg = n.value("sigma_att_deg", noise.sigma_att_deg);
    noise.observation_px = n.value("observation_px", noise.observation_px);
    noise.attitude_jitter_deg = n.value("attitude_jitter_deg", noise.attitude_jitter_deg);
  }
  const std::uint64_t seed = seed_flag ? *seed_flag : cfg.value("seed", 42ULL);
  const double density = cfg.value("landmarks_per_footprint", 130.0);

  const uavba::Mission mission =
      uavba::generate_mission(plan, camera, terrain, noise, seed, density);
  uavba::save_mission(mission, out_dir);
  std::cout << "mission: " << mission.images.size() << " images, " << mission.landmarks.size()
            << " landmarks -> " << out_dir << "\n";
  return kExitOk;
}

uavba::PipelineOptions pipeline_options_from_json(const json& cfg) {
  uavba::PipelineOptions opt;
  opt.mode = mode_from_string(cfg.value("mode", "proposed"));
  opt.grid_rows = cfg.value("grid_rows", opt.grid_rows);
  opt.grid_cols = cfg.value("grid_cols", opt.grid_cols);
  opt.patch_size_px = cfg.value("patch_size_px", opt.patch_size_px);
  opt.cluster_m = cfg.value("cluster_m", opt.cluster_m);
  opt.overlap_fraction = cfg.value("overlap_fraction", opt.overlap_fraction);
  const std::string tm = cfg.value("transfer_mode", "footprint");
  if (tm == "footprint")
    opt.transfer_mode = uavba::TrackerConfig::TransferMode::Footprint;
  else if (tm == "nav")
    opt.transfer_mode = uavba::TrackerConfig::TransferMode::Nav;
  else
    throw uavba::ConfigError("unknown transfer_mode '" + tm + "'");
  opt.robust_delta_px = cfg.value("robust_delta_px", opt.robust_delta_px);
  opt.obs_sigma_px = cfg.value("obs_sigma_px", opt.obs_sigma_px);
  opt.overlap_threshold = cfg.value("overlap_threshold", opt.overlap_threshold);
  opt.min_matches = cfg.value("min_matches", opt.min_matches);
  opt.sigma_pos_m = cfg.value("sigma_pos_m", opt.sigma_pos_m);
  opt.sigma_att_deg = cfg.value("sigma_att_deg", opt.sigma_att_deg);
  opt.solve.max_iterations = cfg.value("max_iterations", opt.solve.max_iterations);
  opt.match.ratio = cfg.value("match_ratio", opt.match.ratio);
  opt.match.max_distance = cfg.value("match_max_distance", opt.match.max_distance);
  if ((opt.mode == uavba::PipelineMode::Proposed ||
       opt.mode == uavba::PipelineMode::ClusterIncremental) &&
      opt.cluster_m < 4)
    throw uavba::ConfigError("cluster_m must be at least 4 for clustered modes");
  return opt;
}

void write_run_outputs(const uavba::PipelineResult& res, const uavba::Mission& mission,
                       const fs::path& out_dir) {
  fs::create_directories(out_dir);
  uavba::save_poses_csv(res.poses, out_dir / "poses.csv");
  uavba::save_points_ply(res.points, out_dir / "points.ply");
  uavba::save_matches_csv(res.matches, res.features_by_image, out_dir / "matches.csv");
  uavba::save_tracks_csv(res.tracks, out_dir / "tracks.csv");
  uavba::save_residuals_csv(res.observations, res.observation_residuals,
                            res.observation_outliers, out_dir / "residuals.csv");
  uavba::save_patch_trajectories_csv(res.patch_rows, out_dir / "patch_trajectories.csv");

  std::map<int, uavba::Footprint> fps;
  for (const auto& im : mission.images)
    fps[im.image_id] = uavba::compute_footprint(mission.camera, im.nav_pose, mission.dsm);
  uavba::save_footprints_csv(fps, out_dir / "footprints.csv");

  json logs = json::array();
  for (const auto& cl : res.cluster_logs) {
    json weights = json::object(), deltas = json::object();
    for (const auto& [id, w] : cl.fusion_weights)
      weights[std::to_string(id)] = {w.first, w.second};
    for (const auto& [id, d] : cl.fusion_pose_delta_m) deltas[std::to_string(id)] = d;
    logs.push_back({{"member_ids", cl.member_ids},
                    {"injected_ids", cl.injected_ids},
                    {"fixed_ids", cl.fixed_ids},
                    {"fusion_ids", cl.fusion_ids},
                    {"fusion_weights", weights},
                    {"fusion_pose_delta_m", deltas},
                    {"cost", cl.cost},
                    {"iterations", cl.iterations}});
  }
  {
    auto out = uavba::detail::open_out(out_dir / "cluster_logs.json");
    out << logs.dump(2) << "\n";
  }

  const uavba::RunSummary summary = res.summary();
  const uavba::MetricsReport rep = uavba::evaluate(summary, mission);
  {
    auto out = uavba::detail::open_out(out_dir / "metrics.json");
    out << uavba::metrics_to_json(rep).dump(2) << "\n";
  }
  json s{{"image_count", res.image_count},
         {"final_cost", res.final_cost},
         {"timings",
          {{"extract_s", res.timings.extract_s},
           {"match_s", res.timings.match_s},
           {"total_s", res.timings.total_s}}}};
  auto out = uavba::detail::open_out(out_dir / "summary.json");
  out << s.dump(2) << "\n";
}

int cmd_run(const std::string& config_path, const std::string& mission_dir_flag,
            const std::string& mode_flag, const std::string& out_flag) {
  json cfg = config_path.empty() ? json::object() : read_json_file(config_path);
  if (!mission_dir_flag.empty()) cfg["mission_dir"] = mission_dir_flag;
  if (!mode_flag.empty()) cfg["mode"] = mode_flag;
  if (!out_flag.empty()) cfg["out_dir"] = out_flag;
  if (!cfg.contains("mission_dir")) throw uavba::ConfigError("mission_dir is required");
  if (!cfg.contains("out_dir")) throw uavba::ConfigError("out_dir is required");
  const fs::path mission_dir = cfg["mission_dir"].get<std::string>();
  const fs::path out_dir = cfg["out_dir"].get<std::string>();
  if (!fs::exists(mission_dir))
    throw uavba::ConfigError("mission_dir does not exist: " + mission_dir.string());

  const uavba::PipelineOptions opt = pipeline_options_from_json(cfg);

  const bool real_mode = fs::exists(mission_dir / "frames");
  uavba::Mission mission;
  uavba::ExtractFn extract;  // default: synthetic landmark observations
  if (real_mode) {
    mission = load_real_mission(mission_dir);
    const fs::path frames = mission_dir / "frames";
    extract = [frames](int image_id, const std::vector<uavba::PatchWindow>& windows) {
      const fs::path p = frames / (std::to_string(image_id) + ".pgm");
      const uavba::ImageRaster img = uavba::load_pgm(p.string());
      return uavba::detect_all(img, windows, image_id);
    };
  } else {
    mission = uavba::load_mission(mission_dir);
  }

  uavba::PipelineResult res;
  try {
    res = uavba::run_pipeline(mission, opt, extract);
  } catch (const uavba::Error& e) {
    std::cerr << "pipeline failure: " << e.what() << "\n";
    return kExitPipeline;
  }
  write_run_outputs(res, mission, out_dir);
  const uavba::MetricsReport rep = uavba::evaluate(res.summary(), mission);
  std::cout << std::setprecision(17);
  std::cout << "images = " << res.image_count << "\n"
            << "mean_reproj_px = " << rep.mean_reproj_px << "\n"
            << "position_rmse_m = " << rep.position_rmse_m << "\n"
            << "total_s = " << rep.total_runtime_s << "\n"
            << "outputs -> " << out_dir.string() << "\n";
  return kExitOk;
}

uavba::RunSummary load_run_summary(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "poses.csv"))
    throw uavba::ConfigError("missing pose file: " + (run_dir / "poses.csv").string());
  uavba::RunSummary s;
  s.poses = uavba::load_poses_csv(run_dir / "poses.csv");

  std::ifstream in(run_dir / "residuals.csv");
  if (!in) throw uavba::ConfigError("missing residual file: " +
                                    (run_dir / "residuals.csv").string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = uavba::detail::split_csv_line(line);
    if (f.size() < 6) throw uavba::IoError("malformed residual row");
    if (std::stoi(f[5]) == 0) s.inlier_residual_norms.push_back(std::stod(f[4]));
  }
  const json j = read_json_file(run_dir / "summary.json");
  s.image_count = j.value("image_count", static_cast<int>(s.poses.size()));
  s.timings.extract_s = j["timings"].value("extract_s", 0.0);
  s.timings.match_s = j["timings"].value("match_s", 0.0);
  s.timings.total_s = j["timings"].value("total_s", 0.0);
  return s;
}

int cmd_eval(const std::vector<std::string>& run_dirs, const std::string& mission_dir,
             const std::string& out_dir) {
  const uavba::Mission mission = uavba::load_mission(mission_dir);
  fs::create_directories(out_dir);
  std::vector<std::pair<std::string, uavba::MetricsReport>> rows;
  for (const auto& rd : run_dirs) {
    const uavba::RunSummary s = load_run_summary(rd);
    const uavba::MetricsReport rep = uavba::evaluate(s, mission);
    rows.emplace_back(fs::path(rd).filename().string(), rep);
  }
  if (rows.size() == 1) {
    auto out = uavba::detail::open_out(fs::path(out_dir) / "metrics.json");
    out << uavba::metrics_to_json(rows[0].second).dump(2) << "\n";
  } else {
    json all = json::object();
    for (const auto& [name, rep] : rows) all[name] = uavba::metrics_to_json(rep);
    auto out = uavba::detail::open_out(fs::path(out_dir) / "metrics.json");
    out << all.dump(2) << "\n";
  }
  uavba::save_comparison_csv(rows, fs::path(out_dir) / "comparison.csv");
  std::cout << std::setprecision(17);
  for (const auto& [name, rep] : rows)
    std::cout << name << ": mean_reproj_px = " << rep.mean_reproj_px
              << ", position_rmse_m = " << rep.position_rmse_m << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-tracking cluster bundle adjustment pipeline"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "thread cap; 1 gives the strict determinism contract");

  auto* plan = app.add_subcommand("plan", "acquisition timing from flight parameters");
  double velocity = 20.0, altitude = 300.0, focal_mm = 8.0, pitch_um = 10.0;
  int n_px = 1000;
  std::optional<double> overlap, footprint, interval, budget;
  std::string plan_json_out;
  plan->add_option("--velocity", velocity, "flight velocity (m/s)");
  plan->add_option("--altitude", altitude, "flight height above ground (m)");
  plan->add_option("--overlap", overlap, "along-track overlap (%)");
  plan->add_option("--footprint", footprint, "along-track footprint h_im (m)");
  plan->add_option("--interval", interval, "shooting interval (s)");
  plan->add_option("--focal-mm", focal_mm, "focal length (mm)");
  plan->add_option("--pitch-um", pitch_um, "pixel pitch (um)");
  plan->add_option("--width-px", n_px, "along-track pixel count");
  plan->add_option("--budget", budget, "available per-pair compute budget (s)");
  plan->add_option("--json-out", plan_json_out, "write the plan JSON to this file");

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic mission directory");
  std::string sim_config, sim_out = "mission";
  std::optional<std::uint64_t> sim_seed;
  simulate->add_option("--config", sim_config, "simulation config JSON");
  simulate->add_option("--out", sim_out, "output mission directory")->required();
  simulate->add_option("--seed", sim_seed, "override the config seed");

  auto* run = app.add_subcommand("run", "run the pipeline on a mission directory");
  std::string run_config, run_mission, run_mode, run_out;
  run->add_option("--config", run_config, "pipeline config JSON");
  run->add_option("--mission", run_mission, "mission directory (overrides config)");
  run->add_option("--mode", run_mode,
                  "proposed | incremental | cluster_incremental | global (overrides config)");
  run->add_option("--out", run_out, "output directory (overrides config)");

  auto* eval = app.add_subcommand("eval", "evaluate one or more runs against a mission");
  std::vector<std::string> eval_runs;
  std::string eval_mission, eval_out = ".";
  eval->add_option("--run", eval_runs, "run directory (repeatable)")->required();
  eval->add_option("--mission", eval_mission, "mission directory")->required();
  eval->add_option("--out", eval_out, "output directory");

  CLI11_PARSE(app, argc, argv);
  Eigen::setNbThreads(std::max(1, threads));

  try {
    if (plan->parsed())
      return cmd_plan(velocity, altitude, overlap, footprint, interval, focal_mm, pitch_um,
                      n_px, budget, plan_json_out);
    if (simulate->parsed()) return cmd_simulate(sim_config, sim_out, sim_seed);
    if (run->parsed()) return cmd_run(run_config, run_mission, run_mode, run_out);
    if (eval->parsed()) return cmd_eval(eval_runs, eval_mission, eval_out);
  } catch (const uavba::InvalidPlan& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const uavba::NonPositiveParameter& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const uavba::NonPositiveVelocity& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const uavba::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const uavba::IdMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const uavba::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const uavba::Error& e) {
    std::cerr << "pipeline failure: " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitOk;
}

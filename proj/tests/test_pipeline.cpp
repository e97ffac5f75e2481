#include <cstring>
#include <set>

#include <catch_amalgamated.hpp>

#include <uavba/pipeline.hpp>

using namespace uavba;

namespace {

Mission make_mission(double obs_px, double sigma_pos, double jitter_deg, std::uint64_t seed,
                     int per_strip = 8, double density = 150.0) {
  FlightPlan plan;
  plan.strip_count = 2;
  plan.images_per_strip = per_strip;
  CameraModel cam = CameraModel::centered(8.0, 10.0, 480, 480);
  NoiseSpec noise;
  noise.observation_px = obs_px;
  noise.sigma_pos_m = sigma_pos;
  noise.sigma_att_deg = sigma_pos > 0.0 ? 0.2 : 0.0;
  noise.attitude_jitter_deg = jitter_deg;
  return generate_mission(plan, cam, TerrainSpec{}, noise, seed, density);
}

bool poses_bitwise_equal(const std::map<int, Pose>& a, const std::map<int, Pose>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [id, pa] : a) {
    auto it = b.find(id);
    if (it == b.end()) return false;
    if (std::memcmp(pa.translation.data(), it->second.translation.data(),
                    3 * sizeof(double)) != 0)
      return false;
    if (std::memcmp(pa.rotation.coeffs().data(), it->second.rotation.coeffs().data(),
                    4 * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("front end tracks one continuous grid over the stream") {
  const Mission mission = make_mission(0.0, 0.0, 0.0, 11);
  PipelineOptions opt;
  const FrontEnd fe = build_front_end(mission, opt);

  REQUIRE(fe.images.size() == 16);
  const double ps = opt.patch_size_px;
  for (const auto& im : fe.images) {
    REQUIRE(im.states.size() == 16);
    std::set<int> ids;
    for (const auto& s : im.states) {
      ids.insert(s.patch_id);
      // wrap keeps every center inside the admissible band
      CHECK(s.center_px.x() >= ps / 2.0);
      CHECK(s.center_px.x() <= mission.camera.width_px - ps / 2.0);
      CHECK(s.center_px.y() >= ps / 2.0);
      CHECK(s.center_px.y() <= mission.camera.height_px - ps / 2.0);
      CHECK(s.generation >= 0);
    }
    CHECK(ids.size() == 16);  // patch identities persist
    REQUIRE(im.own_windows.size() == 16);
    for (const auto& w : im.own_windows) {
      CHECK(w.x_min >= 0.0);
      CHECK(w.x_max <= mission.camera.width_px);
      CHECK(w.y_min >= 0.0);
      CHECK(w.y_max <= mission.camera.height_px);
    }
  }

  SECTION("noiseless along-track shift matches the flight geometry") {
    // spacing 36 m at 2.667 px/m: unwrapped patches drift 96 px west
    const double ppm = mission.camera.width_px / mission.plan.footprint_along_m;
    const double shift = mission.plan.velocity_mps * mission.plan.shoot_interval_s * ppm;
    int checked = 0;
    for (size_t k = 1; k < 8; ++k) {
      const auto& prev = fe.images[k - 1].states;
      const auto& cur = fe.images[k].states;
      for (size_t i = 0; i < cur.size(); ++i) {
        if (cur[i].generation != prev[i].generation) continue;  // wrapped
        CHECK(cur[i].center_px.x() - prev[i].center_px.x() == Catch::Approx(-shift).margin(1e-6));
        CHECK(cur[i].center_px.y() == Catch::Approx(prev[i].center_px.y()).margin(1e-6));
        ++checked;
      }
    }
    CHECK(checked > 20);
  }

  SECTION("generations never decrease") {
    for (size_t i = 0; i < 16; ++i)
      for (size_t k = 1; k < fe.images.size(); ++k)
        CHECK(fe.images[k].states[i].generation >= fe.images[k - 1].states[i].generation);
  }
}

TEST_CASE("synthetic extractor is deterministic and window independent") {
  const Mission mission = make_mission(0.5, 1.0, 1.0, 21, 4);
  const ExtractFn extract = make_synth_extractor(mission);
  PipelineOptions opt;
  const FrontEnd fe = build_front_end(mission, opt);
  const auto& windows = fe.images[2].own_windows;

  const auto f1 = extract(2, windows);
  const auto f2 = extract(2, windows);
  REQUIRE(f1.size() == f2.size());
  CHECK(!f1.empty());
  for (size_t i = 0; i < f1.size(); ++i) {
    CHECK(std::memcmp(f1[i].position_px.data(), f2[i].position_px.data(),
                      2 * sizeof(double)) == 0);
    CHECK(f1[i].landmark_id == f2[i].landmark_id);
  }

  // a subset of windows sees the same noisy position per landmark
  const std::vector<PatchWindow> subset(windows.begin(), windows.begin() + 4);
  const auto fs = extract(2, subset);
  std::map<long, Vec2> by_lm;
  for (const auto& f : f1) by_lm[f.landmark_id] = f.position_px;
  for (const auto& f : fs) {
    REQUIRE(by_lm.count(f.landmark_id));
    CHECK((by_lm[f.landmark_id] - f.position_px).norm() == 0.0);
  }

  CHECK_THROWS_AS(extract(999, windows), IdMismatch);
}

TEST_CASE("global mode recovers a noiseless mission to machine precision") {
  const Mission mission = make_mission(0.0, 0.0, 0.0, 31, 6);
  PipelineOptions opt;
  opt.mode = PipelineMode::Global;
  const PipelineResult res = run_pipeline(mission, opt);

  REQUIRE(res.poses.size() == mission.images.size());
  REQUIRE(!res.inlier_residual_norms.empty());
  double mean = 0.0;
  for (double v : res.inlier_residual_norms) mean += v;
  mean /= res.inlier_residual_norms.size();
  CHECK(mean < 1e-6);

  const MetricsReport rep = evaluate(res.summary(), mission);
  CHECK(rep.position_rmse_m < 1e-6);
  CHECK(rep.attitude_rmse_deg < 1e-6);

  // triangulated points coincide with the generating landmarks
  REQUIRE(!res.points.empty());
  for (const auto& [id, x] : res.points) {
    double best = 1e300;
    for (const auto& lm : mission.landmarks) best = std::min(best, (x - lm.position).norm());
    CHECK(best < 1e-5);
  }

  CHECK(res.cluster_logs.size() == 1);  // single cluster covering the stream
}

TEST_CASE("proposed mode degenerates to global when the cluster covers the stream") {
  const Mission mission = make_mission(0.3, 1.0, 1.0, 41, 5);  // 10 images
  PipelineOptions opt;
  opt.mode = PipelineMode::Proposed;
  opt.cluster_m = 12;
  const PipelineResult a = run_pipeline(mission, opt);
  opt.mode = PipelineMode::Global;
  const PipelineResult b = run_pipeline(mission, opt);
  CHECK(poses_bitwise_equal(a.poses, b.poses));
  CHECK(a.cluster_logs.size() == 1);
  CHECK(b.cluster_logs.size() == 1);
}

TEST_CASE("all modes run a noisy two-strip mission") {
  const Mission mission = make_mission(0.3, 1.0, 1.0, 51);
  const double nav_rmse = nav_position_rmse(mission);

  auto run_mode = [&](PipelineMode mode) {
    PipelineOptions opt;
    opt.mode = mode;
    return run_pipeline(mission, opt);
  };

  const PipelineResult proposed = run_mode(PipelineMode::Proposed);
  const PipelineResult incremental = run_mode(PipelineMode::Incremental);
  const PipelineResult cluster_inc = run_mode(PipelineMode::ClusterIncremental);
  const PipelineResult global = run_mode(PipelineMode::Global);

  for (const PipelineResult* r : {&proposed, &incremental, &cluster_inc, &global}) {
    CHECK(r->poses.size() == 16);
    CHECK(!r->inlier_residual_norms.empty());
    CHECK(r->timings.total_s > 0.0);
    const MetricsReport rep = evaluate(r->summary(), mission);
    CHECK(std::isfinite(rep.position_rmse_m));
    CHECK(rep.position_rmse_m < 5.0);
  }

  // bundle adjustment improves on the raw navigation solution
  CHECK(evaluate(proposed.summary(), mission).position_rmse_m < nav_rmse);
  CHECK(evaluate(global.summary(), mission).position_rmse_m < nav_rmse);

  SECTION("cluster bookkeeping of the proposed mode") {
    REQUIRE(proposed.cluster_logs.size() == 2);
    const ClusterLog& c0 = proposed.cluster_logs[0];
    const ClusterLog& c1 = proposed.cluster_logs[1];
    CHECK(c0.member_ids == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    CHECK(c1.member_ids == std::vector<int>{9, 10, 11, 12, 13, 14, 15});
    CHECK(c1.fixed_ids == std::vector<int>{9, 10});
    CHECK(c1.fusion_ids == std::vector<int>{11});
    CHECK(c1.fusion_weights.count(11) == 1);
    CHECK(c1.fusion_weights.at(11).first > 0.0);
    CHECK(c1.fusion_weights.at(11).second > 0.0);
    CHECK(!c1.injected_ids.empty());  // earlier strip-0 imagery re-enters
    CHECK(c0.cost >= 0.0);
    CHECK(proposed.patch_rows.size() == 16 * 16);

    // fixed carryover keeps its first-cluster pose in the final result
    CHECK(proposed.poses.count(9) == 1);
    CHECK(proposed.matches.size() > 100);
    CHECK(proposed.timings.extract_s > 0.0);
    CHECK(proposed.timings.match_s > 0.0);
  }

  SECTION("repeated runs are bit identical") {
    PipelineOptions opt;
    opt.mode = PipelineMode::Proposed;
    const PipelineResult again = run_pipeline(mission, opt);
    CHECK(poses_bitwise_equal(proposed.poses, again.poses));
    CHECK(again.matches.size() == proposed.matches.size());
    REQUIRE(again.inlier_residual_norms.size() == proposed.inlier_residual_norms.size());
    for (size_t i = 0; i < again.inlier_residual_norms.size(); ++i)
      CHECK(again.inlier_residual_norms[i] == proposed.inlier_residual_norms[i]);
  }
}

#include <cstring>
#include <random>

#include <catch_amalgamated.hpp>

#include <uavba/mission_sim.hpp>
#include <uavba/terrain.hpp>

using namespace uavba;

namespace {

CameraModel test_camera() { return CameraModel::centered(8.0, 10.0, 480, 480); }

FlightPlan small_plan() {
  FlightPlan plan;
  plan.strip_count = 2;
  plan.images_per_strip = 6;
  return plan;
}

}  // namespace

TEST_CASE("footprint extent and overlap formulas") {
  // h_im = N * theta * h / (1000 * f): 1000 px, 10 um, 160 m, 8 mm -> 200 m
  CHECK(footprint_extent_m(8.0, 1000, 10.0, 160.0) == Catch::Approx(200.0));

  // with v = 20 m/s and dt = 2 s the overlap is (1 - 40/200) = 80%
  CHECK(overlap_from_params(8.0, 20.0, 2.0, 1000, 10.0, 160.0) == Catch::Approx(80.0));

  // large interval clamps at zero instead of going negative
  CHECK(overlap_from_params(8.0, 20.0, 100.0, 1000, 10.0, 160.0) == 0.0);

  CHECK_THROWS_AS(overlap_from_params(0.0, 20.0, 2.0, 1000, 10.0, 160.0),
                  NonPositiveParameter);
  CHECK_THROWS_AS(overlap_from_params(8.0, -1.0, 2.0, 1000, 10.0, 160.0),
                  NonPositiveParameter);
}

TEST_CASE("max pair time") {
  // the along-track budget: 208 m footprint, 80% overlap, 20 m/s -> 2.08 s
  CHECK(max_pair_time(208.0, 80.0, 20.0) == Catch::Approx(2.08).margin(1e-12));
  CHECK_THROWS_AS(max_pair_time(208.0, 80.0, 0.0), NonPositiveVelocity);
  CHECK_THROWS_AS(max_pair_time(208.0, 120.0, 20.0), InvalidPlan);
}

TEST_CASE("overlap and pair time are inverse within 1e-12") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double f = 8.0 * u(rng) + 4.0, v = 30.0 * u(rng), dt = 2.0 * u(rng);
    const int n = 500 + static_cast<int>(2000 * u(rng));
    const double theta = 12.0 * u(rng), h = 400.0 * u(rng) + 100.0;
    const double h_im = footprint_extent_m(f, n, theta, h);
    const double beta = overlap_from_params(f, v, dt, n, theta, h);
    if (beta <= 0.0) continue;  // clamped: identity does not apply
    const double t = max_pair_time(h_im, beta, v);
    CHECK(std::abs(t * v / h_im + beta / 100.0 - 1.0) < 1e-12);
  }
}

TEST_CASE("mission generation") {
  const FlightPlan plan = small_plan();
  const CameraModel cam = test_camera();
  TerrainSpec terrain;
  NoiseSpec noise;

  const Mission m = generate_mission(plan, cam, terrain, noise, 42, 120.0);

  SECTION("image counts and ordering") {
    REQUIRE(m.images.size() == 12);
    for (int i = 0; i < 12; ++i) {
      CHECK(m.images[i].image_id == i);
      CHECK(m.images[i].strip_id == i / 6);
    }
    // strips run east then west at increasing northing
    CHECK(m.images[1].truth_pose.translation.x() > m.images[0].truth_pose.translation.x());
    CHECK(m.images[7].truth_pose.translation.x() < m.images[6].truth_pose.translation.x());
    CHECK(m.images[6].truth_pose.translation.y() > m.images[0].truth_pose.translation.y());
  }

  SECTION("determinism: identical seeds give bit-identical missions") {
    const Mission m2 = generate_mission(plan, cam, terrain, noise, 42, 120.0);
    REQUIRE(m2.images.size() == m.images.size());
    for (size_t i = 0; i < m.images.size(); ++i) {
      CHECK(std::memcmp(m.images[i].truth_pose.translation.data(),
                        m2.images[i].truth_pose.translation.data(), 3 * sizeof(double)) == 0);
      CHECK(std::memcmp(m.images[i].nav_pose.rotation.coeffs().data(),
                        m2.images[i].nav_pose.rotation.coeffs().data(),
                        4 * sizeof(double)) == 0);
    }
    REQUIRE(m2.landmarks.size() == m.landmarks.size());
    for (size_t i = 0; i < m.landmarks.size(); ++i)
      CHECK((m.landmarks[i].position - m2.landmarks[i].position).norm() == 0.0);

    const Mission m3 = generate_mission(plan, cam, terrain, noise, 43, 120.0);
    CHECK((m3.images[0].nav_pose.translation - m.images[0].nav_pose.translation).norm() > 0.0);
  }

  SECTION("landmarks are visible from at least two truth poses") {
    for (size_t k = 0; k < std::min<size_t>(m.landmarks.size(), 200); ++k) {
      const Landmark& lm = m.landmarks[k];
      int views = 0;
      for (const auto& im : m.images) {
        try {
          const Vec2 px = project(cam, im.truth_pose, lm.position);
          if (px.x() >= 0 && px.x() < cam.width_px && px.y() >= 0 && px.y() < cam.height_px)
            ++views;
        } catch (const PointBehindCamera&) {
        }
      }
      CHECK(views >= 2);
    }
  }

  SECTION("the DSM covers every footprint") {
    for (const auto& im : m.images) CHECK_NOTHROW(compute_footprint(cam, im.nav_pose, m.dsm));
  }

  SECTION("plan consistency: measured along-track overlap matches the plan") {
    NoiseSpec exact = noise;
    exact.attitude_jitter_deg = 0.0;  // footprints undistorted
    const Mission me = generate_mission(plan, cam, terrain, exact, 42, 120.0);
    const Footprint f0 = compute_footprint(cam, me.images[0].truth_pose, me.dsm);
    const Footprint f1 = compute_footprint(cam, me.images[1].truth_pose, me.dsm);
    CHECK(100.0 * footprint_overlap(f0, f1) ==
          Catch::Approx(plan.overlap_pct).margin(0.5));
  }

  SECTION("invalid plans are rejected") {
    FlightPlan bad = plan;
    bad.overlap_pct = 120.0;
    CHECK_THROWS_AS(generate_mission(bad, cam, terrain, noise, 1), InvalidPlan);
    bad = plan;
    bad.velocity_mps = 0.0;
    CHECK_THROWS_AS(generate_mission(bad, cam, terrain, noise, 1), InvalidPlan);
    bad = plan;
    bad.images_per_strip = 1;
    CHECK_THROWS_AS(generate_mission(bad, cam, terrain, noise, 1), InvalidPlan);
    NoiseSpec bad_noise;
    bad_noise.sigma_pos_m = -1.0;
    CHECK_THROWS_AS(generate_mission(plan, cam, terrain, bad_noise, 1), ConfigError);
  }
}

TEST_CASE("terrain specs shape the DSM") {
  const FlightPlan plan = small_plan();
  const CameraModel cam = test_camera();
  NoiseSpec noise;

  TerrainSpec inclined;
  inclined.type = TerrainSpec::Type::Inclined;
  inclined.slope_x = 0.02;
  inclined.base_z = 5.0;
  const Mission mi = generate_mission(plan, cam, inclined, noise, 1, 120.0);
  CHECK(elevation_at(mi.dsm, 100.0, 0.0) ==
        Catch::Approx(5.0 + 0.02 * 100.0).margin(1e-6));

  TerrainSpec hills;
  hills.type = TerrainSpec::Type::Hills;
  hills.amplitude_m = 15.0;
  hills.wavelength_m = 400.0;
  const Mission mh = generate_mission(plan, cam, hills, noise, 1, 120.0);
  CHECK(elevation_at(mh.dsm, 100.0, 0.0) ==
        Catch::Approx(15.0 * std::sin(2 * M_PI * 0.25)).margin(0.5));
}

TEST_CASE("angular distance") {
  CHECK(angular_distance_rad(Quat::Identity(), Quat::Identity()) == 0.0);
  const Quat q = rotation_exp(Vec3(0, 0, 0.3));
  CHECK(angular_distance_rad(Quat::Identity(), q) == Catch::Approx(0.3));
  // double-cover: -q is the same rotation
  Quat nq = q;
  nq.coeffs() *= -1.0;
  CHECK(angular_distance_rad(Quat::Identity(), nq) == Catch::Approx(0.3));
}

TEST_CASE("evaluation metrics") {
  const FlightPlan plan = small_plan();
  const Mission m = generate_mission(plan, test_camera(), TerrainSpec{}, NoiseSpec{}, 5, 120.0);

  SECTION("truth poses give zero RMSE") {
    RunSummary run;
    for (const auto& im : m.images) run.poses[im.image_id] = im.truth_pose;
    run.image_count = static_cast<int>(m.images.size());
    const MetricsReport rep = evaluate(run, m);
    CHECK(rep.position_rmse_m == 0.0);
    CHECK(rep.attitude_rmse_deg < 1e-6);
    CHECK(rep.mean_reproj_px == 0.0);
  }

  SECTION("hand statistics: residuals {0,1,2,3,4}") {
    RunSummary run;
    run.poses[0] = m.images[0].truth_pose;
    run.inlier_residual_norms = {0.0, 1.0, 2.0, 3.0, 4.0};
    run.image_count = 1;
    const MetricsReport rep = evaluate(run, m);
    CHECK(rep.mean_reproj_px == Catch::Approx(2.0));
    CHECK(rep.std_reproj_px == Catch::Approx(std::sqrt(2.0)));  // population convention
  }

  SECTION("degenerate distribution: all residuals 1 px") {
    RunSummary run;
    run.poses[0] = m.images[0].truth_pose;
    run.inlier_residual_norms = {1.0, 1.0, 1.0};
    run.image_count = 1;
    const MetricsReport rep = evaluate(run, m);
    CHECK(rep.mean_reproj_px == Catch::Approx(1.0));
    CHECK(rep.std_reproj_px == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("per-pair runtime normalization") {
    RunSummary run;
    for (const auto& im : m.images) run.poses[im.image_id] = im.truth_pose;
    run.image_count = 12;
    run.timings.total_s = 22.0;
    CHECK(evaluate(run, m).per_pair_runtime_s == Catch::Approx(2.0));
  }

  SECTION("unknown image id") {
    RunSummary run;
    run.poses[999] = m.images[0].truth_pose;
    run.image_count = 1;
    CHECK_THROWS_AS(evaluate(run, m), IdMismatch);
  }

  SECTION("nav RMSE is positive under noise") {
    CHECK(nav_position_rmse(m) > 0.0);
  }
}

TEST_CASE("synthetic observation noise statistics") {
  const CameraModel cam = test_camera();
  const Pose pose = nadir_pose(Vec3(0, 0, 300), 0.0);
  std::vector<Landmark> lms;
  std::mt19937_64 lrng(77);
  std::uniform_real_distribution<double> u(-80.0, 80.0);
  for (long i = 0; i < 1000; ++i) lms.push_back({i, Vec3(u(lrng), u(lrng), 0.0)});
  const std::vector<PatchWindow> full = {{0, 0.0, 0.0, 480.0, 480.0}};

  // empirical per-axis std over 10 seeds within [0.45, 0.55]
  double ss = 0.0;
  long n = 0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto feats = synth_observations(lms, cam, pose, full, 0, 0.5, rng);
    for (const auto& f : feats) {
      const Vec2 clean = project(cam, pose, lms[f.landmark_id].position);
      ss += (f.position_px - clean).squaredNorm();
      n += 2;
    }
  }
  const double std_px = std::sqrt(ss / n);
  CHECK(std_px > 0.45);
  CHECK(std_px < 0.55);
}

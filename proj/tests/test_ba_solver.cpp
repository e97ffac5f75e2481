#include <cstring>
#include <random>

#include <catch_amalgamated.hpp>

#include <uavba/ba_solver.hpp>

using namespace uavba;

namespace {

struct TestScene {
  CameraModel camera = CameraModel::centered(8.0, 10.0, 1000, 800);
  std::vector<Pose> poses;
  std::vector<Vec3> points;
};

TestScene make_scene(std::mt19937_64& rng, int n_poses, int n_points) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TestScene s;
  for (int i = 0; i < n_poses; ++i) {
    Pose p = nadir_pose(Vec3(60.0 * i, 10.0 * u(rng), 300.0 + 5.0 * u(rng)), 0.05 * u(rng));
    p.rotation = (p.rotation * rotation_exp(Vec3(0.03 * u(rng), 0.03 * u(rng), 0.03 * u(rng))))
                     .normalized();
    s.poses.push_back(p);
  }
  for (int i = 0; i < n_points; ++i)
    s.points.push_back(Vec3(60.0 * (n_poses - 1) * 0.5 + 150.0 * u(rng), 120.0 * u(rng),
                            3.0 * u(rng)));
  return s;
}

// Analytic Jacobian blocks, as used inside the solver's normal equations.
void analytic_jacobians(const CameraModel& cam, const Pose& pose, const Vec3& x,
                        Eigen::Matrix<double, 2, 6>& j_pose,
                        Eigen::Matrix<double, 2, 3>& j_point) {
  const Vec3 pc = pose.world_to_camera(x);
  const double f = cam.focal_px(), iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> j_pi;
  j_pi << f * iz, 0.0, -f * pc.x() * iz * iz, 0.0, f * iz, -f * pc.y() * iz * iz;
  const Mat3 rt = pose.rotation_matrix().transpose();
  j_point = -j_pi * rt;
  j_pose.leftCols<3>() = -j_pi * skew(pc);
  j_pose.rightCols<3>() = j_pi * rt;
}

Vec2 residual_at(const CameraModel& cam, const Pose& pose, const Vec3& x, const Vec2& obs) {
  return obs - project(cam, pose, x);
}

// max relative error between analytic and central-difference Jacobians
double jacobian_fd_error(const CameraModel& cam, const Pose& pose, const Vec3& x,
                         const Vec2& obs) {
  Eigen::Matrix<double, 2, 6> ja;
  Eigen::Matrix<double, 2, 3> jp;
  analytic_jacobians(cam, pose, x, ja, jp);

  const double h = 1e-6;
  double worst = 0.0;
  auto rel = [&](const Vec2& fd_col, const Vec2& an_col) {
    const double scale = std::max(1.0, an_col.norm());
    worst = std::max(worst, (fd_col - an_col).norm() / scale);
  };
  for (int k = 0; k < 3; ++k) {  // rotation, right-multiplied increment
    Vec3 d = Vec3::Zero();
    d[k] = h;
    Pose pp = pose, pm = pose;
    pp.rotation = (pose.rotation * rotation_exp(d)).normalized();
    pm.rotation = (pose.rotation * rotation_exp(-d)).normalized();
    rel((residual_at(cam, pp, x, obs) - residual_at(cam, pm, x, obs)) / (2 * h), ja.col(k));
  }
  for (int k = 0; k < 3; ++k) {  // translation
    Pose pp = pose, pm = pose;
    pp.translation[k] += h;
    pm.translation[k] -= h;
    rel((residual_at(cam, pp, x, obs) - residual_at(cam, pm, x, obs)) / (2 * h), ja.col(3 + k));
  }
  for (int k = 0; k < 3; ++k) {  // point
    Vec3 xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    rel((residual_at(cam, pose, xp, obs) - residual_at(cam, pose, xm, obs)) / (2 * h),
        jp.col(k));
  }
  return worst;
}

BAProblem noisy_problem(std::mt19937_64& rng, int n_poses, int n_points, double obs_noise,
                        double pose_noise, bool fix_first, double prior_sigma_pos = 1.0,
                        double prior_sigma_att = deg2rad(0.2)) {
  const TestScene scene = make_scene(rng, n_poses, n_points);
  std::normal_distribution<double> gauss(0.0, 1.0);
  BAProblem problem;
  problem.camera = scene.camera;
  for (int i = 0; i < n_poses; ++i) {
    Pose init = scene.poses[i];
    if (!(fix_first && i == 0)) {
      init.translation += pose_noise * Vec3(gauss(rng), gauss(rng), gauss(rng));
      init.rotation = (init.rotation *
                       rotation_exp(0.003 * Vec3(gauss(rng), gauss(rng), gauss(rng))))
                          .normalized();
    }
    problem.poses[i] = {init, fix_first && i == 0};
    if (!(fix_first && i == 0))
      problem.priors[i] = {init.translation, init.rotation, prior_sigma_pos, prior_sigma_att};
  }
  long next_point = 0;
  for (const auto& x : scene.points) {
    std::vector<BAObservation> obs;
    for (int i = 0; i < n_poses; ++i) {
      Vec2 px;
      try {
        px = project(scene.camera, scene.poses[i], x);
      } catch (const PointBehindCamera&) {
        continue;
      }
      if (px.x() < 0 || px.x() >= scene.camera.width_px || px.y() < 0 ||
          px.y() >= scene.camera.height_px)
        continue;
      obs.push_back({i, next_point, px + obs_noise * Vec2(gauss(rng), gauss(rng))});
    }
    if (obs.size() < 2) continue;
    problem.points[next_point] = x + 0.5 * Vec3(gauss(rng), gauss(rng), gauss(rng));
    for (auto& o : obs) problem.observations.push_back(o);
    ++next_point;
  }
  return problem;
}

}  // namespace

TEST_CASE("robust loss") {
  SECTION("inlier region is the identity") {
    for (double s : {0.0, 0.5, 3.999, 4.0}) {
      const auto [v, dv] = robust_loss(s, 2.0);
      CHECK(v == s);
      CHECK(dv == 1.0);
    }
  }
  SECTION("documented outlier value: s=9, delta=2 -> 8") {
    const auto [v, dv] = robust_loss(9.0, 2.0);
    CHECK(v == Catch::Approx(8.0));
    CHECK(dv == Catch::Approx(2.0 / 3.0));
  }
  SECTION("continuous at the threshold") {
    const auto below = robust_loss(4.0 - 1e-12, 2.0);
    const auto above = robust_loss(4.0 + 1e-12, 2.0);
    CHECK(std::abs(below.first - above.first) < 1e-9);
    CHECK(std::abs(below.second - above.second) < 1e-9);
  }
  SECTION("derivative against finite differences < 1e-7") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.01, 50.0);
    for (int i = 0; i < 200; ++i) {
      const double s = u(rng), delta = 0.5 + 0.1 * (i % 30);
      if (std::abs(s - delta * delta) < 1e-3) continue;  // kink excluded
      const double h = 1e-6 * std::max(1.0, s);
      const double fd = (robust_loss(s + h, delta).first - robust_loss(s - h, delta).first) /
                        (2 * h);
      CHECK(std::abs(fd - robust_loss(s, delta).second) < 1e-7);
    }
  }
  SECTION("invalid inputs") {
    CHECK_THROWS_AS(robust_loss(-1.0, 2.0), ConfigError);
    CHECK_THROWS_AS(robust_loss(1.0, 0.0), ConfigError);
  }
}

TEST_CASE("residual is zero at the generating configuration") {
  std::mt19937_64 rng(3);
  const TestScene s = make_scene(rng, 2, 5);
  for (const auto& x : s.points) {
    const Vec2 px = project(s.camera, s.poses[0], x);
    CHECK(residual({0, 0, px}, s.camera, s.poses[0], x).norm() < 1e-12);
  }
}

TEST_CASE("triangulation") {
  std::mt19937_64 rng(4);
  const TestScene s = make_scene(rng, 3, 10);
  std::map<int, Pose> poses{{0, s.poses[0]}, {1, s.poses[1]}, {2, s.poses[2]}};

  SECTION("noiseless multi-view recovery") {
    for (const auto& x : s.points) {
      std::vector<Observation> obs;
      for (int i = 0; i < 3; ++i) {
        try {
          obs.push_back({i, project(s.camera, s.poses[i], x)});
        } catch (const PointBehindCamera&) {
        }
      }
      if (obs.size() < 2) continue;
      CHECK((triangulate(obs, poses, s.camera) - x).norm() < 1e-6);
    }
  }

  SECTION("degenerate baseline") {
    std::map<int, Pose> same{{0, s.poses[0]}, {1, s.poses[0]}};
    const std::vector<Observation> obs = {{0, Vec2(500, 400)}, {1, Vec2(500, 400)}};
    CHECK_THROWS_AS(triangulate(obs, same, s.camera), DegenerateBaseline);
    CHECK_THROWS_AS(triangulate({{0, Vec2(1, 1)}}, poses, s.camera), DegenerateBaseline);
  }

  SECTION("cheirality violation") {
    // intersecting the rays behind both cameras: swap the two pixel offsets
    const Vec3 x = s.points[0];
    const Vec2 p0 = project(s.camera, s.poses[0], x);
    const Vec2 p1 = project(s.camera, s.poses[1], x);
    const Vec2 c(500, 400);
    const std::vector<Observation> obs = {{0, Vec2(2 * c - p0)}, {1, Vec2(2 * c - p1)}};
    CHECK_THROWS_AS(triangulate(obs, poses, s.camera), Error);  // behind or near-parallel
  }
}

TEST_CASE("analytic Jacobians match central finite differences") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraModel cam = CameraModel::centered(8.0, 10.0, 1000, 800);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Pose pose = nadir_pose(Vec3(50 * u(rng), 50 * u(rng), 250 + 100 * u(rng)), M_PI * u(rng));
    pose.rotation =
        (pose.rotation * rotation_exp(0.2 * Vec3(u(rng), u(rng), u(rng)))).normalized();
    const Vec3 x(pose.translation.x() + 80 * u(rng), pose.translation.y() + 80 * u(rng),
                 10 * u(rng));
    const Vec2 obs(500 + 400 * u(rng), 400 + 300 * u(rng));
    worst = std::max(worst, jacobian_fd_error(cam, pose, x, obs));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("LM solve recovers a noiseless scene") {
  std::mt19937_64 rng(21);
  // the first pose is fixed at truth, so the gauge is set; priors are loosened
  // to leave the perfect observations in charge of the optimum
  BAProblem problem = noisy_problem(rng, 4, 40, 0.0, 2.0, true, 1e6, 0.0);
  const BAResult r = solve(problem);
  CHECK(r.converged);
  CHECK(r.final_cost < r.initial_cost);
  CHECK(r.final_cost < 1e-8);
  double max_norm = 0.0;
  for (double n : r.residual_norms) max_norm = std::max(max_norm, n);
  CHECK(max_norm < 1e-4);
}

TEST_CASE("prefix costs are non-increasing in the iteration budget") {
  std::mt19937_64 rng(22);
  const BAProblem problem = noisy_problem(rng, 3, 30, 0.5, 1.0, true);
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 12; ++k) {
    SolveOptions opt;
    opt.max_iterations = k;
    const BAResult r = solve(problem, opt);
    CHECK(r.final_cost <= prev + 1e-12);
    CHECK(r.final_cost <= r.initial_cost);
    prev = r.final_cost;
  }
}

TEST_CASE("fixed poses are returned bit-identical") {
  std::mt19937_64 rng(23);
  const BAProblem problem = noisy_problem(rng, 4, 30, 0.3, 1.0, true);
  const Pose before = problem.poses.at(0).pose;
  const BAResult r = solve(problem);
  const Pose after = r.poses.at(0);
  CHECK(std::memcmp(before.translation.data(), after.translation.data(), 3 * sizeof(double)) ==
        0);
  CHECK(std::memcmp(before.rotation.coeffs().data(), after.rotation.coeffs().data(),
                    4 * sizeof(double)) == 0);
  // free poses moved
  CHECK((r.poses.at(1).translation - problem.poses.at(1).pose.translation).norm() > 0.0);
}

TEST_CASE("gauge handling") {
  std::mt19937_64 rng(24);
  BAProblem problem = noisy_problem(rng, 3, 25, 0.2, 0.5, false);  // priors on every pose
  CHECK_NOTHROW(solve(problem));

  BAProblem no_gauge = problem;
  no_gauge.priors.clear();
  CHECK_THROWS_AS(solve(no_gauge), ConfigError);

  BAProblem bad_ref = problem;
  bad_ref.observations.push_back({99, 0, Vec2(0, 0)});
  CHECK_THROWS_AS(solve(bad_ref), ConfigError);
}

TEST_CASE("attitude priors pull a rotation-only perturbation back") {
  // single pose, no observations: the prior alone defines the optimum
  BAProblem problem;
  problem.camera = CameraModel::centered(8.0, 10.0, 1000, 800);
  const Pose truth = nadir_pose(Vec3(0, 0, 300), 0.3);
  Pose init = truth;
  init.rotation = (truth.rotation * rotation_exp(Vec3(0.05, -0.02, 0.04))).normalized();
  init.translation += Vec3(2, -1, 3);
  problem.poses[0] = {init, false};
  problem.priors[0] = {truth.translation, truth.rotation, 1.0, deg2rad(0.2)};
  const BAResult r = solve(problem);
  CHECK((r.poses.at(0).translation - truth.translation).norm() < 1e-6);
  CHECK(rotation_log(truth.rotation.conjugate() * r.poses.at(0).rotation).norm() < 1e-6);
}

TEST_CASE("behind-camera observations are frozen and flagged") {
  std::mt19937_64 rng(25);
  BAProblem problem = noisy_problem(rng, 3, 20, 0.2, 0.5, true);
  // plant a point far above the cameras: behind every view from the start
  const long bad_id = 999999;
  problem.points[bad_id] = Vec3(60, 0, 1000.0);
  problem.observations.push_back({1, bad_id, Vec2(500, 400)});
  BAResult r;
  CHECK_NOTHROW(r = solve(problem));
  REQUIRE(r.outlier.size() == problem.observations.size());
  CHECK(r.outlier.back());
  // the frozen observation never produced a gradient; the rest still converged
  size_t flagged = 0;
  for (bool b : r.outlier) flagged += b;
  CHECK(flagged == 1);
}

TEST_CASE("incremental baseline") {
  std::mt19937_64 rng(26);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const CameraModel cam = CameraModel::centered(8.0, 10.0, 1000, 800);

  // shared landmarks along a short strip
  std::vector<Landmark> lms;
  std::uniform_real_distribution<double> ux(-200.0, 500.0), uy(-140.0, 140.0);
  for (long i = 0; i < 300; ++i) lms.push_back({i, Vec3(ux(rng), uy(rng), 0.0)});

  SequenceData seq;
  seq.camera = cam;
  std::vector<Pose> truth;
  const std::vector<PatchWindow> window = {{0, 0.0, 0.0, 1000.0, 800.0}};
  for (int i = 0; i < 5; ++i) {
    const Pose t = nadir_pose(Vec3(70.0 * i, 0, 300), 0.0);
    truth.push_back(t);
    SequenceImage im;
    im.image_id = i;
    im.nav_pose = Pose(
        (t.rotation * rotation_exp(deg2rad(0.2) * Vec3(gauss(rng), gauss(rng), gauss(rng))))
            .normalized(),
        t.translation + Vec3(gauss(rng), gauss(rng), gauss(rng)));
    std::mt19937_64 obs_rng(1000 + i);
    im.features = synth_observations(lms, cam, t, window, i, 0.3, obs_rng);
    seq.images.push_back(std::move(im));
  }

  const auto results = run_incremental(seq);
  REQUIRE(results.size() == 4);  // one solve per added image
  const BAResult& last = results.back();
  REQUIRE(last.poses.size() == 5);
  double nav_err = 0.0, ba_err = 0.0;
  for (int i = 0; i < 5; ++i) {
    nav_err += (seq.images[i].nav_pose.translation - truth[i].translation).squaredNorm();
    ba_err += (last.poses.at(i).translation - truth[i].translation).squaredNorm();
  }
  CHECK(ba_err < nav_err);  // optimization improves on the nav initialization

  SECTION("registration failure when an image has no shared features") {
    SequenceData broken = seq;
    broken.images[2].features.clear();
    CHECK_THROWS_AS(run_incremental(broken), RegistrationFailure);
  }
}

TEST_CASE("cluster-incremental baseline") {
  std::mt19937_64 rng(27);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const CameraModel cam = CameraModel::centered(8.0, 10.0, 1000, 800);
  std::vector<Landmark> lms;
  std::uniform_real_distribution<double> ux(-200.0, 900.0), uy(-140.0, 140.0);
  for (long i = 0; i < 500; ++i) lms.push_back({i, Vec3(ux(rng), uy(rng), 0.0)});

  SequenceData seq;
  seq.camera = cam;
  const std::vector<PatchWindow> window = {{0, 0.0, 0.0, 1000.0, 800.0}};
  for (int i = 0; i < 10; ++i) {
    const Pose t = nadir_pose(Vec3(70.0 * i, 0, 300), 0.0);
    SequenceImage im;
    im.image_id = i;
    im.nav_pose = Pose(
        (t.rotation * rotation_exp(deg2rad(0.2) * Vec3(gauss(rng), gauss(rng), gauss(rng))))
            .normalized(),
        t.translation + Vec3(gauss(rng), gauss(rng), gauss(rng)));
    std::mt19937_64 obs_rng(2000 + i);
    im.features = synth_observations(lms, cam, t, window, i, 0.3, obs_rng);
    seq.images.push_back(std::move(im));
  }

  const auto results = run_cluster_incremental(seq, 4, 1);
  REQUIRE(!results.empty());
  std::set<int> covered;
  for (const auto& r : results)
    for (const auto& [id, p] : r.poses) covered.insert(id);
  CHECK(covered.size() == 10);  // every image optimized in some cluster

  CHECK_THROWS_AS(run_cluster_incremental(seq, 2, 1), ConfigError);
  CHECK_THROWS_AS(run_cluster_incremental(seq, 4, 4), ConfigError);
}

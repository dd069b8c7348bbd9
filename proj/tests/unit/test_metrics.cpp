#include <gtest/gtest.h>

#include <sstream>

#include "attnvo/errors.hpp"
#include "attnvo/metrics.hpp"
#include "test_support.hpp"

using namespace attnvo;
using namespace attnvo::testing;

namespace {

// n poses, each step moving `step` meters along +z with a yaw of
// `yaw_deg` degrees per frame.
Trajectory steady(std::size_t n, double step, double yaw_deg) {
  MotionVector m;
  m.angles = Vec3(yaw_deg * kPi / 180.0, 0, 0);
  m.trans = Vec3(0, 0, step);
  return accumulate(Pose::identity(), std::vector<MotionVector>(n - 1, m));
}

Trajectory random_walk(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<MotionVector> m;
  for (std::size_t i = 1; i < n; ++i) {
    MotionVector v;
    v.angles = Vec3(uniform(rng, -0.05, 0.05), uniform(rng, -0.02, 0.02), uniform(rng, -0.02, 0.02));
    v.trans = Vec3(uniform(rng, -0.2, 0.2), uniform(rng, -0.1, 0.1), uniform(rng, 0.5, 1.5));
    m.push_back(v);
  }
  return accumulate(Pose::identity(), m);
}

Trajectory perturbed(const Trajectory& t, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Trajectory out = t;
  for (auto& p : out.poses) {
    MotionVector n;
    n.angles = Vec3(normal01(rng), normal01(rng), normal01(rng)) * (sigma * 0.01);
    n.trans = Vec3(normal01(rng), normal01(rng), normal01(rng)) * sigma;
    p = compose(p, motion_to_pose(n));
  }
  return out;
}

Trajectory transformed(const Pose& g, const Trajectory& t) {
  Trajectory out = t;
  for (auto& p : out.poses) p = compose(g, p);
  return out;
}

}  // namespace

TEST(Distances, StaticAndUnitSteps) {
  Trajectory still;
  still.poses.assign(5, Pose::from_translation(Vec3(1, 2, 3)));
  for (double d : cumulative_distances(still)) EXPECT_EQ(d, 0.0);
  const auto dist = cumulative_distances(steady(6, 1.0, 0.0));
  for (std::size_t i = 0; i < dist.size(); ++i) EXPECT_NEAR(dist[i], static_cast<double>(i), 1e-12);
}

TEST(Distances, MatchBruteForceSummation) {
  const auto t = random_walk(1, 300);
  const auto dist = cumulative_distances(t);
  for (std::size_t i = 0; i < t.size(); i += 37) {
    double brute = 0.0;
    for (std::size_t k = 1; k <= i; ++k) {
      const Vec3 a = t.poses[k - 1].matrix().block<3, 1>(0, 3), b = t.poses[k].matrix().block<3, 1>(0, 3);
      brute += std::sqrt((a - b).dot(a - b));
    }
    EXPECT_NEAR(dist[i], brute, 1e-9);
  }
  for (std::size_t i = 1; i < dist.size(); ++i) EXPECT_GE(dist[i], dist[i - 1]);
}

TEST(Kitti, IdenticalTrajectoriesGiveZero) {
  const auto t = random_walk(2, 400);
  const auto rows = kitti_errors(t, t, default_path_lengths());
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) {
    EXPECT_EQ(r.trans_pct, 0.0);
    EXPECT_LT(r.rot_deg_per_100m, 1e-12);
    EXPECT_GT(r.pairs, 0u);
  }
}

TEST(Kitti, OnePercentScaleOnAStraightLine) {
  const auto gt = steady(1000, 1.0, 0.0);
  const auto est = steady(1000, 1.01, 0.0);
  const auto rows = kitti_errors(est, gt, default_path_lengths());
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.trans_pct, 1.0, 1e-6) << r.length;
    EXPECT_NEAR(r.rot_deg_per_100m, 0.0, 1e-9);
    // brute force: every start frame with an end frame d meters further
    EXPECT_EQ(r.pairs, 1000u - static_cast<std::size_t>(r.length));
  }
}

TEST(Kitti, ConstantYawDrift) {
  const double omega = 0.1;  // degrees per frame
  const auto gt = steady(1000, 1.0, omega);
  const auto est = steady(1000, 1.0, 0.0);
  const auto rows = kitti_errors(est, gt, default_path_lengths());
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) EXPECT_NEAR(r.rot_deg_per_100m, 100.0 * omega, 1e-6) << r.length;
}

TEST(Kitti, RowsWithoutPairsAreOmitted) {
  const auto t = steady(150, 1.0, 0.0);
  const auto rows = kitti_errors(t, t, default_path_lengths());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].length, 100.0);
  EXPECT_EQ(rows[0].pairs, 50u);
}

TEST(Kitti, GlobalTransformOfBothCancels) {
  const auto gt = random_walk(3, 300);
  const auto est = perturbed(gt, 0.3, 4);
  Rng rng(5);
  const Pose g = random_pose(rng);
  const auto a = kitti_errors(est, gt, {50, 100, 150});
  const auto b = kitti_errors(transformed(g, est), transformed(g, gt), {50, 100, 150});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GT(a[i].trans_pct, 0.0);
    EXPECT_NEAR(a[i].trans_pct, b[i].trans_pct, 1e-9);
    EXPECT_NEAR(a[i].rot_deg_per_100m, b[i].rot_deg_per_100m, 1e-9);
    EXPECT_EQ(a[i].pairs, b[i].pairs);
  }
}

TEST(Kitti, InputErrors) {
  const auto t = steady(10, 1.0, 0.0);
  EXPECT_THROW(kitti_errors(t, steady(11, 1.0, 0.0), {1.0}), InvalidArgument);
  EXPECT_THROW(kitti_errors(t, t, {0.0}), InvalidArgument);
}

TEST(Ate, HandPlantedFivePoses) {
  Trajectory gt, est;
  const double gt_t[5][3] = {{0, 0, 0}, {0.1, 0, 1}, {0.3, -0.1, 2.1}, {0.2, 0.1, 3.0}, {0.5, 0.2, 4.2}};
  const double gt_yaw[5] = {0.0, 0.05, 0.1, 0.12, 0.2};
  const double off_t[5][3] = {{0.1, 0, 0}, {0, -0.2, 0.05}, {0.05, 0.05, 0}, {-0.1, 0, 0.1}, {0, 0.1, -0.05}};
  const double off_roll[5] = {0.01, -0.02, 0.0, 0.03, -0.01};
  for (int i = 0; i < 5; ++i) {
    const Mat3 r = Eigen::AngleAxisd(gt_yaw[i], Vec3::UnitY()).toRotationMatrix();
    const Vec3 t(gt_t[i][0], gt_t[i][1], gt_t[i][2]);
    gt.poses.push_back(Pose::from_rt(r, t));
    const Mat3 re = r * Eigen::AngleAxisd(off_roll[i], Vec3::UnitZ()).toRotationMatrix();
    est.poses.push_back(Pose::from_rt(re, t + Vec3(off_t[i][0], off_t[i][1], off_t[i][2])));
  }

  // Definition: best rigid map of the estimated positions onto the truth,
  // then RMS of position and rotation residuals.
  std::vector<Vec3> pe, pg;
  for (int i = 0; i < 5; ++i) {
    pe.push_back(est.poses[i].translation());
    pg.push_back(gt.poses[i].translation());
  }
  const Mat3 r = horn_rotation(pe, pg);
  Vec3 ce = Vec3::Zero(), cg = Vec3::Zero();
  for (int i = 0; i < 5; ++i) {
    ce += pe[i] / 5.0;
    cg += pg[i] / 5.0;
  }
  const Vec3 t = cg - r * ce;
  double t2 = 0.0, r2 = 0.0;
  for (int i = 0; i < 5; ++i) {
    t2 += (r * pe[i] + t - pg[i]).squaredNorm();
    const double a = Eigen::AngleAxisd(r * est.poses[i].rotation() * gt.poses[i].rotation().transpose()).angle();
    r2 += a * a;
  }
  const double expect_t = std::sqrt(t2 / 5.0), expect_r = std::sqrt(r2 / 5.0) * 180.0 / kPi;

  const auto res = ate(est, gt);
  EXPECT_NEAR(res.trans_rmse, expect_t, 1e-9);
  EXPECT_NEAR(res.rot_rmse, expect_r, 1e-9);
  EXPECT_GT(res.trans_rmse, 0.01);
  EXPECT_GT(res.rot_rmse, 0.5);
}

TEST(Ate, IdenticalAndGloballyMoved) {
  const auto gt = random_walk(6, 120);
  const auto zero = ate(gt, gt);
  EXPECT_LT(zero.trans_rmse, 1e-12);
  EXPECT_LT(zero.rot_rmse, 1e-9);
  Rng rng(7);
  const auto moved = ate(transformed(random_pose(rng), gt), gt);
  EXPECT_LT(moved.trans_rmse, 1e-9);
  EXPECT_LT(moved.rot_rmse, 1e-6);
}

TEST(Ate, EstimateTransformIsAbsorbed) {
  const auto gt = random_walk(8, 200);
  const auto est = perturbed(gt, 0.5, 9);
  Rng rng(10);
  const auto a = ate(est, gt), b = ate(transformed(random_pose(rng), est), gt);
  EXPECT_NEAR(a.trans_rmse, b.trans_rmse, 1e-9);
  EXPECT_NEAR(a.rot_rmse, b.rot_rmse, 1e-7);
}

TEST(Ate, GrowsWithNoise) {
  const auto gt = random_walk(11, 200);
  double prev = -1.0;
  for (double sigma : {0.05, 0.2, 0.8}) {
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) mean += ate(perturbed(gt, sigma, 100 + seed), gt).trans_rmse / 8.0;
    EXPECT_GT(mean, prev) << sigma;
    prev = mean;
  }
}

TEST(Ate, InputErrors) {
  const auto t = steady(5, 1.0, 0.0);
  EXPECT_THROW(ate(t, steady(6, 1.0, 0.0)), InvalidArgument);
  EXPECT_THROW(ate(steady(2, 1.0, 0.0), steady(2, 1.0, 0.0)), InsufficientData);
}

TEST(Truncate, UnitStepLine) {
  const auto t = steady(1500, 1.0, 0.0);
  const auto cut = truncate_at({t, t}, 1000.0);
  EXPECT_EQ(cut.gt.size(), 1001u);
  EXPECT_EQ(cut.est.size(), 1001u);
  const auto again = truncate_at(cut, 1000.0);
  EXPECT_EQ(again.gt.size(), 1001u);
  const auto short_one = steady(20, 1.0, 0.0);
  EXPECT_EQ(truncate_at({short_one, short_one}, 1000.0).gt.size(), 20u);
}

TEST(Report, IdenticalTrajectoriesGiveAllZeros) {
  const auto t = random_walk(12, 500);
  const auto r = build_report(t, t);
  ASSERT_FALSE(r.rows.empty());
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.trans_pct, 0.0);
    EXPECT_LT(row.rot_deg_per_100m, 1e-12);
  }
  EXPECT_EQ(r.mean_trans_pct, 0.0);
  EXPECT_LT(r.mean_rot_deg_per_100m, 1e-12);
  EXPECT_LT(r.ate.trans_rmse, 1e-12);
  EXPECT_LT(r.ate.rot_rmse, 1e-9);
}

TEST(Report, MeansAreColumnMeansAndTruncationApplies) {
  const auto gt = random_walk(13, 1400);
  const auto est = perturbed(gt, 0.4, 14);
  const auto r = build_report(est, gt, default_path_lengths(), 1000.0, "seq7");
  EXPECT_EQ(r.trajectory_id, "seq7");
  double t = 0.0, rot = 0.0;
  for (const auto& row : r.rows) {
    t += row.trans_pct;
    rot += row.rot_deg_per_100m;
  }
  EXPECT_NEAR(r.mean_trans_pct, t / r.rows.size(), 1e-12);
  EXPECT_NEAR(r.mean_rot_deg_per_100m, rot / r.rows.size(), 1e-12);
  const auto cut = truncate_at({est, gt}, 1000.0);
  const auto direct = kitti_errors(cut.est, cut.gt, default_path_lengths());
  ASSERT_EQ(direct.size(), r.rows.size());
  EXPECT_EQ(direct[0].pairs, r.rows[0].pairs);
  EXPECT_EQ(ate(cut.est, cut.gt).trans_rmse, r.ate.trans_rmse);
}

TEST(Report, EmptyRowsGiveNanMeans) {
  const auto t = steady(20, 1.0, 0.0);
  const auto r = build_report(perturbed(t, 0.1, 1), t);
  EXPECT_TRUE(r.rows.empty());
  EXPECT_TRUE(std::isnan(r.mean_trans_pct));
  std::stringstream ss;
  write_report_csv(r, ss);
  const auto back = read_report_csv(ss);
  EXPECT_TRUE(std::isnan(back.mean_trans_pct));
  EXPECT_EQ(back.ate.trans_rmse, r.ate.trans_rmse);
}

TEST(Report, CsvRoundTrip) {
  const auto gt = random_walk(15, 600);
  const auto r = build_report(perturbed(gt, 0.3, 16), gt, default_path_lengths(), 1000.0, "traj_a");
  std::stringstream ss;
  write_report_csv(r, ss);
  const auto back = read_report_csv(ss);
  EXPECT_EQ(back.trajectory_id, "traj_a");
  ASSERT_EQ(back.rows.size(), r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].length, r.rows[i].length);
    EXPECT_EQ(back.rows[i].trans_pct, r.rows[i].trans_pct);
    EXPECT_EQ(back.rows[i].rot_deg_per_100m, r.rows[i].rot_deg_per_100m);
    EXPECT_EQ(back.rows[i].pairs, r.rows[i].pairs);
  }
  EXPECT_EQ(back.mean_trans_pct, r.mean_trans_pct);
  EXPECT_EQ(back.mean_rot_deg_per_100m, r.mean_rot_deg_per_100m);
  EXPECT_EQ(back.ate.trans_rmse, r.ate.trans_rmse);
  EXPECT_EQ(back.ate.rot_rmse, r.ate.rot_rmse);
  EXPECT_NE(render_report(r).find("Mean"), std::string::npos);
}

TEST(Report, MalformedCsvIsParseError) {
  std::stringstream ss("# trajectory x\nlength_m,trans_err_pct,rot_err_deg_per_100m,pairs\n100,abc,1,2\n");
  EXPECT_THROW(read_report_csv(ss), ParseError);
}

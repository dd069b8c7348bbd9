#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "attnvo/dataset.hpp"
#include "attnvo/errors.hpp"
#include "attnvo/image.hpp"
#include "attnvo/segments.hpp"
#include "attnvo/synth.hpp"
#include "test_support.hpp"

using namespace attnvo;
using namespace attnvo::testing;

namespace {

Trajectory random_trajectory(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<MotionVector> m;
  for (std::size_t i = 1; i < n; ++i) {
    MotionVector v;
    v.angles = Vec3(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1));
    v.trans = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0, 2));
    m.push_back(v);
  }
  return accumulate(random_pose(rng), m);
}

std::vector<std::shared_ptr<const Frame>> blank_frames(std::size_t n) {
  std::vector<std::shared_ptr<const Frame>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::make_shared<Frame>(Frame{i, Image(2, 2), 0.1 * i}));
  return out;
}

Frame random_frame(std::uint64_t seed, int h, int w) {
  Rng rng(seed);
  Frame f{0, Image(h, w), 0.0};
  for (float& v : f.image.pixels) v = static_cast<float>(uniform01(rng));
  return f;
}

}  // namespace

// ---- pose files

TEST(PoseFile, IdentityLine) {
  std::istringstream in("1 0 0 0 0 1 0 0 0 0 1 0\n");
  const auto t = read_poses(in);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.poses[0].matrix(), Mat4::Identity());
}

TEST(PoseFile, TranslationLine) {
  std::istringstream in("1 0 0 5 0 1 0 0 0 0 1 0\n");
  const auto t = read_poses(in);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.poses[0].translation(), Vec3(5, 0, 0));
  EXPECT_EQ(t.poses[0].matrix().row(3), Eigen::RowVector4d(0, 0, 0, 1));
}

TEST(PoseFile, ParseErrorCarriesLineNumber) {
  std::istringstream short_line("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n");
  try {
    read_poses(short_line);
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream bad_number("1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 x 0 1 0 0 0 0 1 0\n");
  try {
    read_poses(bad_number);
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(PoseFile, NonOrthonormalIsDataError) {
  std::istringstream in("1.01 0 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(read_poses(in), DataError);
  // small drift is projected back
  std::istringstream ok("1.0000001 0 0 0 0 1 0 0 0 0 1 0\n");
  const auto t = read_poses(ok);
  EXPECT_LT(orthonormality_error(t.poses[0].rotation()), 1e-12);
}

TEST(PoseFile, SaveLoadRoundTripIsBitIdentical) {
  const auto dir = scratch_dir("posefile");
  const auto traj = random_trajectory(3, 200);
  save_pose_file(traj, dir / "a.txt");
  const auto back = load_pose_file(dir / "a.txt");
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) EXPECT_EQ(back.poses[i].matrix(), traj.poses[i].matrix());
  save_pose_file(back, dir / "b.txt");
  std::ifstream a(dir / "a.txt"), b(dir / "b.txt");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(PoseFile, FormatRealIsExact) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double v = uniform(rng, -1e3, 1e3) * std::pow(10.0, uniform_int(rng, -12, 12));
    EXPECT_EQ(std::stod(format_real(v)), v);
  }
}

// ---- mid-air conversion

TEST(MidAir, IdentityStaysIdentity) {
  EXPECT_LT(max_abs_diff(midair_to_camera_frame(Pose::identity()).matrix(), Mat4::Identity()), 1e-15);
}

TEST(MidAir, ForwardBecomesCameraZ) {
  const auto p = midair_to_camera_frame(Pose::from_translation(Vec3(1, 0, 0)));
  EXPECT_LT((p.translation() - Vec3(0, 0, 1)).norm(), 1e-15);
  const auto r = midair_to_camera_frame(Pose::from_translation(Vec3(0, 1, 0)));
  EXPECT_LT((r.translation() - Vec3(1, 0, 0)).norm(), 1e-15);
  const auto d = midair_to_camera_frame(Pose::from_translation(Vec3(0, 0, 1)));
  EXPECT_LT((d.translation() - Vec3(0, 1, 0)).norm(), 1e-15);
}

TEST(MidAir, ConversionIsAHomomorphismAndPreservesAngle) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_pose(rng), b = random_pose(rng);
    const auto lhs = midair_to_camera_frame(compose(a, b));
    const auto rhs = compose(midair_to_camera_frame(a), midair_to_camera_frame(b));
    EXPECT_LT(max_abs_diff(lhs.matrix(), rhs.matrix()), 1e-12);
    EXPECT_NEAR(rotation_angle(midair_to_camera_frame(a)), rotation_angle(a), 1e-12);
  }
}

// ---- segments

TEST(Segments, SingleSegmentStartsAtIdentity) {
  const auto traj = random_trajectory(1, 5);
  Rng rng(0);
  const auto segs = segment_trajectory(traj, blank_frames(5), {5, 5, 1}, rng);
  ASSERT_EQ(segs.size(), 1u);
  ASSERT_EQ(segs[0].gt_motions.size(), 4u);
  const auto rebuilt = accumulate(Pose::identity(), segs[0].gt_motions);
  EXPECT_EQ(rebuilt.poses[0].matrix(), Mat4::Identity());
}

TEST(Segments, StaticTrajectoryHasZeroMotion) {
  Trajectory traj;
  Rng prng(2);
  traj.poses.assign(12, random_pose(prng));
  Rng rng(0);
  for (const auto& s : segment_trajectory(traj, blank_frames(12), {5, 7, 1}, rng)) {
    for (const auto& m : s.gt_motions) {
      EXPECT_LT(m.angles.norm(), 1e-12);
      EXPECT_LT(m.trans.norm(), 1e-12);
    }
  }
}

TEST(Segments, ReconstructionMatchesRelativePoses) {
  const auto traj = random_trajectory(4, 60);
  const auto frames = blank_frames(60);
  Rng rng(9);
  const auto segs = segment_trajectory(traj, frames, {5, 7, 1}, rng);
  ASSERT_FALSE(segs.empty());
  for (const auto& s : segs) {
    ASSERT_EQ(s.gt_motions.size() + 1, s.length());
    const auto rebuilt = accumulate(Pose::identity(), s.gt_motions);
    for (std::size_t k = 0; k < s.length(); ++k) {
      const Pose expect = relative(traj.poses[s.start], traj.poses[s.start + k]);
      EXPECT_LT(max_abs_diff(rebuilt.poses[k].matrix(), expect.matrix()), 1e-9);
      EXPECT_EQ(s.frames[k]->index, s.start + k);
    }
  }
}

TEST(Segments, StartsAndLengths) {
  const auto traj = random_trajectory(4, 100);
  Rng rng(1);
  const auto segs = segment_trajectory(traj, blank_frames(100), {5, 7, 3}, rng);
  std::array<int, 3> seen{};
  for (std::size_t i = 0; i < segs.size(); ++i) {
    EXPECT_EQ(segs[i].start % 3, 0u);
    EXPECT_GE(segs[i].length(), 5u);
    EXPECT_LE(segs[i].length(), 7u);
    EXPECT_LE(segs[i].start + segs[i].length(), 100u);
    ++seen[segs[i].length() - 5];
  }
  for (int c : seen) EXPECT_GT(c, 0);
}

TEST(Segments, ShortTrajectoryGivesNothing) {
  const auto traj = random_trajectory(4, 4);
  Rng rng(1);
  EXPECT_TRUE(segment_trajectory(traj, blank_frames(4), {5, 7, 1}, rng).empty());
}

// ---- channel statistics

TEST(ChannelStats, ConstantGray) {
  std::vector<Frame> f{{0, Image(4, 6, 0.5f), 0.0}};
  const auto s = compute_channel_stats(f);
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(s.mean[c], 0.5);
    EXPECT_DOUBLE_EQ(s.std[c], 0.0);
  }
}

TEST(ChannelStats, HalfBlackHalfWhite) {
  Image img(4, 6, 0.0f);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
  std::vector<Frame> f{{0, img, 0.0}};
  const auto s = compute_channel_stats(f);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(s.mean[c], 0.5, 1e-15);
    EXPECT_NEAR(s.std[c], 0.5, 1e-15);
  }
}

TEST(ChannelStats, MergeEqualsUnion) {
  std::vector<Frame> a, b, all;
  for (int i = 0; i < 3; ++i) a.push_back(random_frame(i, 5, 7));
  for (int i = 3; i < 8; ++i) b.push_back(random_frame(i, 3, 4));
  all = a;
  all.insert(all.end(), b.begin(), b.end());
  ChannelStatsAccumulator ea, eb;
  for (const auto& f : a) ea.add(f.image);
  for (const auto& f : b) eb.add(f.image);
  ea.merge(eb);
  const auto merged = ea.stats();
  const auto direct = compute_channel_stats(all);

  // two-pass oracle
  std::array<double, 3> mean{}, var{};
  std::size_t n = 0;
  for (const auto& f : all)
    for (std::size_t i = 0; i < f.image.pixels.size(); ++i) mean[i % 3] += f.image.pixels[i];
  for (const auto& f : all) n += f.image.pixels.size() / 3;
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto& f : all)
    for (std::size_t i = 0; i < f.image.pixels.size(); ++i) {
      const double d = f.image.pixels[i] - mean[i % 3];
      var[i % 3] += d * d;
    }
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(merged.mean[c], mean[c], 1e-12);
    EXPECT_NEAR(merged.std[c], std::sqrt(var[c] / n), 1e-12);
    EXPECT_NEAR(direct.mean[c], mean[c], 1e-12);
    EXPECT_NEAR(direct.std[c], std::sqrt(var[c] / n), 1e-12);
  }
}

TEST(ChannelStats, EmptyInputIsInvalid) {
  EXPECT_THROW(compute_channel_stats(std::vector<Frame>{}), InvalidArgument);
}

TEST(ChannelStats, FileRoundTrip) {
  const auto dir = scratch_dir("stats");
  ChannelStats s{{0.1, 0.25, 1.0 / 3.0}, {0.2, 0.3, 0.7}};
  write_channel_stats(s, dir / "stats.txt");
  const auto back = read_channel_stats(dir / "stats.txt");
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.std, s.std);
}

// ---- normalization and resizing

TEST(NormalizeResize, SameSizeUnitStatsIsIdentity) {
  const auto f = random_frame(1, 6, 9);
  const auto out = normalize_resize(f, ChannelStats{}, {6, 9});
  ASSERT_EQ(out.image.pixels.size(), f.image.pixels.size());
  for (std::size_t i = 0; i < f.image.pixels.size(); ++i) EXPECT_NEAR(out.image.pixels[i], f.image.pixels[i], 1e-9);
}

TEST(NormalizeResize, ConstantImageWithZeroStdGivesZeros) {
  Frame f{0, Image(5, 5, 0.3f), 0.0};
  ChannelStats s{{0.3f, 0.3f, 0.3f}, {0, 0, 0}};
  const auto out = normalize_resize(f, s, {3, 4});
  for (float v : out.image.pixels) EXPECT_EQ(v, 0.0f);
}

TEST(NormalizeResize, DownscaledGradientStaysLinear) {
  // v(x) = a + b*(x + 0.5) sampled at pixel centers; a 2x reduction samples
  // the same line at the new centers.
  const int w = 16;
  Frame f{0, Image(4, w), 0.0};
  const double a = 0.1, b = 0.05;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) f.image.at(y, x, c) = static_cast<float>(a + b * (x + 0.5));
  const auto out = normalize_resize(f, ChannelStats{}, {2, w / 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < w / 2; ++x) {
      const double expect = a + b * ((x + 0.5) * 2.0);
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.image.at(y, x, c), expect, 1e-6);
    }
}

TEST(NormalizeResize, AppliesStats) {
  Frame f{0, Image(2, 2, 0.7f), 0.0};
  ChannelStats s{{0.5, 0.6, 0.7}, {0.1, 0.2, 0.4}};
  const auto out = normalize_resize(f, s, {2, 2});
  EXPECT_NEAR(out.image.at(0, 0, 0), 2.0, 1e-6);
  EXPECT_NEAR(out.image.at(0, 0, 1), 0.5, 1e-6);
  EXPECT_NEAR(out.image.at(0, 0, 2), 0.0, 1e-6);
}

// ---- augmentation

TEST(Augment, ZeroConfigIsIdentity) {
  const auto f = random_frame(2, 8, 8);
  auto cfg = AugmentConfig::none();
  cfg.apply_probability = 1.0;
  Rng rng(3);
  EXPECT_EQ(augment(f, cfg, rng).image, f.image);
}

TEST(Augment, SameSeedSameOutput) {
  const auto f = random_frame(2, 16, 16);
  AugmentConfig cfg;
  cfg.apply_probability = 1.0;
  Rng r1(77), r2(77);
  EXPECT_EQ(augment(f, cfg, r1).image, augment(f, cfg, r2).image);
}

TEST(Augment, OutputStaysInUnitRange) {
  AugmentConfig cfg;
  cfg.brightness_range = 0.9;
  cfg.contrast_range = 0.9;
  cfg.saturation_range = 0.9;
  cfg.apply_probability = 1.0;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    for (float v : augment(random_frame(i, 8, 8), cfg, rng).image.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Augment, CutoutChangesExactlyTheRectangles) {
  auto cfg = AugmentConfig::none();
  cfg.cutout_count_max = 3;
  cfg.apply_probability = 1.0;
  cfg.cutout_fill = {2.0, 2.0, 2.0};  // clamped to 1, never equal to the random input
  int with_holes = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto f = random_frame(seed, 20, 30);
    Rng rng(seed);
    const auto res = augment_traced(f, cfg, rng);
    with_holes += !res.cutouts.empty();
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x) {
        bool inside = false;
        for (const auto& r : res.cutouts) inside = inside || r.contains(x, y);
        for (int c = 0; c < 3; ++c) {
          if (inside) EXPECT_EQ(res.frame.image.at(y, x, c), 1.0f);
          else EXPECT_EQ(res.frame.image.at(y, x, c), f.image.at(y, x, c));
        }
      }
  }
  EXPECT_GT(with_holes, 0);
}

TEST(Augment, InvalidConfig) {
  AugmentConfig cfg;
  cfg.brightness_range = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = AugmentConfig{};
  cfg.apply_probability = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// ---- synthetic generator

TEST(Synth, FrozenMotionWithZeroVelocityIsStatic) {
  SynthConfig cfg;
  cfg.trajectory_length = 6;
  cfg.motion_smoothness = 0.0;
  cfg.initial_velocity = Vec3::Zero();
  cfg.initial_angular_velocity = Vec3::Zero();
  const auto s = synth_generate(cfg);
  ASSERT_EQ(s.frames.size(), 6u);
  for (std::size_t i = 1; i < s.frames.size(); ++i) {
    EXPECT_EQ(s.trajectory.poses[i].matrix(), s.trajectory.poses[0].matrix());
    EXPECT_EQ(s.frames[i].image, s.frames[0].image);
  }
}

TEST(Synth, SameSeedIsBitIdentical) {
  SynthConfig cfg;
  cfg.trajectory_length = 10;
  const auto a = synth_generate(cfg), b = synth_generate(cfg);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.trajectory.poses[i].matrix(), b.trajectory.poses[i].matrix());
    EXPECT_EQ(a.frames[i].image, b.frames[i].image);
  }
  cfg.seed = 2;
  const auto c = synth_generate(cfg);
  EXPECT_NE(a.frames[3].image, c.frames[3].image);
}

TEST(Synth, ForwardMotionMovesProjectionsOutward) {
  SynthConfig cfg;
  cfg.trajectory_length = 5;
  cfg.motion_smoothness = 0.0;
  cfg.initial_velocity = Vec3(0, 0, 0.5);
  const auto s = synth_generate(cfg);
  const auto cam = PinholeCamera::for_image(cfg.image_size);
  const Eigen::Vector2d pp(cam.cx, cam.cy);
  int checked = 0;
  for (std::size_t i = 1; i < s.trajectory.size(); ++i) {
    const Pose step = relative(s.trajectory.poses[i - 1], s.trajectory.poses[i]);
    EXPECT_LT(step.rotation().isIdentity(1e-12) ? 0.0 : 1.0, 0.5);
    EXPECT_LT((step.translation() - Vec3(0, 0, 0.5)).norm(), 1e-12);
    const Pose w2a = s.trajectory.poses[i - 1].inverse(), w2b = s.trajectory.poses[i].inverse();
    for (const auto& l : s.landmarks) {
      const Vec3 pa = w2a.rotation() * l + w2a.translation();
      const Vec3 pb = w2b.rotation() * l + w2b.translation();
      const auto ua = cam.project(pa), ub = cam.project(pb);
      if (!ua || !ub) continue;
      // pinhole oracle: u - c = f * x / z, so the offset scales by z_a / z_b > 1
      const Eigen::Vector2d da = *ua - pp, db = *ub - pp;
      EXPECT_NEAR(db.x(), da.x() * pa.z() / pb.z(), 1e-9);
      EXPECT_NEAR(db.y(), da.y() * pa.z() / pb.z(), 1e-9);
      if (da.norm() > 1e-9) {
        EXPECT_GT(db.norm(), da.norm());
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Synth, DatasetRoundTripsThroughDisk) {
  SynthDatasetConfig cfg;
  cfg.n_trajectories = 2;
  cfg.n_val = 1;
  cfg.n_test = 0;
  cfg.base.trajectory_length = 4;
  cfg.base.image_size = {8, 16};
  const auto ds = synth_dataset(cfg);
  const auto root = scratch_dir("synthds");
  write_synth_dataset(ds, root);
  const auto train = load_split(root, "train");
  ASSERT_EQ(train.size(), 1u);
  ASSERT_EQ(train[0].frames.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(train[0].frames[i]->image, ds.train[0].frames[i]->image);
    EXPECT_EQ(train[0].trajectory.poses[i].matrix(), ds.train[0].trajectory.poses[i].matrix());
  }
  EXPECT_TRUE(std::filesystem::exists(root / "stats.txt"));
}

// ---- frames and manifests

TEST(Ppm, QuantizedImageRoundTripsExactly) {
  const auto dir = scratch_dir("ppm");
  const auto img = quantize_8bit(random_frame(5, 7, 11).image);
  write_ppm(img, dir / "f.ppm");
  EXPECT_EQ(read_ppm(dir / "f.ppm"), img);
}

TEST(Ppm, RejectsOtherFormats) {
  const auto dir = scratch_dir("ppm_bad");
  std::ofstream(dir / "f.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_ppm(dir / "f.ppm"), DataError);
  std::ofstream(dir / "g.ppm", std::ios::binary) << "P6\n2 2\n255\n" << std::string(5, '\0');
  EXPECT_THROW(read_ppm(dir / "g.ppm"), DataError);
}

TEST(Manifest, RoundTrip) {
  Manifest m;
  m.frame_period = 0.05;
  for (std::size_t i = 0; i < 3; ++i) m.frames.push_back({i, 0.05 * i, "frames/00000" + std::to_string(i) + ".ppm"});
  std::stringstream ss;
  write_manifest(m, ss);
  const auto back = read_manifest(ss);
  EXPECT_EQ(back.pose_file, m.pose_file);
  EXPECT_EQ(back.frame_period, m.frame_period);
  ASSERT_EQ(back.frames.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.frames[i].index, i);
    EXPECT_EQ(back.frames[i].timestamp, m.frames[i].timestamp);
    EXPECT_EQ(back.frames[i].path, m.frames[i].path);
  }
}

TEST(Manifest, SequenceWithMismatchedPosesIsDataError) {
  const auto dir = scratch_dir("seq_mismatch");
  std::vector<Frame> frames{{0, Image(2, 2, 0.5f), 0.0}, {1, Image(2, 2, 0.5f), 0.1}};
  save_sequence(dir, random_trajectory(1, 3), frames);
  EXPECT_THROW(load_sequence(dir), DataError);
}

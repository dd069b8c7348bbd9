#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "attnvo/geometry.hpp"
#include "attnvo/random.hpp"
#include "attnvo/trajectory.hpp"

namespace attnvo::testing {

inline constexpr double kPi = std::numbers::pi;

/// Second angle kept away from +-pi/2 so the principal branch is well defined.
inline MotionVector random_motion(Rng& rng, double max_trans = 2.0) {
  MotionVector m;
  m.angles = Vec3(uniform(rng, -kPi + 1e-6, kPi), uniform(rng, -1.5, 1.5), uniform(rng, -kPi + 1e-6, kPi));
  m.trans = Vec3(uniform(rng, -max_trans, max_trans), uniform(rng, -max_trans, max_trans),
                 uniform(rng, -max_trans, max_trans));
  return m;
}

inline Pose random_pose(Rng& rng, double max_trans = 10.0) {
  return motion_to_pose(random_motion(rng, max_trans));
}

inline double max_abs_diff(const Mat4& a, const Mat4& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("attnvo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Horn's quaternion method: the optimal rotation is the top eigenvector of a
// symmetric 4x4 matrix built from the cross-covariance. Independent of the
// SVD route used by fit_rigid.
inline Mat3 horn_rotation(const std::vector<Vec3>& est, const std::vector<Vec3>& gt) {
  Vec3 me = Vec3::Zero(), mg = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    me += est[i];
    mg += gt[i];
  }
  me /= static_cast<double>(est.size());
  mg /= static_cast<double>(gt.size());
  Mat3 s = Mat3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) s += (est[i] - me) * (gt[i] - mg).transpose();
  Eigen::Matrix4d n;
  n << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
      s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
      s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),
      s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(n);
  const Eigen::Vector4d q = eig.eigenvectors().col(3);
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

/// Output depends only on the two frames of each pair: a few image moments
/// mapped to small motions.
class PairStub final : public MotionModel {
 public:
  std::vector<MotionVector> predict(std::span<const Frame* const> frames) const override {
    std::vector<MotionVector> out;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
      const auto a = moments(frames[i]->image), b = moments(frames[i + 1]->image);
      MotionVector m;
      m.angles = Vec3(0.01 * std::sin(a[0] + 2 * b[1]), 0.01 * std::cos(a[1] - b[2]), 0.005 * (a[2] - b[0]));
      m.trans = Vec3(0.1 * (b[0] - a[0]), 0.05 * std::sin(a[2] + b[2]), 0.5 + 0.1 * std::cos(a[0] * b[1]));
      out.push_back(m);
    }
    return out;
  }

 private:
  static std::array<double, 3> moments(const Image& img) {
    std::array<double, 3> m{};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) m[i % 3] += img.pixels[i] * (1.0 + 0.01 * (i % 17));
    for (auto& v : m) v /= static_cast<double>(img.pixels.size() / 3);
    return m;
  }
};

/// Looks the ground truth up by frame index.
class OracleModel final : public MotionModel {
 public:
  explicit OracleModel(Trajectory gt) : gt_(std::move(gt)) {}
  std::vector<MotionVector> predict(std::span<const Frame* const> frames) const override {
    std::vector<MotionVector> out;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
      out.push_back(pose_to_motion(relative(gt_.poses[frames[i]->index], gt_.poses[frames[i + 1]->index])));
    }
    return out;
  }

 private:
  Trajectory gt_;
};

}  // namespace attnvo::testing

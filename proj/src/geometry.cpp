#include "attnvo/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "attnvo/errors.hpp"

namespace attnvo {

namespace {

constexpr double kReorthoThreshold = 1e-9;
constexpr double kGimbalThreshold = 1e-7;

double wrap_angle(double a) {
  // atan2 can return -pi; the stored range is (-pi, pi].
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

}  // namespace

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

Pose Pose::from_rt(const Mat3& r, const Vec3& t, double tolerance) {
  if (!r.allFinite() || !t.allFinite()) {
    throw InvalidArgument("pose contains non-finite values");
  }
  const double err = orthonormality_error(r);
  if (err > tolerance) {
    std::ostringstream os;
    os << "rotation is not orthonormal (residual " << err << ")";
    throw InvalidArgument(os.str());
  }
  if (r.determinant() < 0.0) throw InvalidArgument("rotation has determinant -1");
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = err > kReorthoThreshold ? orthonormalize(r) : r;
  m.topRightCorner<3, 1>() = t;
  return Pose(m);
}

Pose Pose::from_matrix(const Mat4& m, double tolerance) {
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
    throw InvalidArgument("pose bottom row must be (0, 0, 0, 1)");
  }
  return from_rt(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>(), tolerance);
}

Pose Pose::from_translation(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topRightCorner<3, 1>() = t;
  return Pose(m);
}

Pose Pose::inverse() const {
  Mat4 m = Mat4::Identity();
  const Mat3 rt = rotation().transpose();
  m.topLeftCorner<3, 3>() = rt;
  m.topRightCorner<3, 1>() = -rt * translation();
  return Pose(m);
}

Mat3 tait_bryan_to_rotation(const Vec3& a) {
  return (Eigen::AngleAxisd(a[0], Vec3::UnitY()) * Eigen::AngleAxisd(a[1], Vec3::UnitX()) *
          Eigen::AngleAxisd(a[2], Vec3::UnitZ()))
      .toRotationMatrix();
}

Pose motion_to_pose(const MotionVector& m) {
  if (!m.angles.allFinite() || !m.trans.allFinite()) {
    throw InvalidArgument("motion vector contains non-finite values");
  }
  return Pose::from_rt(tait_bryan_to_rotation(m.angles), m.trans);
}

MotionVector pose_to_motion(const Pose& p) {
  const Mat3 r = p.rotation();
  // R = Ry(a) Rx(b) Rz(c):
  //   R(1,2) = -sin b, R(0,2) = sin a cos b, R(2,2) = cos a cos b,
  //   R(1,0) = cos b sin c, R(1,1) = cos b cos c.
  const double cos_b = std::hypot(r(1, 0), r(1, 1));
  if (cos_b < kGimbalThreshold) {
    std::ostringstream os;
    os << "second (x') Tait-Bryan angle is at gimbal lock: sin = " << -r(1, 2);
    throw DegenerateOrientation(os.str());
  }
  MotionVector m;
  m.angles[0] = wrap_angle(std::atan2(r(0, 2), r(2, 2)));
  m.angles[1] = std::atan2(-r(1, 2), cos_b);
  m.angles[2] = wrap_angle(std::atan2(r(1, 0), r(1, 1)));
  m.trans = p.translation();
  return m;
}

Pose compose(const Pose& prev, const Pose& rel) {
  const Mat4 m = prev.matrix() * rel.matrix();
  // Products of valid rotations stay within tolerance; from_rt re-projects
  // once the accumulated residual exceeds 1e-9.
  return Pose::from_rt(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>(), 1e-3);
}

Pose relative(const Pose& a, const Pose& b) { return compose(a.inverse(), b); }

double rotation_angle(const Mat3& r) {
  // same angle as acos((tr - 1) / 2), but accurate near 0 and pi
  const double c = (r.trace() - 1.0) / 2.0;
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), c);
}

double rotation_angle(const Pose& p) { return rotation_angle(p.rotation()); }

Trajectory accumulate(const Pose& initial, std::span<const MotionVector> motions,
                      double frame_period) {
  Trajectory traj;
  traj.frame_period = frame_period;
  traj.poses.reserve(motions.size() + 1);
  traj.poses.push_back(initial);
  for (const auto& m : motions) {
    traj.poses.push_back(compose(traj.poses.back(), motion_to_pose(m)));
  }
  return traj;
}

std::vector<MotionVector> relative_motions(const Trajectory& traj) {
  std::vector<MotionVector> out;
  if (traj.size() < 2) return out;
  out.reserve(traj.size() - 1);
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    out.push_back(pose_to_motion(relative(traj.poses[i], traj.poses[i + 1])));
  }
  return out;
}

RigidTransform fit_rigid(std::span<const Vec3> est, std::span<const Vec3> gt) {
  if (est.size() != gt.size()) {
    throw InvalidArgument("fit_rigid: point sets differ in size");
  }
  if (est.size() < 3) throw InsufficientData("fit_rigid: need at least 3 points");

  const double n = static_cast<double>(est.size());
  Vec3 mu_e = Vec3::Zero();
  Vec3 mu_g = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= n;
  mu_g /= n;

  // Cross-covariance sum (gt - mu_g)(est - mu_e)^T; the optimal R maximizes
  // trace(R^T H).
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    h += (gt[i] - mu_g) * (est[i] - mu_e).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  const double tol = 1e-12 * std::max(sv[0], 1.0);

  RigidTransform xf;
  if (sv[0] <= tol) {
    // All points coincide: no rotation is observable.
    xf.rotation = Mat3::Identity();
  } else if (sv[1] <= tol) {
    // Collinear points: every roll about the line fits equally well, so
    // take the smallest rotation carrying the est direction onto gt's.
    xf.rotation = Eigen::Quaterniond::FromTwoVectors(svd.matrixV().col(0), svd.matrixU().col(0))
                      .toRotationMatrix();
  } else {
    Mat3 s = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
    xf.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  }
  xf.translation = mu_g - xf.rotation * mu_e;
  return xf;
}

Trajectory transform_trajectory(const RigidTransform& xf, const Trajectory& traj) {
  const Pose left = Pose::from_rt(xf.rotation, xf.translation);
  Trajectory out;
  out.frame_period = traj.frame_period;
  out.poses.reserve(traj.size());
  for (const auto& p : traj.poses) out.poses.push_back(compose(left, p));
  return out;
}

Trajectory align_rigid(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) {
    throw InvalidArgument("align_rigid: trajectories differ in length (" +
                          std::to_string(est.size()) + " vs " + std::to_string(gt.size()) +
                          ")");
  }
  if (est.size() < 3) throw InsufficientData("align_rigid: need at least 3 poses");
  std::vector<Vec3> pe;
  std::vector<Vec3> pg;
  pe.reserve(est.size());
  pg.reserve(gt.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    pe.push_back(est.poses[i].translation());
    pg.push_back(gt.poses[i].translation());
  }
  return transform_trajectory(fit_rigid(pe, pg), est);
}

}  // namespace attnvo

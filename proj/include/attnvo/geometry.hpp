#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace attnvo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Orthonormality residual max|R^T R - I|.
double orthonormality_error(const Mat3& r);

/// Nearest rotation matrix in the Frobenius sense (polar decomposition).
Mat3 orthonormalize(const Mat3& r);

/// Rigid-body transform [R t; 0 1]. R is kept orthonormal with det +1.
class Pose {
 public:
  Pose() : m_(Mat4::Identity()) {}

  /// Throws InvalidArgument when the rotation deviates from SO(3) by more
  /// than `tolerance`; smaller deviations above 1e-9 are projected away.
  static Pose from_rt(const Mat3& r, const Vec3& t, double tolerance = 1e-6);
  static Pose from_matrix(const Mat4& m, double tolerance = 1e-6);
  static Pose from_translation(const Vec3& t);
  static Pose identity() { return Pose(); }

  const Mat4& matrix() const noexcept { return m_; }
  Mat3 rotation() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return m_.topRightCorner<3, 1>(); }

  Pose inverse() const;

 private:
  explicit Pose(const Mat4& m) : m_(m) {}
  Mat4 m_;
};

/// Relative camera motion: Tait-Bryan angles (y, x', z'' intrinsic, radians)
/// followed by a translation in meters.
struct MotionVector {
  Vec3 angles = Vec3::Zero();
  Vec3 trans = Vec3::Zero();

  bool operator==(const MotionVector& other) const = default;
};

struct Trajectory {
  std::vector<Pose> poses;
  double frame_period = 0.1;

  std::size_t size() const noexcept { return poses.size(); }
  bool empty() const noexcept { return poses.empty(); }
};

/// R = Ry(angles[0]) * Rx(angles[1]) * Rz(angles[2]).
Mat3 tait_bryan_to_rotation(const Vec3& angles);

Pose motion_to_pose(const MotionVector& m);

/// Principal branch, second angle in (-pi/2, pi/2). Throws
/// DegenerateOrientation when |cos(second angle)| < 1e-7.
MotionVector pose_to_motion(const Pose& p);

Pose compose(const Pose& prev, const Pose& rel);

/// T such that compose(a, T) == b.
Pose relative(const Pose& a, const Pose& b);

/// arccos(clamp((trace(R) - 1) / 2)), in [0, pi].
double rotation_angle(const Mat3& r);
double rotation_angle(const Pose& p);

Trajectory accumulate(const Pose& initial, std::span<const MotionVector> motions,
                      double frame_period = 0.1);

/// Per-step relative motions of a trajectory (inverse of accumulate).
std::vector<MotionVector> relative_motions(const Trajectory& traj);

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Closed-form least-squares rigid transform (no scale) mapping the
/// estimated positions onto the ground-truth positions.
RigidTransform fit_rigid(std::span<const Vec3> est, std::span<const Vec3> gt);

/// Applies fit_rigid over the trajectory translations and left-multiplies
/// every estimated pose by the result.
Trajectory align_rigid(const Trajectory& est, const Trajectory& gt);

Trajectory transform_trajectory(const RigidTransform& xf, const Trajectory& traj);

}  // namespace attnvo

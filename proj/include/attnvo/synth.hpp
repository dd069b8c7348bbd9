#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "attnvo/dataset.hpp"
#include "attnvo/geometry.hpp"
#include "attnvo/image.hpp"

namespace attnvo {

/// Pinhole camera in the KITTI convention (x right, y down, z forward).
/// Pixel (u, v) has its center at (u + 0.5, v + 0.5).
struct PinholeCamera {
  double focal = 64.0;
  double cx = 32.0;
  double cy = 16.0;

  /// Focal length = image width, principal point at the image center.
  static PinholeCamera for_image(ImageSize size);

  /// Returns nothing for points at or behind the near plane.
  std::optional<Eigen::Vector2d> project(const Vec3& p_cam, double near = 0.1) const;
};

struct SynthConfig {
  int n_points = 400;
  /// Landmarks are scattered up to this far from the path (meters).
  double world_extent = 20.0;
  int trajectory_length = 200;
  /// AR(1) coefficient for velocity perturbations; 0 freezes the motion at
  /// the initial velocities.
  double motion_smoothness = 0.9;
  ImageSize image_size{32, 64};
  double frame_period = 0.1;
  std::uint64_t seed = 1;

  /// Per-frame body velocities (camera frame): meters and Tait-Bryan
  /// radians per frame.
  Vec3 initial_velocity = Vec3(0.0, 0.0, 0.8);
  Vec3 initial_angular_velocity = Vec3::Zero();
  double velocity_noise = 0.1;
  double angular_noise = 0.01;
  double landmark_radius = 0.25;

  void validate() const;
};

struct SynthSequence {
  Trajectory trajectory;
  std::vector<Frame> frames;
  std::vector<Vec3> landmarks;
  std::vector<Vec3> colors;
};

SynthSequence synth_generate(const SynthConfig& cfg);

/// Renders the landmark cloud from `camera_pose` (camera-to-world).
Image render_landmarks(const SynthConfig& cfg, std::span<const Vec3> landmarks,
                       std::span<const Vec3> colors, const Pose& camera_pose);

struct SynthDatasetConfig {
  int n_trajectories = 20;
  int n_val = 3;
  int n_test = 3;
  SynthConfig base;
  /// Forward speed per trajectory drawn uniformly from this range (m/frame).
  double speed_min = 0.3;
  double speed_max = 1.2;
  /// Yaw rate per trajectory drawn uniformly from [-max, max] (rad/frame).
  double yaw_rate_max = 0.03;
  std::uint64_t seed = 7;
};

struct SynthDataset {
  std::vector<Sequence> train;
  std::vector<Sequence> val;
  std::vector<Sequence> test;
};

/// Generates the dataset in memory. Frames are 8-bit quantized so the
/// in-memory copy matches what a PPM round trip produces.
SynthDataset synth_dataset(const SynthDatasetConfig& cfg);

/// Writes <root>/{train,val,test}/<id>/ and <root>/stats.txt (train split).
void write_synth_dataset(const SynthDataset& ds, const std::filesystem::path& root);

}  // namespace attnvo

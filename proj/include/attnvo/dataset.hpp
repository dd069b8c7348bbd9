#pragma once

#include <filesystem>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "attnvo/geometry.hpp"
#include "attnvo/image.hpp"

namespace attnvo {

// ---------------------------------------------------------------------------
// Pose files: one pose per line, 12 whitespace-separated reals holding the
// row-major top 3x4 block of the pose matrix.
// ---------------------------------------------------------------------------

Trajectory read_poses(std::istream& in, double frame_period = 0.1);
void write_poses(std::ostream& out, const Trajectory& traj);

Trajectory load_pose_file(const std::filesystem::path& path, double frame_period = 0.1);
void save_pose_file(const Trajectory& traj, const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_real(double v);

/// Mid-Air body frame (x forward, y right, z down) to the KITTI camera
/// frame (x right, y down, z forward): returns C p C^-1.
Pose midair_to_camera_frame(const Pose& p);
Trajectory midair_to_camera_frame(const Trajectory& traj);

// ---------------------------------------------------------------------------
// Frames on disk: binary netpbm (P6, maxval 255).
// ---------------------------------------------------------------------------

void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Rounds [0, 1] floats to 8-bit and back, matching a PPM round trip.
Image quantize_8bit(const Image& img);

// ---------------------------------------------------------------------------
// Sequence layout: <root>/<split>/<id>/{frames/, poses.txt, manifest.txt}
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::size_t index = 0;
  double timestamp = 0.0;
  std::string path;  // relative to the sequence directory
};

struct Manifest {
  std::string pose_file = "poses.txt";
  double frame_period = 0.1;
  std::vector<ManifestEntry> frames;
};

void write_manifest(const Manifest& m, std::ostream& out);
Manifest read_manifest(std::istream& in);

/// Scans <dir>/frames/*.ppm in filename order and writes manifest.txt.
Manifest build_manifest(const std::filesystem::path& sequence_dir, double frame_period);

struct Sequence {
  std::string id;
  Trajectory trajectory;
  std::vector<std::shared_ptr<const Frame>> frames;
};

void save_sequence(const std::filesystem::path& dir, const Trajectory& traj,
                   std::span<const Frame> frames);

/// Loads frames (as [0, 1] images) and the ground-truth pose file. With
/// `require_poses` false a missing pose file yields an empty trajectory.
Sequence load_sequence(const std::filesystem::path& dir, bool require_poses = true);

/// All sequences under <root>/<split>, sorted by id.
std::vector<Sequence> load_split(const std::filesystem::path& root, const std::string& split);

void write_channel_stats(const ChannelStats& s, const std::filesystem::path& path);
ChannelStats read_channel_stats(const std::filesystem::path& path);

}  // namespace attnvo

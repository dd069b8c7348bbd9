#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <vector>

#include "attnvo/config.hpp"
#include "attnvo/dataset.hpp"
#include "attnvo/metrics.hpp"
#include "attnvo/training.hpp"
#include "attnvo/trajectory.hpp"

namespace attnvo {

// ---------------------------------------------------------------------------
// Wire format (all integers little-endian)
//
// input:  "AVOS" u32 version, then records
//         u32 payload_len | u64 frame_index | u32 width | u32 height | RGB bytes
//         where payload_len = 16 + 3 * width * height
// output: "AVOP" u32 version, then records
//         u32 payload_len | u64 frame_index | 12 x f64 pose (row-major 3x4) | f64 latency_ms
//         where payload_len = 8 + 13 * 8
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kStreamVersion = 1;

struct StreamFrameMessage {
  std::uint64_t index = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> rgb;
};

struct PoseMessage {
  std::uint64_t index = 0;
  std::array<double, 12> pose{};
  double latency_ms = 0.0;
};

void write_input_header(std::ostream& out);
/// Throws ProtocolError on a bad magic or version.
void read_input_header(std::istream& in);
void write_frame_message(std::ostream& out, const StreamFrameMessage& msg);
/// Returns nothing at a clean end of stream; throws ProtocolError on a
/// truncated or inconsistent record.
std::optional<StreamFrameMessage> read_frame_message(std::istream& in);

void write_output_header(std::ostream& out);
void read_output_header(std::istream& in);
void write_pose_message(std::ostream& out, const PoseMessage& msg);
std::optional<PoseMessage> read_pose_message(std::istream& in);

StreamFrameMessage frame_to_message(const Frame& frame);
Frame message_to_frame(const StreamFrameMessage& msg);
PoseMessage make_pose_message(std::uint64_t index, const Pose& pose, double latency_ms);
/// Validates the rotation like a pose file line.
Pose message_pose(const PoseMessage& msg);

// ---------------------------------------------------------------------------
// Streaming odometry
// ---------------------------------------------------------------------------

struct EmittedPose {
  std::uint64_t index = 0;
  Pose pose = Pose::identity();
};

/// Online form of infer_trajectory: frames arrive one at a time, a window
/// runs as soon as its last frame is in, and every newly covered frame's
/// pose is emitted exactly once. finish() flushes the truncated last window.
class StreamingOdometry {
 public:
  StreamingOdometry(const MotionModel& model, WindowConfig window, ChannelStats stats, ImageSize size,
                    const Pose& initial = Pose::identity());

  /// `frame` holds [0, 1] RGB; indices must strictly increase.
  std::vector<EmittedPose> push(const Frame& frame);
  std::vector<EmittedPose> finish();

  std::size_t frames_received() const noexcept { return received_; }

 private:
  std::vector<EmittedPose> run_window(std::size_t start, std::size_t end);

  const MotionModel& model_;
  WindowConfig window_;
  ChannelStats stats_;
  ImageSize size_;
  Pose current_;
  WindowAssembler assembler_;
  std::deque<Frame> buffer_;            // normalized frames from buffer_start_ on
  std::deque<std::uint64_t> indices_;   // frame indices, parallel to buffer_
  std::size_t buffer_start_ = 0;        // stream position of buffer_.front()
  std::size_t received_ = 0;
  std::size_t next_window_ = 0;         // start position of the next window
  std::size_t emitted_ = 0;
  std::optional<std::uint64_t> last_index_;
  bool finished_ = false;
};

struct ServeStats {
  std::size_t frames = 0;
  std::size_t poses = 0;
  double seconds = 0.0;
  double mean_latency_ms = 0.0;
};

/// Reads an input stream until it ends and writes pose messages in frame
/// order. Throughput lines go to `diag` when given.
ServeStats serve(std::istream& in, std::ostream& out, const MotionModel& model, const WindowConfig& window,
                 const ChannelStats& stats, ImageSize size, const ServeConfig& cfg, std::ostream* diag);

/// Accepts one TCP connection on `port` and serves it.
ServeStats serve_tcp(std::uint16_t port, const MotionModel& model, const WindowConfig& window,
                     const ChannelStats& stats, ImageSize size, const ServeConfig& cfg, std::ostream* diag);

// ---------------------------------------------------------------------------
// Offline evaluation helpers
// ---------------------------------------------------------------------------

/// Optional photometric / cutout corruption applied to raw frames before
/// normalization, seeded per frame.
struct Corruption {
  AugmentConfig augment;
  std::uint64_t seed = 0;
};

/// Normalizes (and optionally corrupts) the sequence frames, then runs
/// infer_trajectory from the first ground-truth pose.
Trajectory infer_sequence(const MotionModel& model, const Sequence& seq, const ChannelStats& stats,
                          ImageSize size, const WindowConfig& window,
                          const std::optional<Corruption>& corruption = std::nullopt);

}  // namespace attnvo

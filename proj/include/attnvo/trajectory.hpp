#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "attnvo/geometry.hpp"
#include "attnvo/image.hpp"
#include "attnvo/nn.hpp"

namespace attnvo {

struct WindowConfig {
  std::size_t size = 30;
  std::size_t overlap = 15;

  /// Throws ConfigError unless 2 <= size and overlap < size.
  void validate() const;
  std::size_t stride() const { return size - overlap; }
};

/// Inclusive frame ranges.
using WindowRange = std::pair<std::size_t, std::size_t>;

/// Windows start at 0 and advance by size - overlap; the last one is
/// truncated at the final frame.
std::vector<WindowRange> sliding_windows(std::size_t n_frames, const WindowConfig& cfg);

/// Incremental overlap reconciliation: pairs already covered by an earlier
/// window are kept, later copies are dropped.
class WindowAssembler {
 public:
  /// Accepts the predictions of a window starting at `start` (one motion
  /// per consecutive pair) and returns the newly covered motions. Throws
  /// AssemblyError when the window leaves a gap.
  std::vector<MotionVector> add(std::size_t start, std::span<const MotionVector> motions);
  /// Number of frame pairs covered so far.
  std::size_t covered() const noexcept { return covered_; }

 private:
  std::size_t covered_ = 0;
};

/// Returns exactly n_frames - 1 motions, or throws AssemblyError naming the
/// first uncovered frame.
std::vector<MotionVector> assemble(const std::vector<std::vector<MotionVector>>& window_predictions,
                                   std::size_t n_frames, const WindowConfig& cfg);

/// Anything that maps L >= 2 consecutive frames to L - 1 relative motions.
class MotionModel {
 public:
  virtual ~MotionModel() = default;
  virtual std::vector<MotionVector> predict(std::span<const Frame* const> frames) const = 0;
};

/// The trained network in eval mode.
class NetworkMotionModel final : public MotionModel {
 public:
  NetworkMotionModel(ModelConfig cfg, ParameterSet<float> params);
  std::vector<MotionVector> predict(std::span<const Frame* const> frames) const override;

  const ModelConfig& config() const noexcept { return cfg_; }

 private:
  ModelConfig cfg_;
  ParameterSet<float> params_;
};

/// Runs the model over sliding windows (state reset per window), assembles
/// the motions and accumulates them from `initial`. Frames are expected to
/// be normalized already.
Trajectory infer_trajectory(const MotionModel& model, std::span<const Frame* const> frames,
                            const WindowConfig& cfg, const Pose& initial = Pose::identity(),
                            double frame_period = 0.1);

/// Normalizes and resizes every frame for the network.
std::vector<Frame> prepare_frames(std::span<const Frame> frames, const ChannelStats& stats,
                                  ImageSize target);

}  // namespace attnvo

#pragma once

#include <memory>
#include <span>
#include <vector>

#include "attnvo/geometry.hpp"
#include "attnvo/image.hpp"
#include "attnvo/random.hpp"

namespace attnvo {

/// Short training sample. Ground truth is realigned so that the first frame
/// sits at the origin: accumulate(identity, gt_motions) reproduces the
/// segment's poses relative to its first pose.
struct Segment {
  std::vector<std::shared_ptr<const Frame>> frames;
  std::vector<MotionVector> gt_motions;
  std::size_t start = 0;  // index of the first frame in its source sequence

  std::size_t length() const noexcept { return frames.size(); }
};

struct SegmentConfig {
  std::size_t min_len = 5;
  std::size_t max_len = 7;
  std::size_t stride = 1;
};

/// Cuts a sequence into segments starting at multiples of `stride`, each
/// with a length drawn uniformly from [min_len, max_len] (shortened to the
/// remaining frames when that is still >= min_len).
std::vector<Segment> segment_trajectory(const Trajectory& traj,
                                        std::span<const std::shared_ptr<const Frame>> frames,
                                        const SegmentConfig& cfg, Rng& rng);

}  // namespace attnvo

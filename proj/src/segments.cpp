#include "attnvo/segments.hpp"

#include "attnvo/errors.hpp"

namespace attnvo {

std::vector<Segment> segment_trajectory(const Trajectory& traj,
                                        std::span<const std::shared_ptr<const Frame>> frames,
                                        const SegmentConfig& cfg, Rng& rng) {
  if (cfg.min_len < 2 || cfg.max_len < cfg.min_len) {
    throw InvalidArgument("segment lengths must satisfy 2 <= min_len <= max_len");
  }
  if (cfg.stride == 0) throw InvalidArgument("segment stride must be positive");
  if (traj.size() != frames.size()) {
    throw InvalidArgument("segment_trajectory: " + std::to_string(traj.size()) + " poses but " +
                          std::to_string(frames.size()) + " frames");
  }

  const std::size_t n = traj.size();
  std::vector<Segment> out;
  for (std::size_t s = 0; s + cfg.min_len <= n; s += cfg.stride) {
    auto len = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(cfg.min_len),
                                                    static_cast<std::int64_t>(cfg.max_len)));
    len = std::min(len, n - s);
    Segment seg;
    seg.start = s;
    seg.frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(s),
                      frames.begin() + static_cast<std::ptrdiff_t>(s + len));
    seg.gt_motions.reserve(len - 1);
    for (std::size_t i = s; i + 1 < s + len; ++i) {
      seg.gt_motions.push_back(pose_to_motion(relative(traj.poses[i], traj.poses[i + 1])));
    }
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace attnvo

#include "attnvo/trajectory.hpp"

#include <string>

namespace attnvo {

void WindowConfig::validate() const {
  if (size < 2) throw ConfigError("window: size must be >= 2");
  if (overlap >= size) throw ConfigError("window: overlap must be smaller than size");
}

std::vector<WindowRange> sliding_windows(std::size_t n_frames, const WindowConfig& cfg) {
  cfg.validate();
  if (n_frames < 2) throw InvalidArgument("sliding_windows: need at least 2 frames");
  std::vector<WindowRange> out;
  for (std::size_t s = 0;; s += cfg.stride()) {
    const std::size_t e = std::min(s + cfg.size - 1, n_frames - 1);
    out.emplace_back(s, e);
    if (e == n_frames - 1) break;
  }
  return out;
}

std::vector<MotionVector> WindowAssembler::add(std::size_t start, std::span<const MotionVector> motions) {
  const std::size_t end = start + motions.size();  // exclusive pair index
  if (start > covered_) {
    throw AssemblyError("no prediction covers the pair starting at frame " + std::to_string(covered_));
  }
  std::vector<MotionVector> fresh;
  for (std::size_t p = std::max(start, covered_); p < end; ++p) fresh.push_back(motions[p - start]);
  covered_ = std::max(covered_, end);
  return fresh;
}

std::vector<MotionVector> assemble(const std::vector<std::vector<MotionVector>>& window_predictions,
                                   std::size_t n_frames, const WindowConfig& cfg) {
  const auto windows = sliding_windows(n_frames, cfg);
  if (window_predictions.size() != windows.size()) {
    throw AssemblyError("expected " + std::to_string(windows.size()) + " windows, got " +
                        std::to_string(window_predictions.size()));
  }
  WindowAssembler asm_;
  std::vector<MotionVector> out;
  out.reserve(n_frames - 1);
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto [s, e] = windows[k];
    if (window_predictions[k].size() != e - s) {
      throw AssemblyError("window at frame " + std::to_string(s) + " must supply " +
                          std::to_string(e - s) + " motions, got " +
                          std::to_string(window_predictions[k].size()));
    }
    auto fresh = asm_.add(s, window_predictions[k]);
    out.insert(out.end(), fresh.begin(), fresh.end());
  }
  if (asm_.covered() != n_frames - 1) {
    throw AssemblyError("no prediction covers the pair starting at frame " +
                        std::to_string(asm_.covered()));
  }
  return out;
}

NetworkMotionModel::NetworkMotionModel(ModelConfig cfg, ParameterSet<float> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

std::vector<MotionVector> NetworkMotionModel::predict(std::span<const Frame* const> frames) const {
  if (frames.size() < 2) throw InvalidArgument("predict: need at least 2 frames");
  const Tensor<float> images =
      frames_to_tensor<float>({std::vector<const Frame*>(frames.begin(), frames.end())});
  Rng unused(0);
  const Tensor<float> out = model_forward(cfg_, params_, images, Mode::eval, unused);
  std::vector<MotionVector> motions(frames.size() - 1);
  for (std::size_t t = 0; t < motions.size(); ++t) {
    const float* v = out.data() + t * 6;
    motions[t].angles = Vec3(v[0], v[1], v[2]);
    motions[t].trans = Vec3(v[3], v[4], v[5]);
  }
  return motions;
}

Trajectory infer_trajectory(const MotionModel& model, std::span<const Frame* const> frames,
                            const WindowConfig& cfg, const Pose& initial, double frame_period) {
  const auto windows = sliding_windows(frames.size(), cfg);
  std::vector<std::vector<MotionVector>> preds;
  preds.reserve(windows.size());
  for (const auto& [s, e] : windows) {
    if (e == s) {
      preds.emplace_back();  // a lone trailing frame has no pairs
      continue;
    }
    preds.push_back(model.predict(frames.subspan(s, e - s + 1)));
  }
  const auto motions = assemble(preds, frames.size(), cfg);
  return accumulate(initial, motions, frame_period);
}

std::vector<Frame> prepare_frames(std::span<const Frame> frames, const ChannelStats& stats,
                                  ImageSize target) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(normalize_resize(f, stats, target));
  return out;
}

}  // namespace attnvo

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "attnvo/random.hpp"

namespace attnvo {

/// Interleaved RGB image, row-major, height x width x 3.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

struct Frame {
  std::size_t index = 0;
  Image image;
  double timestamp = 0.0;
};

struct ImageSize {
  int height = 0;
  int width = 0;
  bool operator==(const ImageSize&) const = default;
};

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Streaming per-channel mean / population variance (Chan et al. merge).
class ChannelStatsAccumulator {
 public:
  void add(const Image& img);
  void merge(const ChannelStatsAccumulator& other);
  std::size_t count() const noexcept { return count_; }
  ChannelStats stats() const;

 private:
  std::size_t count_ = 0;
  std::array<double, 3> mean_{};
  std::array<double, 3> m2_{};
};

/// Throws InvalidArgument on an empty input.
ChannelStats compute_channel_stats(std::span<const Frame> frames);

/// Half-pixel-centered bilinear resampling with edge clamping.
Image resize_bilinear(const Image& src, ImageSize target);

inline constexpr double kStdFloor = 1e-6;

/// Bilinear resize, then (x - mean) / max(std, 1e-6) per channel.
Frame normalize_resize(const Frame& frame, const ChannelStats& stats, ImageSize target);

struct AugmentConfig {
  double brightness_range = 0.2;
  double saturation_range = 0.2;
  double contrast_range = 0.2;
  int cutout_count_max = 2;
  /// Cutout side length as a fraction of the image side, [lo, hi].
  double cutout_size_min = 0.05;
  double cutout_size_max = 0.25;
  double apply_probability = 0.5;
  /// Cutout fill color; training sets it to the dataset channel mean.
  std::array<double, 3> cutout_fill{0.5, 0.5, 0.5};

  /// Throws ConfigError when a range is negative or the probability is
  /// outside [0, 1].
  void validate() const;
  static AugmentConfig none();
};

struct PixelRect {
  int x0 = 0;  // inclusive
  int y0 = 0;
  int x1 = 0;  // exclusive
  int y1 = 0;
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct AugmentResult {
  Frame frame;
  std::vector<PixelRect> cutouts;
};

/// Photometric jitter and cutout holes. Operates on [0, 1] images and clamps
/// the result back into [0, 1]. Deterministic given the rng state.
AugmentResult augment_traced(const Frame& frame, const AugmentConfig& cfg, Rng& rng);

inline Frame augment(const Frame& frame, const AugmentConfig& cfg, Rng& rng) {
  return augment_traced(frame, cfg, rng).frame;
}

}  // namespace attnvo

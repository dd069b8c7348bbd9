#include "attnvo/image.hpp"

#include <algorithm>
#include <cmath>

#include "attnvo/errors.hpp"

namespace attnvo {

Image::Image(int h, int w, float fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {
  if (h <= 0 || w <= 0) throw InvalidArgument("image dimensions must be positive");
}

void ChannelStatsAccumulator::add(const Image& img) {
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i) {
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (int c = 0; c < 3; ++c) {
      const double x = img.pixels[i * 3 + c];
      const double delta = x - mean_[c];
      mean_[c] += delta * inv;
      m2_[c] += delta * (x - mean_[c]);
    }
  }
}

void ChannelStatsAccumulator::merge(const ChannelStatsAccumulator& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (int c = 0; c < 3; ++c) {
    const double delta = other.mean_[c] - mean_[c];
    mean_[c] += delta * nb / n;
    m2_[c] += other.m2_[c] + delta * delta * na * nb / n;
  }
  count_ += other.count_;
}

ChannelStats ChannelStatsAccumulator::stats() const {
  if (count_ == 0) throw InvalidArgument("channel stats of an empty set");
  ChannelStats s;
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = mean_[c];
    s.std[c] = std::sqrt(std::max(0.0, m2_[c] / static_cast<double>(count_)));
  }
  return s;
}

ChannelStats compute_channel_stats(std::span<const Frame> frames) {
  if (frames.empty()) throw InvalidArgument("compute_channel_stats: no frames");
  ChannelStatsAccumulator acc;
  for (const auto& f : frames) acc.add(f.image);
  return acc.stats();
}

Image resize_bilinear(const Image& src, ImageSize target) {
  if (target.height <= 0 || target.width <= 0) {
    throw InvalidArgument("resize target dimensions must be positive");
  }
  if (src.height == target.height && src.width == target.width) return src;

  Image dst(target.height, target.width);
  const double sy = static_cast<double>(src.height) / target.height;
  const double sx = static_cast<double>(src.width) / target.width;

  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int n_dst, int n_src, double scale) {
    std::vector<Tap> out(n_dst);
    for (int d = 0; d < n_dst; ++d) {
      double s = (d + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, n_src - 1);
      out[d] = {i0, i1, s - i0};
    }
    return out;
  };
  const auto ty = taps(target.height, src.height, sy);
  const auto tx = taps(target.width, src.width, sx);

  for (int y = 0; y < target.height; ++y) {
    const auto& a = ty[y];
    for (int x = 0; x < target.width; ++x) {
      const auto& b = tx[x];
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - b.w1) * src.at(a.i0, b.i0, c) + b.w1 * src.at(a.i0, b.i1, c);
        const double bot = (1.0 - b.w1) * src.at(a.i1, b.i0, c) + b.w1 * src.at(a.i1, b.i1, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - a.w1) * top + a.w1 * bot);
      }
    }
  }
  return dst;
}

Frame normalize_resize(const Frame& frame, const ChannelStats& stats, ImageSize target) {
  Frame out;
  out.index = frame.index;
  out.timestamp = frame.timestamp;
  out.image = resize_bilinear(frame.image, target);
  std::array<double, 3> inv_std{};
  for (int c = 0; c < 3; ++c) inv_std[c] = 1.0 / std::max(stats.std[c], kStdFloor);
  auto& px = out.image.pixels;
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    px[i] = static_cast<float>((px[i] - stats.mean[c]) * inv_std[c]);
  }
  return out;
}

void AugmentConfig::validate() const {
  if (brightness_range < 0 || saturation_range < 0 || contrast_range < 0) {
    throw ConfigError("augment: jitter ranges must be non-negative");
  }
  if (cutout_count_max < 0) throw ConfigError("augment: cutout_count_max must be >= 0");
  if (cutout_size_min < 0 || cutout_size_max < cutout_size_min || cutout_size_max > 1) {
    throw ConfigError("augment: cutout size range must satisfy 0 <= min <= max <= 1");
  }
  if (apply_probability < 0 || apply_probability > 1) {
    throw ConfigError("augment: apply_probability must be in [0, 1]");
  }
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig cfg;
  cfg.brightness_range = 0;
  cfg.saturation_range = 0;
  cfg.contrast_range = 0;
  cfg.cutout_count_max = 0;
  cfg.apply_probability = 0;
  return cfg;
}

namespace {

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

AugmentResult augment_traced(const Frame& frame, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  AugmentResult res{frame, {}};
  Image& img = res.frame.image;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;

  // Draw every random quantity up front in a fixed order.
  const bool photometric = uniform01(rng) < cfg.apply_probability;
  const double brightness = 1.0 + uniform(rng, -cfg.brightness_range, cfg.brightness_range);
  const double contrast = 1.0 + uniform(rng, -cfg.contrast_range, cfg.contrast_range);
  const double saturation = 1.0 + uniform(rng, -cfg.saturation_range, cfg.saturation_range);
  const bool holes = uniform01(rng) < cfg.apply_probability;
  const auto count = holes ? uniform_int(rng, 0, cfg.cutout_count_max) : 0;

  const bool jitter = cfg.brightness_range > 0 || cfg.contrast_range > 0 || cfg.saturation_range > 0;
  if (photometric && jitter) {
    double mean_lum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto* p = &img.pixels[i * 3];
      for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(p[c] * brightness);
      mean_lum += luminance(p[0], p[1], p[2]);
    }
    mean_lum /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto* p = &img.pixels[i * 3];
      const double gray = luminance(p[0], p[1], p[2]);
      for (int c = 0; c < 3; ++c) {
        double v = gray + (p[c] - gray) * saturation;
        v = mean_lum + (v - mean_lum) * contrast;
        p[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  for (std::int64_t k = 0; k < count; ++k) {
    const double fh = uniform(rng, cfg.cutout_size_min, cfg.cutout_size_max);
    const double fw = uniform(rng, cfg.cutout_size_min, cfg.cutout_size_max);
    const int h = std::max(1, static_cast<int>(std::lround(fh * img.height)));
    const int w = std::max(1, static_cast<int>(std::lround(fw * img.width)));
    const int y0 = static_cast<int>(uniform_int(rng, 0, img.height - h));
    const int x0 = static_cast<int>(uniform_int(rng, 0, img.width - w));
    PixelRect r{x0, y0, x0 + w, y0 + h};
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = 0; c < 3; ++c) {
          img.at(y, x, c) = static_cast<float>(std::clamp(cfg.cutout_fill[c], 0.0, 1.0));
        }
      }
    }
    res.cutouts.push_back(r);
  }
  return res;
}

}  // namespace attnvo

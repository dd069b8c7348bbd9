#include "attnvo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnvo/errors.hpp"
#include "attnvo/random.hpp"

namespace attnvo {

PinholeCamera PinholeCamera::for_image(ImageSize size) {
  return {static_cast<double>(size.width), size.width / 2.0, size.height / 2.0};
}

std::optional<Eigen::Vector2d> PinholeCamera::project(const Vec3& p, double near) const {
  if (p.z() <= near) return std::nullopt;
  return Eigen::Vector2d(focal * p.x() / p.z() + cx, focal * p.y() / p.z() + cy);
}

void SynthConfig::validate() const {
  if (n_points <= 0) throw ConfigError("synth: n_points must be positive");
  if (trajectory_length < 2) throw ConfigError("synth: trajectory_length must be >= 2");
  if (motion_smoothness < 0.0 || motion_smoothness >= 1.0) {
    throw ConfigError("synth: motion_smoothness must be in [0, 1)");
  }
  if (image_size.height <= 0 || image_size.width <= 0) {
    throw ConfigError("synth: image size must be positive");
  }
  if (world_extent <= 1.0) throw ConfigError("synth: world_extent must exceed 1 m");
}

namespace {

constexpr float kBackground = 0.1f;

Vec3 gaussian3(Rng& rng) { return {normal01(rng), normal01(rng), normal01(rng)}; }

}  // namespace

Image render_landmarks(const SynthConfig& cfg, std::span<const Vec3> landmarks,
                       std::span<const Vec3> colors, const Pose& camera_pose) {
  const ImageSize size = cfg.image_size;
  const PinholeCamera cam = PinholeCamera::for_image(size);
  const Pose world_to_cam = camera_pose.inverse();
  const Mat3 r = world_to_cam.rotation();
  const Vec3 t = world_to_cam.translation();

  struct Disc {
    double depth, u, v, radius;
    std::size_t id;
  };
  std::vector<Disc> discs;
  discs.reserve(landmarks.size());
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const Vec3 pc = r * landmarks[i] + t;
    const auto uv = cam.project(pc);
    if (!uv) continue;
    const double radius = std::max(0.7, cam.focal * cfg.landmark_radius / pc.z());
    if ((*uv)[0] + radius < 0 || (*uv)[0] - radius > size.width || (*uv)[1] + radius < 0 ||
        (*uv)[1] - radius > size.height) {
      continue;
    }
    discs.push_back({pc.z(), (*uv)[0], (*uv)[1], radius, i});
  }
  // Painter's order: far to near, ties broken by landmark id.
  std::sort(discs.begin(), discs.end(), [](const Disc& a, const Disc& b) {
    return a.depth != b.depth ? a.depth > b.depth : a.id < b.id;
  });

  Image img(size.height, size.width, kBackground);
  for (const auto& d : discs) {
    const int x0 = std::max(0, static_cast<int>(std::floor(d.u - d.radius - 1)));
    const int x1 = std::min(size.width - 1, static_cast<int>(std::ceil(d.u + d.radius + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(d.v - d.radius - 1)));
    const int y1 = std::min(size.height - 1, static_cast<int>(std::ceil(d.v + d.radius + 1)));
    const Vec3& col = colors[d.id];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dist = std::hypot(x + 0.5 - d.u, y + 0.5 - d.v);
        // Linear coverage ramp one pixel wide around the rim.
        const double alpha = std::clamp(d.radius + 0.5 - dist, 0.0, 1.0);
        if (alpha <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          float& px = img.at(y, x, c);
          px = static_cast<float>((1.0 - alpha) * px + alpha * col[c]);
        }
      }
    }
  }
  return img;
}

SynthSequence synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, {0}));

  SynthSequence out;
  out.trajectory.frame_period = cfg.frame_period;
  out.trajectory.poses.reserve(cfg.trajectory_length);
  out.trajectory.poses.push_back(Pose::identity());

  const double s = cfg.motion_smoothness;
  Vec3 dv = Vec3::Zero();
  Vec3 dw = Vec3::Zero();
  for (int k = 1; k < cfg.trajectory_length; ++k) {
    dv = s * dv + s * cfg.velocity_noise * gaussian3(rng);
    dw = s * dw + s * cfg.angular_noise * gaussian3(rng);
    MotionVector m;
    m.angles = cfg.initial_angular_velocity + dw;
    m.trans = cfg.initial_velocity + dv;
    out.trajectory.poses.push_back(compose(out.trajectory.poses.back(), motion_to_pose(m)));
  }

  // Landmarks are placed in the view frustum of random path poses so the
  // whole path sees structure.
  Rng lm_rng(derive_seed(cfg.seed, {1}));
  const double near = 1.0;
  out.landmarks.reserve(cfg.n_points);
  out.colors.reserve(cfg.n_points);
  for (int i = 0; i < cfg.n_points; ++i) {
    const auto k = uniform_int(lm_rng, 0, cfg.trajectory_length - 1);
    const double z = uniform(lm_rng, near, cfg.world_extent);
    const double x = uniform(lm_rng, -0.6, 0.6) * z;
    const double y = uniform(lm_rng, -0.4, 0.4) * z;
    const Pose& p = out.trajectory.poses[static_cast<std::size_t>(k)];
    out.landmarks.push_back(p.rotation() * Vec3(x, y, z) + p.translation());
    out.colors.emplace_back(uniform(lm_rng, 0.25, 1.0), uniform(lm_rng, 0.25, 1.0),
                            uniform(lm_rng, 0.25, 1.0));
  }

  out.frames.reserve(cfg.trajectory_length);
  for (int k = 0; k < cfg.trajectory_length; ++k) {
    Frame f;
    f.index = static_cast<std::size_t>(k);
    f.timestamp = k * cfg.frame_period;
    f.image = render_landmarks(cfg, out.landmarks, out.colors, out.trajectory.poses[k]);
    out.frames.push_back(std::move(f));
  }
  return out;
}

namespace {

Sequence to_sequence(SynthSequence&& s, std::string id) {
  Sequence seq;
  seq.id = std::move(id);
  seq.trajectory = std::move(s.trajectory);
  seq.frames.reserve(s.frames.size());
  for (auto& f : s.frames) {
    f.image = quantize_8bit(f.image);
    seq.frames.push_back(std::make_shared<const Frame>(std::move(f)));
  }
  return seq;
}

std::string sequence_id(int i) {
  std::string id = std::to_string(i);
  return std::string(id.size() < 4 ? 4 - id.size() : 0, '0') + id;
}

}  // namespace

SynthDataset synth_dataset(const SynthDatasetConfig& cfg) {
  if (cfg.n_val < 0 || cfg.n_test < 0 || cfg.n_val + cfg.n_test >= cfg.n_trajectories) {
    throw ConfigError("synth dataset: need at least one training trajectory");
  }
  SynthDataset ds;
  const int n_train = cfg.n_trajectories - cfg.n_val - cfg.n_test;
  for (int i = 0; i < cfg.n_trajectories; ++i) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)}));
    SynthConfig sc = cfg.base;
    sc.seed = rng();
    sc.initial_velocity = Vec3(0.0, 0.0, uniform(rng, cfg.speed_min, cfg.speed_max));
    sc.initial_angular_velocity = Vec3(uniform(rng, -cfg.yaw_rate_max, cfg.yaw_rate_max), 0.0, 0.0);
    auto seq = to_sequence(synth_generate(sc), sequence_id(i));
    if (i < n_train) {
      ds.train.push_back(std::move(seq));
    } else if (i < n_train + cfg.n_val) {
      ds.val.push_back(std::move(seq));
    } else {
      ds.test.push_back(std::move(seq));
    }
  }
  return ds;
}

void write_synth_dataset(const SynthDataset& ds, const std::filesystem::path& root) {
  auto write_split = [&](const std::vector<Sequence>& seqs, const char* split) {
    for (const auto& s : seqs) {
      std::vector<Frame> frames;
      frames.reserve(s.frames.size());
      for (const auto& f : s.frames) frames.push_back(*f);
      save_sequence(root / split / s.id, s.trajectory, frames);
    }
  };
  write_split(ds.train, "train");
  write_split(ds.val, "val");
  write_split(ds.test, "test");

  ChannelStatsAccumulator acc;
  for (const auto& s : ds.train) {
    for (const auto& f : s.frames) acc.add(f->image);
  }
  write_channel_stats(acc.stats(), root / "stats.txt");
}

}  // namespace attnvo

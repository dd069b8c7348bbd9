#include "attnvo/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "attnvo/config.hpp"
#include "attnvo/errors.hpp"

namespace attnvo {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_loss_shapes(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape()) {
    throw InvalidArgument("loss: prediction " + shape_string(pred.shape()) + " vs ground truth " +
                          shape_string(gt.shape()));
  }
  if (pred.rank() != 3 || pred.dim(2) != 6) {
    throw InvalidArgument("loss: expected [B, T, 6], got " + shape_string(pred.shape()));
  }
}

}  // namespace

template <typename T>
LossParts loss_parts(const Tensor<T>& pred, const Tensor<T>& gt) {
  check_loss_shapes(pred, gt);
  LossParts parts;
  const std::size_t rows = pred.size() / 6;
  for (std::size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < 6; ++c) {
      const double d = static_cast<double>(pred[r * 6 + c]) - static_cast<double>(gt[r * 6 + c]);
      (c < 3 ? parts.rotation : parts.translation) += d * d;
    }
  }
  const double b = pred.dim(0);
  parts.rotation /= b;
  parts.translation /= b;
  return parts;
}

template <typename T>
double loss_mse(const Tensor<T>& pred, const Tensor<T>& gt, double kappa, Tensor<T>* grad) {
  const LossParts parts = loss_parts(pred, gt);
  if (grad) {
    *grad = Tensor<T>(pred.shape());
    const double scale = 2.0 / pred.dim(0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double w = (i % 6) < 3 ? kappa : 1.0;
      (*grad)[i] = static_cast<T>(scale * w * (static_cast<double>(pred[i]) - gt[i]));
    }
  }
  return parts.total(kappa);
}

// ---------------------------------------------------------------------------
// Adagrad
// ---------------------------------------------------------------------------

template <typename T>
void adagrad_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdagradState<T>& state,
                  double lr) {
  if (grads.size() != params.size() || state.accum.size() != params.size()) {
    throw InvalidArgument("adagrad: parameter, gradient and state sets differ");
  }
  const T rate = static_cast<T>(lr);
  const T eps = static_cast<T>(state.epsilon);
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& p = params.entry(e);
    if (!p.trainable) continue;
    const auto& g = grads.entry(e).value;
    auto& a = state.accum.entry(e).value;
    if (g.shape() != p.value.shape() || a.shape() != p.value.shape()) {
      throw InvalidArgument("adagrad: shape mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      a[i] += g[i] * g[i];
      p.value[i] -= rate * g[i] / (std::sqrt(a[i]) + eps);
    }
  }
}

template <typename T>
double clip_grad_norm(ParameterSet<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& e : grads.entries()) {
    for (T v : e.value.values()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& e : grads.entries()) {
      for (T& v : e.value.values()) v *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(rotation_weight > 0.0)) throw ConfigError("train: rotation_weight must be > 0");
  if (early_stop_patience < 1) throw ConfigError("train: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
  if (!(min_delta >= 0.0)) throw ConfigError("train: min_delta must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
  if (segments.min_len < 2 || segments.min_len > segments.max_len) {
    throw ConfigError("segments: need 2 <= min_len <= max_len");
  }
  if (segments.stride < 1) throw ConfigError("segments: stride must be >= 1");
  model.validate();
  augment.validate();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'V', 'O', 'C', 'K', 'P', 'T', '\0'};
constexpr char kEndMarker[4] = {'E', 'N', 'D', '\0'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;
const std::string kAdagradPrefix = "adagrad/";

template <typename V>
void put(std::ostream& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.write(buf, sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  char buf[sizeof(V)];
  if (!in.read(buf, sizeof(V))) throw CheckpointError("checkpoint is truncated");
  V v;
  std::memcpy(&v, buf, sizeof(V));
  return v;
}

std::string get_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CheckpointError("checkpoint is truncated");
  }
  return s;
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  if (name.size() > 0xffff) throw CheckpointError("tensor name too long: " + name);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(out, kDtypeF32);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

struct RawTensor {
  std::vector<int> shape;
  std::vector<float> data;
};

RawTensor get_tensor(std::istream& in, std::string& name) {
  const auto len = get<std::uint16_t>(in);
  name = get_bytes(in, len);
  const auto dtype = get<std::uint8_t>(in);
  const auto rank = get<std::uint8_t>(in);
  RawTensor t;
  for (int i = 0; i < rank; ++i) {
    const auto d = get<std::uint32_t>(in);
    if (d == 0 || d > (1u << 30)) throw CheckpointError("tensor " + name + " has an invalid extent");
    t.shape.push_back(static_cast<int>(d));
  }
  const std::size_t n = Tensor<float>::count(t.shape);
  if (dtype == kDtypeF32) {
    const std::string raw = get_bytes(in, n * sizeof(float));
    t.data.resize(n);
    std::memcpy(t.data.data(), raw.data(), raw.size());
  } else if (dtype == kDtypeF64) {
    const std::string raw = get_bytes(in, n * sizeof(double));
    std::vector<double> tmp(n);
    std::memcpy(tmp.data(), raw.data(), raw.size());
    t.data.assign(tmp.begin(), tmp.end());
  } else {
    throw CheckpointError("tensor " + name + " has unknown dtype tag " + std::to_string(dtype));
  }
  return t;
}

std::string join3(const std::array<double, 3>& v) {
  return format_real(v[0]) + "," + format_real(v[1]) + "," + format_real(v[2]);
}

std::array<double, 3> split3(const std::string& key, const std::string& s) {
  std::array<double, 3> out{};
  std::stringstream ss(s);
  std::string item;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, item, ',')) throw CheckpointError("metadata " + key + " needs 3 values");
    try {
      out[static_cast<std::size_t>(i)] = std::stod(item);
    } catch (const std::exception&) {
      throw CheckpointError("metadata " + key + " is malformed");
    }
  }
  return out;
}

KeyValues checkpoint_metadata(const Checkpoint& c) {
  KeyValues kv = model_key_values(c.model);
  kv.emplace_back("epoch", std::to_string(c.epoch));
  kv.emplace_back("best_loss", format_real(c.best_loss));
  kv.emplace_back("best_epoch", std::to_string(c.best_epoch));
  kv.emplace_back("wait", std::to_string(c.wait));
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("adagrad_epsilon", format_real(c.optimizer.epsilon));
  kv.emplace_back("stats.mean", join3(c.stats.mean));
  kv.emplace_back("stats.std", join3(c.stats.std));
  for (const auto& r : c.history) {
    // wall time stays out so identical runs give identical files
    kv.emplace_back("history", std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," +
                                   format_real(r.val_loss));
  }
  for (const auto& [k, v] : c.train_config) kv.emplace_back("config." + k, v);
  return kv;
}

double meta_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  if (v == "nan" || v == "-nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw CheckpointError("metadata " + key + " is malformed: '" + v + "'");
  }
}

long long meta_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw CheckpointError("metadata " + key + " is malformed: '" + v + "'");
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream meta;
  write_key_values(checkpoint_metadata(ckpt), meta);
  const std::string text = meta.str();

  // Written to a sibling file first so a crash never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    std::size_t n_trainable = 0;
    for (const auto& e : ckpt.params.entries()) n_trainable += e.trainable ? 1 : 0;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size() + n_trainable));
    for (const auto& e : ckpt.params.entries()) put_tensor(out, e.name, e.value);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (!ckpt.params.entry(i).trainable) continue;
      put_tensor(out, kAdagradPrefix + ckpt.params.entry(i).name, ckpt.optimizer.accum.entry(i).value);
    }
    out.write(kEndMarker, sizeof(kEndMarker));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    if (get_bytes(in, sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
      throw CheckpointError("not a checkpoint file (bad magic)");
    }
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                            " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto meta_len = get<std::uint32_t>(in);
    std::istringstream meta(get_bytes(in, meta_len));
    KeyValues kv;
    try {
      kv = parse_key_values(meta);
    } catch (const ParseError& e) {
      throw CheckpointError(std::string("metadata: ") + e.what());
    }

    Checkpoint c;
    try {
      c.model = model_from_key_values(kv);
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("model configuration: ") + e.what());
    }
    c.optimizer.epsilon = kAdagradEpsilon;
    for (const auto& [k, v] : kv) {
      if (k == "epoch") c.epoch = static_cast<int>(meta_int(k, v));
      else if (k == "best_loss") c.best_loss = meta_double(k, v);
      else if (k == "best_epoch") c.best_epoch = static_cast<int>(meta_int(k, v));
      else if (k == "wait") c.wait = static_cast<int>(meta_int(k, v));
      else if (k == "seed") {
        try {
          c.seed = static_cast<std::uint64_t>(std::stoull(v));
        } catch (const std::exception&) {
          throw CheckpointError("metadata seed is malformed: '" + v + "'");
        }
      }
      else if (k == "adagrad_epsilon") c.optimizer.epsilon = meta_double(k, v);
      else if (k == "stats.mean") c.stats.mean = split3(k, v);
      else if (k == "stats.std") c.stats.std = split3(k, v);
      else if (k == "history") {
        std::stringstream ss(v);
        std::string a, b, d;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, d)) {
          throw CheckpointError("metadata history row is malformed");
        }
        c.history.push_back({static_cast<int>(meta_int(k, a)), meta_double(k, b), meta_double(k, d), 0.0});
      } else if (k.rfind("config.", 0) == 0) {
        c.train_config.emplace_back(k.substr(7), v);
      }
    }

    // The model configuration fixes the expected names and shapes.
    c.params = init_parameters<float>(c.model, 0);
    c.optimizer.accum = c.params.zeros_like();
    std::vector<bool> seen_param(c.params.size(), false), seen_opt(c.params.size(), false);
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name;
      RawTensor raw = get_tensor(in, name);
      const bool is_opt = name.rfind(kAdagradPrefix, 0) == 0;
      const std::string base = is_opt ? name.substr(kAdagradPrefix.size()) : name;
      const auto idx = c.params.find(base);
      if (!idx) throw CheckpointError("unexpected tensor '" + name + "'");
      Tensor<float>& dst = is_opt ? c.optimizer.accum.entry(*idx).value : c.params.entry(*idx).value;
      if (raw.shape != dst.shape()) {
        throw CheckpointError("tensor " + name + " has shape " + shape_string(raw.shape) +
                              ", model expects " + shape_string(dst.shape()));
      }
      dst = Tensor<float>(raw.shape, std::move(raw.data));
      (is_opt ? seen_opt : seen_param)[*idx] = true;
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (!seen_param[i]) throw CheckpointError("missing tensor '" + c.params.entry(i).name + "'");
      if (c.params.entry(i).trainable && !seen_opt[i]) {
        throw CheckpointError("missing optimizer state for '" + c.params.entry(i).name + "'");
      }
    }
    if (get_bytes(in, sizeof(kEndMarker)) != std::string(kEndMarker, sizeof(kEndMarker))) {
      throw CheckpointError("missing end marker");
    }
    return c;
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
  out << "epoch,train_loss,val_loss,wall_seconds\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_real(r.train_loss) << ',' << format_real(r.val_loss) << ','
        << format_real(r.wall_seconds) << '\n';
  }
}

std::vector<EpochRecord> read_history_csv(std::istream& in) {
  std::vector<EpochRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "epoch,train_loss,val_loss,wall_seconds") throw ParseError("history: bad header", n);
      continue;
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c, d;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',') ||
        !std::getline(ss, d)) {
      throw ParseError("history: expected 4 columns", n);
    }
    try {
      out.push_back({std::stoi(a), meta_double("train_loss", b), meta_double("val_loss", c),
                     meta_double("wall_seconds", d)});
    } catch (const std::exception&) {
      throw ParseError("history: bad number", n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

ChannelStats training_stats(const std::vector<Sequence>& train, ImageSize size) {
  ChannelStatsAccumulator acc;
  for (const auto& s : train) {
    for (const auto& f : s.frames) acc.add(resize_bilinear(f->image, size));
  }
  if (acc.count() == 0) throw InvalidArgument("training split has no frames");
  return acc.stats();
}

TrainData load_train_data(const TrainConfig& cfg) {
  if (cfg.data_root.empty()) throw ConfigError("train: data_root is not set");
  TrainData d;
  d.train = load_split(cfg.data_root, cfg.train_split);
  if (d.train.empty()) {
    throw DataError("no sequences under " + (cfg.data_root / cfg.train_split).string());
  }
  if (std::filesystem::exists(cfg.data_root / cfg.val_split)) {
    d.val = load_split(cfg.data_root, cfg.val_split);
  }
  const auto stats_file = cfg.data_root / "stats.txt";
  d.stats = std::filesystem::exists(stats_file) ? read_channel_stats(stats_file)
                                                : training_stats(d.train, cfg.model.image_size);
  return d;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

// Stream identifiers for derive_seed.
enum : std::uint64_t {
  kStreamInit = 1,
  kStreamTrainSegments,
  kStreamValSegments,
  kStreamShuffle,
  kStreamAugment,
  kStreamDropout,
};

struct SampleRef {
  std::size_t seq = 0;
  std::size_t start = 0;
  std::size_t len = 0;
  std::vector<MotionVector> gt;
};

struct SampleSet {
  const std::vector<Sequence>* sequences = nullptr;
  std::vector<SampleRef> samples;
  /// Normalized frames per sequence; empty when frames are prepared per batch.
  std::vector<std::vector<Frame>> normalized;
};

SampleSet build_samples(const std::vector<Sequence>& seqs, const SegmentConfig& seg, std::uint64_t seed,
                        bool cache, const ChannelStats& stats, ImageSize size) {
  SampleSet set;
  set.sequences = &seqs;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    for (auto& s : segment_trajectory(seqs[i].trajectory, seqs[i].frames, seg, rng)) {
      set.samples.push_back({i, s.start, s.length(), std::move(s.gt_motions)});
    }
  }
  if (cache) {
    set.normalized.resize(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      set.normalized[i].reserve(seqs[i].frames.size());
      for (const auto& f : seqs[i].frames) set.normalized[i].push_back(normalize_resize(*f, stats, size));
    }
  }
  return set;
}

/// Same-length groups of at most batch_size samples, in `order`; the
/// leftovers of each length form the final, smaller batches.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                   const SampleSet& set, int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  std::map<std::size_t, std::vector<std::size_t>> pending;
  for (std::size_t id : order) {
    auto& b = pending[set.samples[id].len];
    b.push_back(id);
    if (static_cast<int>(b.size()) == batch_size) {
      batches.push_back(std::move(b));
      b.clear();
    }
  }
  for (auto& [len, b] : pending) {
    if (!b.empty()) batches.push_back(std::move(b));
  }
  return batches;
}

Tensor<float> gt_tensor(const SampleSet& set, const std::vector<std::size_t>& batch) {
  const int steps = static_cast<int>(set.samples[batch.front()].len) - 1;
  Tensor<float> gt({static_cast<int>(batch.size()), steps, 6});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = set.samples[batch[b]];
    for (int t = 0; t < steps; ++t) {
      float* dst = gt.data() + (b * steps + t) * 6;
      for (int k = 0; k < 3; ++k) {
        dst[k] = static_cast<float>(s.gt[t].angles[k]);
        dst[3 + k] = static_cast<float>(s.gt[t].trans[k]);
      }
    }
  }
  return gt;
}

/// Images for a batch from the normalized cache.
Tensor<float> cached_images(const SampleSet& set, const std::vector<std::size_t>& batch) {
  std::vector<std::vector<const Frame*>> frames;
  frames.reserve(batch.size());
  for (std::size_t id : batch) {
    const auto& s = set.samples[id];
    std::vector<const Frame*> f;
    for (std::size_t k = 0; k < s.len; ++k) f.push_back(&set.normalized[s.seq][s.start + k]);
    frames.push_back(std::move(f));
  }
  return frames_to_tensor<float>(frames);
}

double mean_loss(const ModelConfig& model, const ParameterSet<float>& params, const SampleSet& set,
                 int batch_size, double kappa) {
  if (set.samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> order(set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  Rng unused(0);
  for (const auto& batch : make_batches(order, set, batch_size)) {
    const Tensor<float> out = model_forward(model, params, cached_images(set, batch), Mode::eval, unused);
    sum += loss_mse(out, gt_tensor(set, batch), kappa) * static_cast<double>(batch.size());
  }
  return sum / static_cast<double>(set.samples.size());
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

double evaluate_loss(const ModelConfig& cfg, const ParameterSet<float>& params,
                     const std::vector<Sequence>& sequences, const ChannelStats& stats,
                     const SegmentConfig& segments, int batch_size, double kappa, std::uint64_t seed) {
  const SampleSet set = build_samples(sequences, segments, derive_seed(seed, {kStreamValSegments}),
                                      true, stats, cfg.image_size);
  return mean_loss(cfg, params, set, batch_size, kappa);
}

TrainResult train(const TrainConfig& cfg, const TrainData& data, const Checkpoint* resume_last,
                  const Checkpoint* resume_best, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw DataError("train: the training split is empty");
  if (cfg.monitor == Monitor::validation && data.val.empty()) {
    throw ConfigError("train: validation monitor needs a non-empty validation split");
  }
  const ImageSize size = cfg.model.image_size;
  const double kappa = cfg.rotation_weight;

  AugmentConfig aug = cfg.augment;
  aug.cutout_fill = data.stats.mean;

  SampleSet train_set = build_samples(data.train, cfg.segments, derive_seed(cfg.seed, {kStreamTrainSegments}),
                                      !cfg.augment_enabled, data.stats, size);
  const SampleSet val_set = build_samples(data.val, cfg.segments, derive_seed(cfg.seed, {kStreamValSegments}),
                                          true, data.stats, size);
  if (train_set.samples.empty()) throw DataError("train: no segment fits in the training sequences");

  Checkpoint state;
  state.model = cfg.model;
  state.stats = data.stats;
  state.seed = cfg.seed;
  {
    AppConfig app;
    app.train = cfg;
    for (auto& [k, v] : to_key_values(app)) {
      if (k == "train.output_dir") continue;
      if (k.rfind("train.", 0) == 0 || k.rfind("segments.", 0) == 0 || k.rfind("augment.", 0) == 0) {
        state.train_config.emplace_back(k, v);
      }
    }
  }
  Checkpoint best;
  if (resume_last) {
    if (!(resume_last->model == cfg.model)) throw ConfigError("resume: model configuration differs");
    if (resume_last->seed != cfg.seed) throw ConfigError("resume: seed differs");
    state.params = resume_last->params;
    state.optimizer = resume_last->optimizer;
    state.epoch = resume_last->epoch;
    state.best_loss = resume_last->best_loss;
    state.best_epoch = resume_last->best_epoch;
    state.wait = resume_last->wait;
    state.history = resume_last->history;
    // wall times of the earlier epochs live only in history.csv
    if (!cfg.output_dir.empty() && std::filesystem::exists(cfg.output_dir / "history.csv")) {
      std::ifstream h(cfg.output_dir / "history.csv");
      try {
        for (const auto& r : read_history_csv(h)) {
          for (auto& mine : state.history) {
            if (mine.epoch == r.epoch) mine.wall_seconds = r.wall_seconds;
          }
        }
      } catch (const ParseError&) {
      }
    }
    if (resume_best) {
      best = *resume_best;
    } else if (resume_last->best_epoch == resume_last->epoch) {
      best = *resume_last;
    } else {
      throw ConfigError("resume: the best checkpoint is required");
    }
  } else {
    state.params = init_parameters<float>(cfg.model, derive_seed(cfg.seed, {kStreamInit}));
    state.optimizer = AdagradState<float>::for_params(state.params);
  }

  if (!cfg.output_dir.empty()) std::filesystem::create_directories(cfg.output_dir);
  auto persist = [&](bool improved) {
    if (cfg.output_dir.empty()) return;
    save_checkpoint(state, cfg.output_dir / "last.ckpt");
    if (improved) save_checkpoint(state, cfg.output_dir / "best.ckpt");
    std::ofstream h(cfg.output_dir / "history.csv");
    write_history_csv(state.history, h);
  };

  TrainResult result;
  bool stop = state.wait >= cfg.early_stop_patience;
  result.early_stopped = stop;
  while (!stop && state.epoch < cfg.max_epochs) {
    const int epoch = state.epoch + 1;
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = static_cast<std::uint64_t>(epoch);

    std::vector<std::size_t> order(train_set.samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, {kStreamShuffle, e}));
    shuffle(order, shuffle_rng);
    const auto batches = make_batches(order, train_set, cfg.batch_size);

    double train_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      Tensor<float> images;
      if (cfg.augment_enabled) {
        std::vector<std::vector<Frame>> storage;
        std::vector<std::vector<const Frame*>> ptrs;
        storage.reserve(batch.size());
        for (std::size_t id : batch) {
          const auto& s = train_set.samples[id];
          std::vector<Frame> frames;
          for (std::size_t k = 0; k < s.len; ++k) {
            Rng arng(derive_seed(cfg.seed, {kStreamAugment, e, id, k}));
            const Frame& raw = *data.train[s.seq].frames[s.start + k];
            frames.push_back(normalize_resize(augment(raw, aug, arng), data.stats, size));
          }
          storage.push_back(std::move(frames));
        }
        for (const auto& fs : storage) {
          std::vector<const Frame*> p;
          for (const auto& f : fs) p.push_back(&f);
          ptrs.push_back(std::move(p));
        }
        images = frames_to_tensor<float>(ptrs);
      } else {
        images = cached_images(train_set, batch);
      }

      Rng drop(derive_seed(cfg.seed, {kStreamDropout, e, bi}));
      ModelTape<float> tape;
      const Tensor<float> out = model_forward(cfg.model, state.params, images, Mode::train, drop, &tape);
      Tensor<float> grad_out;
      const double loss = loss_mse(out, gt_tensor(train_set, batch), kappa, &grad_out);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(bi + 1));
      }
      ParameterSet<float> grads = model_backward(cfg.model, state.params, tape, grad_out);
      if (cfg.grad_clip > 0.0) clip_grad_norm(grads, cfg.grad_clip);
      adagrad_step(state.params, grads, state.optimizer, cfg.learning_rate);
      update_running_stats(cfg.model, state.params, tape);
      train_sum += loss * static_cast<double>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_sum / static_cast<double>(train_set.samples.size());
    rec.val_loss = mean_loss(cfg.model, state.params, val_set, cfg.batch_size, kappa);
    if (!std::isfinite(rec.train_loss)) {
      throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch));
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double monitored = cfg.monitor == Monitor::validation ? rec.val_loss : rec.train_loss;
    const bool improved = std::isinf(state.best_loss)
                              ? std::isfinite(monitored)
                              : monitored < state.best_loss - cfg.min_delta * std::abs(state.best_loss);
    state.epoch = epoch;
    state.history.push_back(rec);
    if (improved) {
      state.best_loss = monitored;
      state.best_epoch = epoch;
      state.wait = 0;
    } else {
      ++state.wait;
    }
    if (improved) best = state;
    persist(improved);

    if (state.wait >= cfg.early_stop_patience) {
      stop = true;
      result.early_stopped = true;
    }
    if (on_epoch && !on_epoch(rec)) stop = true;
  }

  result.history = state.history;
  result.last = std::move(state);
  result.best = best.params.size() ? std::move(best) : result.last;
  return result;
}

template double loss_mse<float>(const Tensor<float>&, const Tensor<float>&, double, Tensor<float>*);
template double loss_mse<double>(const Tensor<double>&, const Tensor<double>&, double, Tensor<double>*);
template LossParts loss_parts<float>(const Tensor<float>&, const Tensor<float>&);
template LossParts loss_parts<double>(const Tensor<double>&, const Tensor<double>&);
template void adagrad_step<float>(ParameterSet<float>&, const ParameterSet<float>&, AdagradState<float>&, double);
template void adagrad_step<double>(ParameterSet<double>&, const ParameterSet<double>&, AdagradState<double>&,
                                   double);
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);

}  // namespace attnvo

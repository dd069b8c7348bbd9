#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "attnvo/dataset.hpp"
#include "attnvo/image.hpp"
#include "attnvo/nn.hpp"
#include "attnvo/segments.hpp"
#include "attnvo/tensor.hpp"

namespace attnvo {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr double kDefaultRotationWeight = 100.0;

struct LossParts {
  double rotation = 0.0;     // mean over batch of summed |phi_hat - phi|^2
  double translation = 0.0;  // mean over batch of summed |t_hat - t|^2
  double total(double kappa) const { return kappa * rotation + translation; }
};

/// Pose regression loss over [B, T, 6] tensors (angles first): per segment
/// the sum over timesteps of kappa*|dphi|^2 + |dt|^2, averaged over B.
/// Writes dLoss/dpred into `grad` when given.
template <typename T>
double loss_mse(const Tensor<T>& pred, const Tensor<T>& gt, double kappa, Tensor<T>* grad = nullptr);

template <typename T>
LossParts loss_parts(const Tensor<T>& pred, const Tensor<T>& gt);

// ---------------------------------------------------------------------------
// Adagrad
// ---------------------------------------------------------------------------

inline constexpr double kAdagradEpsilon = 1e-10;

template <typename T>
struct AdagradState {
  /// Accumulated squared gradients; same names and shapes as the parameters.
  ParameterSet<T> accum;
  double epsilon = kAdagradEpsilon;

  static AdagradState for_params(const ParameterSet<T>& params) {
    return {params.zeros_like(), kAdagradEpsilon};
  }
};

/// accum += g^2; p -= lr * g / (sqrt(accum) + eps). Buffers are skipped.
template <typename T>
void adagrad_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdagradState<T>& state,
                  double lr);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& grads, double max_norm);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class Monitor { validation, training };

struct TrainConfig {
  int batch_size = 15;
  double learning_rate = 0.0005;
  double rotation_weight = kDefaultRotationWeight;
  int max_epochs = 50;
  int early_stop_patience = 15;
  /// Relative improvement required to reset the patience counter.
  double min_delta = 0.0;
  Monitor monitor = Monitor::validation;
  /// Global gradient-norm clip; 0 disables it.
  double grad_clip = 0.0;
  std::uint64_t seed = 1;

  std::filesystem::path data_root;
  std::string train_split = "train";
  std::string val_split = "val";
  /// best.ckpt, last.ckpt and history.csv go here; empty keeps everything
  /// in memory.
  std::filesystem::path output_dir;

  SegmentConfig segments;
  ModelConfig model;
  AugmentConfig augment;
  bool augment_enabled = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
};

struct Checkpoint {
  ModelConfig model;
  ParameterSet<float> params;
  AdagradState<float> optimizer;
  ChannelStats stats;
  /// Completed epochs.
  int epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int wait = 0;
  /// Base seed; every random stream is derived from it and the epoch.
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
  /// Training configuration as key = value text, informational.
  std::vector<std::pair<std::string, std::string>> train_config;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a bad magic, version, truncation or
/// inconsistent shapes; nothing is returned on failure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out);
std::vector<EpochRecord> read_history_csv(std::istream& in);

struct TrainData {
  std::vector<Sequence> train;
  std::vector<Sequence> val;
  ChannelStats stats;
};

/// Loads the train/val splits under cfg.data_root. Channel statistics come
/// from <root>/stats.txt when present, otherwise from the resized training
/// frames.
TrainData load_train_data(const TrainConfig& cfg);

/// Statistics over the training frames after resizing to `size`.
ChannelStats training_stats(const std::vector<Sequence>& train, ImageSize size);

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochRecord> history;
  bool early_stopped = false;
};

/// Called after every epoch; return false to stop.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Runs the optimization. With `resume_last`/`resume_best` set, continues
/// from the stored epoch and reproduces the uninterrupted run's history.
TrainResult train(const TrainConfig& cfg, const TrainData& data,
                  const Checkpoint* resume_last = nullptr, const Checkpoint* resume_best = nullptr,
                  const EpochCallback& on_epoch = {});

/// Mean loss over validation-style segments of `sequences` (eval mode).
double evaluate_loss(const ModelConfig& cfg, const ParameterSet<float>& params,
                     const std::vector<Sequence>& sequences, const ChannelStats& stats,
                     const SegmentConfig& segments, int batch_size, double kappa, std::uint64_t seed);

}  // namespace attnvo

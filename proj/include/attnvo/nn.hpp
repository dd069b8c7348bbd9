#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attnvo/image.hpp"
#include "attnvo/random.hpp"
#include "attnvo/tensor.hpp"

namespace attnvo {

enum class Mode { train, eval };

/// Network dimensions. The defaults are the toy configuration; the
/// large-scale layout (1000-unit LSTMs, 8 heads, 256-unit head) is
/// expressible with the same fields.
struct ModelConfig {
  ImageSize image_size{32, 64};
  std::vector<int> conv_channels{8, 16, 32, 32};
  std::vector<int> conv_strides{2, 2, 2, 2};
  int lstm_hidden = 32;
  int lstm_layers = 2;
  int attn_layers = 3;
  int attn_heads = 8;
  int fc_intermediate = 64;
  double dropout_p = 0.2;
  double leaky_slope = 0.1;

  /// Throws ConfigError naming the offending field or stage.
  void validate() const;

  /// Spatial size after each conv stage.
  std::vector<ImageSize> stage_sizes() const;
  /// Flattened encoder output width.
  int feature_size() const;
  int sequence_width() const { return 2 * lstm_hidden; }

  static ModelConfig toy() { return {}; }
  /// Small enough for exhaustive finite-difference checks.
  static ModelConfig tiny();

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  /// Buffers (batch-norm running statistics) are not optimized.
  bool trainable = true;
};

/// Named parameter tensors in a stable order.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> value, bool trainable = true);

  std::size_t size() const noexcept { return entries_.size(); }
  ParamEntry<T>& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry<T>& entry(std::size_t i) const { return entries_[i]; }
  std::vector<ParamEntry<T>>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const noexcept { return entries_; }

  std::optional<std::size_t> find(std::string_view name) const;
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  std::size_t parameter_count() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  bool operator==(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.trainable != b.trainable || !(a.value == b.value)) return false;
    }
    return true;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
/// batch-norm scale, LSTM forget-gate bias 1. Deterministic per seed.
template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Fan-in of a weight tensor (product of all extents but the first).
int fan_in(const std::vector<int>& shape);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---------------------------------------------------------------------------
// Stage caches. Each forward fills its cache when one is supplied; the
// matching backward consumes it.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvStageCache {
  Tensor<T> input;      // [N, Cin, H, W]
  Tensor<T> xhat;       // normalized conv output [N, C, Ho, Wo]
  Tensor<T> bn_out;     // pre-activation [N, C, Ho, Wo]
  Tensor<T> mask;       // dropout mask (empty when inactive)
  std::vector<T> batch_mean, batch_var, inv_std;
};

template <typename T>
struct ConvEncoderCache {
  std::vector<ConvStageCache<T>> stages;
};

template <typename T>
struct LstmDirCache {
  Tensor<T> gates;  // activated i, f, g, o: [B, T, 4h]
  Tensor<T> cell;   // [B, T, h]
  Tensor<T> tanh_cell;
  Tensor<T> hidden;
};

template <typename T>
struct LstmLayerCache {
  Tensor<T> input;  // [B, T, In]
  LstmDirCache<T> dir[2];
  Tensor<T> mask;   // dropout on the [B, T, 2h] output
};

template <typename T>
struct BiLstmCache {
  std::vector<LstmLayerCache<T>> layers;
};

template <typename T>
struct AttentionLayerCache {
  Tensor<T> input;       // [B, T, d]
  Tensor<T> q, k, v;     // [B, T, d]
  Tensor<T> probs;       // softmax weights [B, heads, T, T]
  Tensor<T> probs_mask;  // dropout on the weights
  Tensor<T> context;     // concatenated heads [B, T, d]
  Tensor<T> residual;    // x + projection, pre-activation
  Tensor<T> mask;        // dropout on the layer output
};

template <typename T>
struct AttentionCache {
  std::vector<AttentionLayerCache<T>> layers;
};

template <typename T>
struct HeadCache {
  Tensor<T> input;   // [B, T, d]
  Tensor<T> hidden;  // after dropout, before LeakyReLU [B, T, fc]
  Tensor<T> mask;
  Tensor<T> act;     // after LeakyReLU
};

template <typename T>
struct ModelTape {
  bool recorded = false;
  Mode mode = Mode::eval;
  int batch = 0;
  int steps = 0;
  ConvEncoderCache<T> conv;
  BiLstmCache<T> lstm;
  AttentionCache<T> attn;
  HeadCache<T> head;
};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// [N, 6, H, W] stacked image pairs -> [N, F] features.
template <typename T>
Tensor<T> conv_encoder_forward(const ModelConfig& cfg, const ParameterSet<T>& params,
                               const Tensor<T>& pairs, Mode mode, Rng& rng,
                               ConvEncoderCache<T>* cache = nullptr);

/// [B, T, F] -> [B, T, 2h].
template <typename T>
Tensor<T> bilstm_forward(const ModelConfig& cfg, const ParameterSet<T>& params,
                         const Tensor<T>& features, Mode mode, Rng& rng,
                         BiLstmCache<T>* cache = nullptr);

/// [B, T, d] -> [B, T, d]; identity when cfg.attn_layers == 0.
template <typename T>
Tensor<T> mha_forward(const ModelConfig& cfg, const ParameterSet<T>& params, const Tensor<T>& seq,
                      Mode mode, Rng& rng, AttentionCache<T>* cache = nullptr);

/// [B, T, d] -> [B, T, 6]: rotation angles then translation.
template <typename T>
Tensor<T> head_forward(const ModelConfig& cfg, const ParameterSet<T>& params, const Tensor<T>& vec,
                       Mode mode, Rng& rng, HeadCache<T>* cache = nullptr);

/// [B, L, 3, H, W] -> [B, 6, H, W] pairs flattened to [B*(L-1), 6, H, W].
template <typename T>
Tensor<T> stack_pairs(const Tensor<T>& images);

/// [B, L, 3, H, W] -> [B, L-1, 6].
template <typename T>
Tensor<T> model_forward(const ModelConfig& cfg, const ParameterSet<T>& params,
                        const Tensor<T>& images, Mode mode, Rng& rng,
                        ModelTape<T>* tape = nullptr);

/// Exact gradients of a scalar loss with respect to every parameter, given
/// dLoss/dOutput. Buffers receive zero gradients. Throws StateError when
/// the tape was not recorded.
template <typename T>
ParameterSet<T> model_backward(const ModelConfig& cfg, const ParameterSet<T>& params,
                               const ModelTape<T>& tape, const Tensor<T>& grad_output);

/// Folds the batch statistics of a train-mode pass into the running
/// statistics (momentum 0.1, unbiased variance).
template <typename T>
void update_running_stats(const ModelConfig& cfg, ParameterSet<T>& params, const ModelTape<T>& tape);

/// Packs frames into a [B, L, 3, H, W] tensor; every sample must have L
/// frames of the same size.
template <typename T>
Tensor<T> frames_to_tensor(const std::vector<std::vector<const Frame*>>& samples);

}  // namespace attnvo

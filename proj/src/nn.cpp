#include "attnvo/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>

namespace attnvo {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (image_size.height <= 0 || image_size.width <= 0) {
    throw ConfigError("model: image size must be positive");
  }
  if (conv_channels.empty()) throw ConfigError("model: at least one conv stage is required");
  if (conv_channels.size() != conv_strides.size()) {
    throw ConfigError("model: conv_channels and conv_strides differ in length");
  }
  for (std::size_t s = 0; s < conv_channels.size(); ++s) {
    if (conv_channels[s] <= 0) {
      throw ConfigError("model: conv stage " + std::to_string(s) + " has no channels");
    }
    if (conv_strides[s] <= 0) {
      throw ConfigError("model: conv stage " + std::to_string(s) + " has a non-positive stride");
    }
  }
  if (lstm_hidden <= 0 || lstm_layers <= 0) {
    throw ConfigError("model: lstm_hidden and lstm_layers must be positive");
  }
  if (attn_layers < 0) throw ConfigError("model: attn_layers must be >= 0");
  if (attn_layers > 0 && (attn_heads <= 0 || sequence_width() % attn_heads != 0)) {
    throw ConfigError("model: sequence width " + std::to_string(sequence_width()) +
                      " is not divisible by " + std::to_string(attn_heads) + " attention heads");
  }
  if (fc_intermediate <= 0) throw ConfigError("model: fc_intermediate must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model: dropout_p must be in [0, 1)");
  if (!std::isfinite(leaky_slope)) throw ConfigError("model: leaky_slope must be finite");
}

std::vector<ImageSize> ModelConfig::stage_sizes() const {
  std::vector<ImageSize> out;
  ImageSize s = image_size;
  for (int stride : conv_strides) {
    s = {(s.height - 1) / stride + 1, (s.width - 1) / stride + 1};
    out.push_back(s);
  }
  return out;
}

int ModelConfig::feature_size() const {
  const ImageSize last = stage_sizes().back();
  return conv_channels.back() * last.height * last.width;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.image_size = {8, 16};
  cfg.conv_channels = {4, 6};
  cfg.conv_strides = {2, 2};
  cfg.lstm_hidden = 8;
  cfg.lstm_layers = 2;
  cfg.attn_layers = 1;
  cfg.attn_heads = 2;
  cfg.fc_intermediate = 12;
  return cfg;
}

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

template <typename T>
void ParameterSet<T>::add(std::string name, Tensor<T> value, bool trainable) {
  if (index_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

template <typename T>
std::optional<std::size_t> ParameterSet<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(std::string_view name) {
  auto i = find(name);
  if (!i) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return entries_[*i].value;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return entries_[*i].value;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor<T>(e.value.shape()), e.trainable);
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.trainable ? e.value.size() : 0;
  return n;
}

int fan_in(const std::vector<int>& shape) {
  int n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

namespace {

std::string conv_name(std::size_t s, const char* what) {
  return "conv" + std::to_string(s) + "." + what;
}
std::string lstm_name(int layer, int dir, const char* what) {
  return "lstm" + std::to_string(layer) + (dir == 0 ? ".fwd." : ".bwd.") + what;
}
std::string attn_name(int layer, const char* what) {
  return "attn" + std::to_string(layer) + "." + what;
}

}  // namespace

template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterSet<T> p;
  int cin = 6;
  for (std::size_t s = 0; s < cfg.conv_channels.size(); ++s) {
    const int c = cfg.conv_channels[s];
    p.add(conv_name(s, "weight"), Tensor<T>({c, cin, 3, 3}));
    p.add(conv_name(s, "bias"), Tensor<T>({c}));
    p.add(conv_name(s, "bn_scale"), Tensor<T>({c}, T(1)));
    p.add(conv_name(s, "bn_shift"), Tensor<T>({c}));
    p.add(conv_name(s, "bn_running_mean"), Tensor<T>({c}), false);
    p.add(conv_name(s, "bn_running_var"), Tensor<T>({c}, T(1)), false);
    cin = c;
  }
  const int h = cfg.lstm_hidden;
  int in = cfg.feature_size();
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    for (int d = 0; d < 2; ++d) {
      p.add(lstm_name(l, d, "w_ih"), Tensor<T>({4 * h, in}));
      p.add(lstm_name(l, d, "w_hh"), Tensor<T>({4 * h, h}));
      Tensor<T> bias({4 * h});
      for (int j = h; j < 2 * h; ++j) bias[static_cast<std::size_t>(j)] = T(1);  // forget gate
      p.add(lstm_name(l, d, "bias"), std::move(bias));
    }
    in = 2 * h;
  }
  const int dm = cfg.sequence_width();
  for (int a = 0; a < cfg.attn_layers; ++a) {
    for (const char* w : {"w_q", "w_k", "w_v", "w_o"}) p.add(attn_name(a, w), Tensor<T>({dm, dm}));
    for (const char* b : {"b_q", "b_k", "b_v", "b_o"}) p.add(attn_name(a, b), Tensor<T>({dm}));
  }
  p.add("head.fc1.weight", Tensor<T>({cfg.fc_intermediate, dm}));
  p.add("head.fc1.bias", Tensor<T>({cfg.fc_intermediate}));
  p.add("head.fc2.weight", Tensor<T>({6, cfg.fc_intermediate}));
  p.add("head.fc2.bias", Tensor<T>({6}));

  Rng rng(derive_seed(seed, {0x1417}));
  for (auto& e : p.entries()) {
    const bool is_weight = e.name.ends_with("weight") || e.name.find(".w_") != std::string::npos;
    if (!is_weight) continue;
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in(e.value.shape())));
    for (auto& v : e.value.values()) v = static_cast<T>(uniform(rng, -limit, limit));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using CRowVecMap = Eigen::Map<const RowVec<T>>;
template <typename T>
using RowVecMap = Eigen::Map<RowVec<T>>;

template <typename T>
CMatMap<T> cmat(const Tensor<T>& t) {
  return CMatMap<T>(t.data(), t.dim(0), static_cast<Eigen::Index>(t.size() / t.dim(0)));
}
template <typename T>
MatMap<T> mmat(Tensor<T>& t) {
  return MatMap<T>(t.data(), t.dim(0), static_cast<Eigen::Index>(t.size() / t.dim(0)));
}
template <typename T>
CRowVecMap<T> cvec(const Tensor<T>& t) {
  return CRowVecMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}
template <typename T>
RowVecMap<T> mvec(Tensor<T>& t) {
  return RowVecMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}

/// Rows [b*rows, (b+1)*rows) of a [B, rows, cols] tensor as a matrix.
template <typename T>
CMatMap<T> slab(const Tensor<T>& t, int b, int rows, int cols) {
  return CMatMap<T>(t.data() + static_cast<std::size_t>(b) * rows * cols, rows, cols);
}
template <typename T>
MatMap<T> slab(Tensor<T>& t, int b, int rows, int cols) {
  return MatMap<T>(t.data() + static_cast<std::size_t>(b) * rows * cols, rows, cols);
}

template <typename T>
T leaky(T x, T slope) {
  return x > T(0) ? x : slope * x;
}
template <typename T>
T leaky_grad(T x, T slope) {
  return x > T(0) ? T(1) : slope;
}
template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

/// Inverted-dropout mask; empty when dropout is inactive.
template <typename T>
Tensor<T> make_mask(const std::vector<int>& shape, double p, Mode mode, Rng& rng) {
  if (mode != Mode::train || p <= 0.0) return {};
  Tensor<T> m(shape);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : m.values()) v = uniform01(rng) >= p ? scale : T(0);
  return m;
}

template <typename T>
void apply_mask(Tensor<T>& x, const Tensor<T>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

template <typename T>
void check_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) +
                      " input, got shape " + shape_string(t.shape()));
  }
}

// im2col for a 3x3 kernel, zero padding 1: cols is [cin*9, ho*wo].
template <typename T>
void im2col(const T* x, int cin, int h, int w, int stride, int ho, int wo, T* cols) {
  const int hw = ho * wo;
  for (int ci = 0; ci < cin; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * hw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          T* row = dst + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            row[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int cin, int h, int w, int stride, int ho, int wo, T* dx) {
  const int hw = ho * wo;
  for (int ci = 0; ci < cin; ++ci) {
    T* dc = dx + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * hw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          T* row = dc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) row[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Conv stage: conv3x3 -> batch norm -> LeakyReLU -> dropout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_stage_forward(const ModelConfig& cfg, const ParameterSet<T>& p, std::size_t s,
                             const Tensor<T>& x, Mode mode, Rng& rng, ConvStageCache<T>* cache) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int expected_cin = s == 0 ? 6 : cfg.conv_channels[s - 1];
  const ImageSize expected_in = s == 0 ? cfg.image_size : cfg.stage_sizes()[s - 1];
  if (cin != expected_cin || h != expected_in.height || w != expected_in.width) {
    throw ConfigError("conv stage " + std::to_string(s) + ": input shape " +
                      shape_string(x.shape()) + " does not match the configuration");
  }
  const int cout = cfg.conv_channels[s];
  const int stride = cfg.conv_strides[s];
  const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1, hw = ho * wo;
  const T slope = static_cast<T>(cfg.leaky_slope);

  const Tensor<T>& weight = p.at(conv_name(s, "weight"));
  const Tensor<T>& bias = p.at(conv_name(s, "bias"));
  const CMatMap<T> wm(weight.data(), cout, cin * 9);

  Tensor<T> y({n, cout, ho, wo});
  RowMat<T> cols(cin * 9, hw);
  for (int i = 0; i < n; ++i) {
    im2col(x.data() + static_cast<std::size_t>(i) * cin * h * w, cin, h, w, stride, ho, wo,
           cols.data());
    MatMap<T> yi(y.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
    yi.noalias() = wm * cols;
    for (int c = 0; c < cout; ++c) yi.row(c).array() += bias[static_cast<std::size_t>(c)];
  }

  // Batch normalization over (N, H, W) per channel.
  std::vector<T> mean(cout), var(cout), inv_std(cout);
  const std::size_t m = static_cast<std::size_t>(n) * hw;
  if (mode == Mode::train) {
    for (int c = 0; c < cout; ++c) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* yc = y.data() + (static_cast<std::size_t>(i) * cout + c) * hw;
        for (int k = 0; k < hw; ++k) sum += yc[k];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* yc = y.data() + (static_cast<std::size_t>(i) * cout + c) * hw;
        for (int k = 0; k < hw; ++k) sq += (yc[k] - mu) * (yc[k] - mu);
      }
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(sq / static_cast<double>(m));
    }
  } else {
    const Tensor<T>& rm = p.at(conv_name(s, "bn_running_mean"));
    const Tensor<T>& rv = p.at(conv_name(s, "bn_running_var"));
    for (int c = 0; c < cout; ++c) {
      mean[c] = rm[static_cast<std::size_t>(c)];
      var[c] = rv[static_cast<std::size_t>(c)];
    }
  }
  for (int c = 0; c < cout; ++c) {
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + kBatchNormEps));
  }

  const Tensor<T>& gamma = p.at(conv_name(s, "bn_scale"));
  const Tensor<T>& beta = p.at(conv_name(s, "bn_shift"));
  Tensor<T> xhat({n, cout, ho, wo});
  Tensor<T> z({n, cout, ho, wo});
  Tensor<T> out({n, cout, ho, wo});
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < cout; ++c) {
      const std::size_t off = (static_cast<std::size_t>(i) * cout + c) * hw;
      const T g = gamma[static_cast<std::size_t>(c)], b = beta[static_cast<std::size_t>(c)];
      for (int k = 0; k < hw; ++k) {
        const T xh = (y[off + k] - mean[c]) * inv_std[c];
        xhat[off + k] = xh;
        z[off + k] = g * xh + b;
        out[off + k] = leaky(z[off + k], slope);
      }
    }
  }
  Tensor<T> mask = make_mask<T>(out.shape(), cfg.dropout_p, mode, rng);
  apply_mask(out, mask);

  if (cache) {
    cache->input = x;
    cache->xhat = std::move(xhat);
    cache->bn_out = std::move(z);
    cache->mask = std::move(mask);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// Returns dL/dinput when `need_input_grad`, else an empty tensor.
template <typename T>
Tensor<T> conv_stage_backward(const ModelConfig& cfg, const ParameterSet<T>& p, std::size_t s,
                              const ConvStageCache<T>& cache, Mode mode, Tensor<T> grad,
                              ParameterSet<T>& grads, bool need_input_grad) {
  const Tensor<T>& x = cache.input;
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = cfg.conv_channels[s];
  const int stride = cfg.conv_strides[s];
  const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1, hw = ho * wo;
  const T slope = static_cast<T>(cfg.leaky_slope);
  const std::size_t m = static_cast<std::size_t>(n) * hw;

  apply_mask(grad, cache.mask);
  for (std::size_t k = 0; k < grad.size(); ++k) grad[k] *= leaky_grad(cache.bn_out[k], slope);

  const Tensor<T>& gamma = p.at(conv_name(s, "bn_scale"));
  Tensor<T>& dgamma = grads.at(conv_name(s, "bn_scale"));
  Tensor<T>& dbeta = grads.at(conv_name(s, "bn_shift"));

  // grad now holds dL/dz; turn it into dL/dy (pre-normalization).
  for (int c = 0; c < cout; ++c) {
    double sum_dz = 0.0, sum_dz_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * cout + c) * hw;
      for (int k = 0; k < hw; ++k) {
        sum_dz += grad[off + k];
        sum_dz_xhat += static_cast<double>(grad[off + k]) * cache.xhat[off + k];
      }
    }
    dgamma[static_cast<std::size_t>(c)] += static_cast<T>(sum_dz_xhat);
    dbeta[static_cast<std::size_t>(c)] += static_cast<T>(sum_dz);
    const double g = gamma[static_cast<std::size_t>(c)];
    const double istd = cache.inv_std[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * cout + c) * hw;
      for (int k = 0; k < hw; ++k) {
        const double dxhat = g * grad[off + k];
        double dy;
        if (mode == Mode::train) {
          // dxhat sums are g * the dz sums.
          dy = istd / static_cast<double>(m) *
               (static_cast<double>(m) * dxhat - g * sum_dz - cache.xhat[off + k] * g * sum_dz_xhat);
        } else {
          dy = dxhat * istd;
        }
        grad[off + k] = static_cast<T>(dy);
      }
    }
  }

  const Tensor<T>& weight = p.at(conv_name(s, "weight"));
  const CMatMap<T> wm(weight.data(), cout, cin * 9);
  Tensor<T>& dweight = grads.at(conv_name(s, "weight"));
  MatMap<T> dwm(dweight.data(), cout, cin * 9);
  Tensor<T>& dbias = grads.at(conv_name(s, "bias"));

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.shape());
  RowMat<T> cols(cin * 9, hw);
  RowMat<T> dcols(cin * 9, hw);
  for (int i = 0; i < n; ++i) {
    im2col(x.data() + static_cast<std::size_t>(i) * cin * h * w, cin, h, w, stride, ho, wo,
           cols.data());
    const CMatMap<T> dyi(grad.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
    dwm.noalias() += dyi * cols.transpose();
    for (int c = 0; c < cout; ++c) dbias[static_cast<std::size_t>(c)] += dyi.row(c).sum();
    if (need_input_grad) {
      dcols.noalias() = wm.transpose() * dyi;
      col2im_add(dcols.data(), cin, h, w, stride, ho, wo,
                 dx.data() + static_cast<std::size_t>(i) * cin * h * w);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM layer
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> lstm_layer_forward(const ModelConfig& cfg, const ParameterSet<T>& p, int layer,
                             const Tensor<T>& x, Mode mode, Rng& rng, LstmLayerCache<T>* cache) {
  const int b_n = x.dim(0), steps = x.dim(1), in = x.dim(2);
  const int h = cfg.lstm_hidden;
  const int expected_in = layer == 0 ? cfg.feature_size() : 2 * h;
  if (in != expected_in) {
    throw ConfigError("lstm layer " + std::to_string(layer) + ": input width " +
                      std::to_string(in) + " but configuration expects " +
                      std::to_string(expected_in));
  }
  Tensor<T> out({b_n, steps, 2 * h});
  LstmDirCache<T> dirs[2];

  for (int d = 0; d < 2; ++d) {
    const Tensor<T>& w_ih = p.at(lstm_name(layer, d, "w_ih"));
    const Tensor<T>& w_hh = p.at(lstm_name(layer, d, "w_hh"));
    const Tensor<T>& bias = p.at(lstm_name(layer, d, "bias"));
    const auto wih = cmat(w_ih);
    const auto whh = cmat(w_hh);
    const auto bv = cvec(bias);

    auto& dc = dirs[d];
    dc.gates = Tensor<T>({b_n, steps, 4 * h});
    dc.cell = Tensor<T>({b_n, steps, h});
    dc.tanh_cell = Tensor<T>({b_n, steps, h});
    dc.hidden = Tensor<T>({b_n, steps, h});

    RowMat<T> gx(steps, 4 * h);
    RowVec<T> hprev(h), cprev(h), g(4 * h);
    for (int b = 0; b < b_n; ++b) {
      gx.noalias() = slab(x, b, steps, in) * wih.transpose();
      gx.rowwise() += bv;
      hprev.setZero();
      cprev.setZero();
      auto gates = slab(dc.gates, b, steps, 4 * h);
      auto cell = slab(dc.cell, b, steps, h);
      auto tcell = slab(dc.tanh_cell, b, steps, h);
      auto hid = slab(dc.hidden, b, steps, h);
      for (int k = 0; k < steps; ++k) {
        const int t = d == 0 ? k : steps - 1 - k;
        g.noalias() = gx.row(t) + hprev * whh.transpose();
        for (int j = 0; j < h; ++j) {
          const T ig = sigmoid(g[j]);
          const T fg = sigmoid(g[h + j]);
          const T gg = std::tanh(g[2 * h + j]);
          const T og = sigmoid(g[3 * h + j]);
          const T c = fg * cprev[j] + ig * gg;
          const T tc = std::tanh(c);
          gates(t, j) = ig;
          gates(t, h + j) = fg;
          gates(t, 2 * h + j) = gg;
          gates(t, 3 * h + j) = og;
          cell(t, j) = c;
          tcell(t, j) = tc;
          hid(t, j) = og * tc;
          cprev[j] = c;
          hprev[j] = og * tc;
        }
      }
      auto ob = slab(out, b, steps, 2 * h);
      ob.middleCols(d * h, h) = hid;
    }
  }
  Tensor<T> mask = make_mask<T>(out.shape(), cfg.dropout_p, mode, rng);
  apply_mask(out, mask);
  if (cache) {
    cache->input = x;
    cache->dir[0] = std::move(dirs[0]);
    cache->dir[1] = std::move(dirs[1]);
    cache->mask = std::move(mask);
  }
  return out;
}

template <typename T>
Tensor<T> lstm_layer_backward(const ModelConfig& cfg, const ParameterSet<T>& p, int layer,
                              const LstmLayerCache<T>& cache, Tensor<T> grad,
                              ParameterSet<T>& grads) {
  const Tensor<T>& x = cache.input;
  const int b_n = x.dim(0), steps = x.dim(1), in = x.dim(2);
  const int h = cfg.lstm_hidden;
  apply_mask(grad, cache.mask);

  Tensor<T> dx(x.shape());
  for (int d = 0; d < 2; ++d) {
    const auto wih = cmat(p.at(lstm_name(layer, d, "w_ih")));
    const auto whh = cmat(p.at(lstm_name(layer, d, "w_hh")));
    auto dwih = mmat(grads.at(lstm_name(layer, d, "w_ih")));
    auto dwhh = mmat(grads.at(lstm_name(layer, d, "w_hh")));
    auto db = mvec(grads.at(lstm_name(layer, d, "bias")));
    const auto& dc = cache.dir[d];

    RowMat<T> dg(steps, 4 * h);
    RowMat<T> hprev_all(steps, h);
    RowVec<T> dh_next(h), dc_next(h), dh(h);
    for (int b = 0; b < b_n; ++b) {
      const auto gates = slab(dc.gates, b, steps, 4 * h);
      const auto cell = slab(dc.cell, b, steps, h);
      const auto tcell = slab(dc.tanh_cell, b, steps, h);
      const auto hid = slab(dc.hidden, b, steps, h);
      const auto gout = slab(static_cast<const Tensor<T>&>(grad), b, steps, 2 * h);
      dh_next.setZero();
      dc_next.setZero();
      for (int k = steps - 1; k >= 0; --k) {
        const int t = d == 0 ? k : steps - 1 - k;
        const int tp = d == 0 ? t - 1 : t + 1;
        const bool first = k == 0;
        dh = gout.row(t).segment(d * h, h) + dh_next;
        for (int j = 0; j < h; ++j) {
          const T ig = gates(t, j), fg = gates(t, h + j), gg = gates(t, 2 * h + j),
                  og = gates(t, 3 * h + j);
          const T tc = tcell(t, j);
          const T c_prev = first ? T(0) : cell(tp, j);
          const T d_o = dh[j] * tc;
          const T d_c = dh[j] * og * (T(1) - tc * tc) + dc_next[j];
          dg(t, j) = d_c * gg * ig * (T(1) - ig);
          dg(t, h + j) = d_c * c_prev * fg * (T(1) - fg);
          dg(t, 2 * h + j) = d_c * ig * (T(1) - gg * gg);
          dg(t, 3 * h + j) = d_o * og * (T(1) - og);
          dc_next[j] = d_c * fg;
        }
        if (first) {
          hprev_all.row(t).setZero();
        } else {
          hprev_all.row(t) = hid.row(tp);
        }
        dh_next.noalias() = dg.row(t) * whh;
      }
      const auto xb = slab(x, b, steps, in);
      dwhh.noalias() += dg.transpose() * hprev_all;
      dwih.noalias() += dg.transpose() * xb;
      db += dg.colwise().sum();
      slab(dx, b, steps, in).noalias() += dg * wih;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention layer with residual + LeakyReLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> attention_layer_forward(const ModelConfig& cfg, const ParameterSet<T>& p, int layer,
                                  const Tensor<T>& x, Mode mode, Rng& rng,
                                  AttentionLayerCache<T>* cache) {
  const int b_n = x.dim(0), steps = x.dim(1), dm = x.dim(2);
  if (dm % cfg.attn_heads != 0) {
    throw ConfigError("attention: width " + std::to_string(dm) + " not divisible by " +
                      std::to_string(cfg.attn_heads) + " heads");
  }
  if (dm != cfg.sequence_width()) {
    throw ConfigError("attention: input width " + std::to_string(dm) + " but configuration expects " +
                      std::to_string(cfg.sequence_width()));
  }
  const int heads = cfg.attn_heads, dk = dm / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  const T slope = static_cast<T>(cfg.leaky_slope);

  const auto wq = cmat(p.at(attn_name(layer, "w_q")));
  const auto wk = cmat(p.at(attn_name(layer, "w_k")));
  const auto wv = cmat(p.at(attn_name(layer, "w_v")));
  const auto wo = cmat(p.at(attn_name(layer, "w_o")));
  const auto bq = cvec(p.at(attn_name(layer, "b_q")));
  const auto bk = cvec(p.at(attn_name(layer, "b_k")));
  const auto bv = cvec(p.at(attn_name(layer, "b_v")));
  const auto bo = cvec(p.at(attn_name(layer, "b_o")));

  Tensor<T> q({b_n, steps, dm}), k({b_n, steps, dm}), v({b_n, steps, dm});
  Tensor<T> probs({b_n, heads, steps, steps});
  Tensor<T> probs_mask = make_mask<T>(probs.shape(), cfg.dropout_p, mode, rng);
  Tensor<T> context({b_n, steps, dm});
  Tensor<T> residual({b_n, steps, dm});
  Tensor<T> out({b_n, steps, dm});

  RowMat<T> scores(steps, steps);
  for (int b = 0; b < b_n; ++b) {
    const auto xb = slab(x, b, steps, dm);
    auto qb = slab(q, b, steps, dm);
    auto kb = slab(k, b, steps, dm);
    auto vb = slab(v, b, steps, dm);
    qb.noalias() = xb * wq.transpose();
    qb.rowwise() += bq;
    kb.noalias() = xb * wk.transpose();
    kb.rowwise() += bk;
    vb.noalias() = xb * wv.transpose();
    vb.rowwise() += bv;
    auto cb = slab(context, b, steps, dm);
    for (int hd = 0; hd < heads; ++hd) {
      scores.noalias() = qb.middleCols(hd * dk, dk) * kb.middleCols(hd * dk, dk).transpose();
      scores *= scale;
      MatMap<T> pb(probs.data() + (static_cast<std::size_t>(b) * heads + hd) * steps * steps, steps,
                   steps);
      for (int i = 0; i < steps; ++i) {
        const T mx = scores.row(i).maxCoeff();
        T sum = 0;
        for (int j = 0; j < steps; ++j) {
          const T e = std::exp(scores(i, j) - mx);
          pb(i, j) = e;
          sum += e;
        }
        pb.row(i) /= sum;
      }
      if (probs_mask.empty()) {
        cb.middleCols(hd * dk, dk).noalias() = pb * vb.middleCols(hd * dk, dk);
      } else {
        const CMatMap<T> mb(
            probs_mask.data() + (static_cast<std::size_t>(b) * heads + hd) * steps * steps, steps,
            steps);
        const RowMat<T> dropped = pb.cwiseProduct(mb);
        cb.middleCols(hd * dk, dk).noalias() = dropped * vb.middleCols(hd * dk, dk);
      }
    }
    auto rb = slab(residual, b, steps, dm);
    rb.noalias() = cb * wo.transpose();
    rb.rowwise() += bo;
    rb += xb;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = leaky(residual[i], slope);
  Tensor<T> mask = make_mask<T>(out.shape(), cfg.dropout_p, mode, rng);
  apply_mask(out, mask);

  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->probs_mask = std::move(probs_mask);
    cache->context = std::move(context);
    cache->residual = std::move(residual);
    cache->mask = std::move(mask);
  }
  return out;
}

template <typename T>
Tensor<T> attention_layer_backward(const ModelConfig& cfg, const ParameterSet<T>& p, int layer,
                                   const AttentionLayerCache<T>& c, Tensor<T> grad,
                                   ParameterSet<T>& grads) {
  const Tensor<T>& x = c.input;
  const int b_n = x.dim(0), steps = x.dim(1), dm = x.dim(2);
  const int heads = cfg.attn_heads, dk = dm / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  const T slope = static_cast<T>(cfg.leaky_slope);

  apply_mask(grad, c.mask);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= leaky_grad(c.residual[i], slope);
  // grad = dL/dresidual; the residual path passes it straight to the input.
  Tensor<T> dx = grad;

  const auto wq = cmat(p.at(attn_name(layer, "w_q")));
  const auto wk = cmat(p.at(attn_name(layer, "w_k")));
  const auto wv = cmat(p.at(attn_name(layer, "w_v")));
  const auto wo = cmat(p.at(attn_name(layer, "w_o")));
  auto dwq = mmat(grads.at(attn_name(layer, "w_q")));
  auto dwk = mmat(grads.at(attn_name(layer, "w_k")));
  auto dwv = mmat(grads.at(attn_name(layer, "w_v")));
  auto dwo = mmat(grads.at(attn_name(layer, "w_o")));
  auto dbq = mvec(grads.at(attn_name(layer, "b_q")));
  auto dbk = mvec(grads.at(attn_name(layer, "b_k")));
  auto dbv = mvec(grads.at(attn_name(layer, "b_v")));
  auto dbo = mvec(grads.at(attn_name(layer, "b_o")));

  RowMat<T> dctx(steps, dm), dq(steps, dm), dk_m(steps, dm), dv(steps, dm);
  RowMat<T> dprobs(steps, steps), pdrop(steps, steps);
  for (int b = 0; b < b_n; ++b) {
    const auto dr = slab(static_cast<const Tensor<T>&>(grad), b, steps, dm);
    const auto cb = slab(c.context, b, steps, dm);
    const auto qb = slab(c.q, b, steps, dm);
    const auto kb = slab(c.k, b, steps, dm);
    const auto vb = slab(c.v, b, steps, dm);
    const auto xb = slab(x, b, steps, dm);

    dwo.noalias() += dr.transpose() * cb;
    dbo += dr.colwise().sum();
    dctx.noalias() = dr * wo;

    for (int hd = 0; hd < heads; ++hd) {
      const std::size_t off = (static_cast<std::size_t>(b) * heads + hd) * steps * steps;
      const CMatMap<T> pb(c.probs.data() + off, steps, steps);
      const auto dch = dctx.middleCols(hd * dk, dk);
      if (c.probs_mask.empty()) {
        pdrop = pb;
      } else {
        pdrop = pb.cwiseProduct(CMatMap<T>(c.probs_mask.data() + off, steps, steps));
      }
      dv.middleCols(hd * dk, dk).noalias() = pdrop.transpose() * dch;
      dprobs.noalias() = dch * vb.middleCols(hd * dk, dk).transpose();
      if (!c.probs_mask.empty()) {
        dprobs = dprobs.cwiseProduct(CMatMap<T>(c.probs_mask.data() + off, steps, steps));
      }
      // Softmax Jacobian, row by row; the result becomes dL/dscores.
      for (int i = 0; i < steps; ++i) {
        const T dot = dprobs.row(i).dot(pb.row(i));
        for (int j = 0; j < steps; ++j) dprobs(i, j) = pb(i, j) * (dprobs(i, j) - dot) * scale;
      }
      dq.middleCols(hd * dk, dk).noalias() = dprobs * kb.middleCols(hd * dk, dk);
      dk_m.middleCols(hd * dk, dk).noalias() = dprobs.transpose() * qb.middleCols(hd * dk, dk);
    }
    dwq.noalias() += dq.transpose() * xb;
    dwk.noalias() += dk_m.transpose() * xb;
    dwv.noalias() += dv.transpose() * xb;
    dbq += dq.colwise().sum();
    dbk += dk_m.colwise().sum();
    dbv += dv.colwise().sum();
    auto dxb = slab(dx, b, steps, dm);
    dxb.noalias() += dq * wq;
    dxb.noalias() += dk_m * wk;
    dxb.noalias() += dv * wv;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected head
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> head_backward(const ModelConfig& cfg, const ParameterSet<T>& p, const HeadCache<T>& c,
                        const Tensor<T>& grad, ParameterSet<T>& grads) {
  const int b_n = c.input.dim(0), steps = c.input.dim(1), dm = c.input.dim(2);
  const int fc = cfg.fc_intermediate;
  const T slope = static_cast<T>(cfg.leaky_slope);
  const auto w1 = cmat(p.at("head.fc1.weight"));
  const auto w2 = cmat(p.at("head.fc2.weight"));
  auto dw1 = mmat(grads.at("head.fc1.weight"));
  auto dw2 = mmat(grads.at("head.fc2.weight"));
  auto db1 = mvec(grads.at("head.fc1.bias"));
  auto db2 = mvec(grads.at("head.fc2.bias"));

  Tensor<T> dx(c.input.shape());
  RowMat<T> dact(steps, fc);
  for (int b = 0; b < b_n; ++b) {
    const auto gy = slab(grad, b, steps, 6);
    const auto act = slab(c.act, b, steps, fc);
    const auto hid = slab(c.hidden, b, steps, fc);
    dw2.noalias() += gy.transpose() * act;
    db2 += gy.colwise().sum();
    dact.noalias() = gy * w2;
    for (int t = 0; t < steps; ++t) {
      for (int j = 0; j < fc; ++j) {
        T v = dact(t, j) * leaky_grad(hid(t, j), slope);
        if (!c.mask.empty()) v *= c.mask[(static_cast<std::size_t>(b) * steps + t) * fc + j];
        dact(t, j) = v;
      }
    }
    dw1.noalias() += dact.transpose() * slab(c.input, b, steps, dm);
    db1 += dact.colwise().sum();
    slab(dx, b, steps, dm).noalias() = dact * w1;
  }
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public stage forwards
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_encoder_forward(const ModelConfig& cfg, const ParameterSet<T>& params,
                               const Tensor<T>& pairs, Mode mode, Rng& rng,
                               ConvEncoderCache<T>* cache) {
  cfg.validate();
  check_rank(pairs, 4, "conv encoder");
  if (cache) cache->stages.assign(cfg.conv_channels.size(), {});
  Tensor<T> x = pairs;
  for (std::size_t s = 0; s < cfg.conv_channels.size(); ++s) {
    x = conv_stage_forward(cfg, params, s, x, mode, rng, cache ? &cache->stages[s] : nullptr);
  }
  const int n = x.dim(0);
  x.reshape({n, static_cast<int>(x.size() / n)});
  return x;
}

template <typename T>
Tensor<T> bilstm_forward(const ModelConfig& cfg, const ParameterSet<T>& params,
                         const Tensor<T>& features, Mode mode, Rng& rng, BiLstmCache<T>* cache) {
  check_rank(features, 3, "bilstm");
  if (cache) cache->layers.assign(static_cast<std::size_t>(cfg.lstm_layers), {});
  Tensor<T> x = features;
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    x = lstm_layer_forward(cfg, params, l, x, mode, rng,
                           cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr);
  }
  return x;
}

template <typename T>
Tensor<T> mha_forward(const ModelConfig& cfg, const ParameterSet<T>& params, const Tensor<T>& seq,
                      Mode mode, Rng& rng, AttentionCache<T>* cache) {
  check_rank(seq, 3, "attention");
  if (cache) cache->layers.assign(static_cast<std::size_t>(cfg.attn_layers), {});
  Tensor<T> x = seq;
  for (int a = 0; a < cfg.attn_layers; ++a) {
    x = attention_layer_forward(cfg, params, a, x, mode, rng,
                                cache ? &cache->layers[static_cast<std::size_t>(a)] : nullptr);
  }
  return x;
}

template <typename T>
Tensor<T> head_forward(const ModelConfig& cfg, const ParameterSet<T>& params, const Tensor<T>& vec,
                       Mode mode, Rng& rng, HeadCache<T>* cache) {
  check_rank(vec, 3, "head");
  const int b_n = vec.dim(0), steps = vec.dim(1), dm = vec.dim(2);
  if (dm != cfg.sequence_width()) {
    throw ConfigError("head: input width " + std::to_string(dm) + " but configuration expects " +
                      std::to_string(cfg.sequence_width()));
  }
  const int fc = cfg.fc_intermediate;
  const T slope = static_cast<T>(cfg.leaky_slope);
  const auto w1 = cmat(params.at("head.fc1.weight"));
  const auto b1 = cvec(params.at("head.fc1.bias"));
  const auto w2 = cmat(params.at("head.fc2.weight"));
  const auto b2 = cvec(params.at("head.fc2.bias"));

  Tensor<T> hidden({b_n, steps, fc});
  for (int b = 0; b < b_n; ++b) {
    auto hb = slab(hidden, b, steps, fc);
    hb.noalias() = slab(vec, b, steps, dm) * w1.transpose();
    hb.rowwise() += b1;
  }
  Tensor<T> mask = make_mask<T>(hidden.shape(), cfg.dropout_p, mode, rng);
  apply_mask(hidden, mask);
  Tensor<T> act(hidden.shape());
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = leaky(hidden[i], slope);

  Tensor<T> out({b_n, steps, 6});
  for (int b = 0; b < b_n; ++b) {
    auto ob = slab(out, b, steps, 6);
    ob.noalias() = slab(act, b, steps, fc) * w2.transpose();
    ob.rowwise() += b2;
  }
  if (cache) {
    cache->input = vec;
    cache->hidden = std::move(hidden);
    cache->mask = std::move(mask);
    cache->act = std::move(act);
  }
  return out;
}

template <typename T>
Tensor<T> stack_pairs(const Tensor<T>& images) {
  check_rank(images, 5, "model");
  const int b_n = images.dim(0), len = images.dim(1);
  if (images.dim(2) != 3) throw ConfigError("model: images must have 3 channels");
  if (len < 2) throw InvalidArgument("model: a segment needs at least 2 frames");
  const int h = images.dim(3), w = images.dim(4);
  const std::size_t plane = static_cast<std::size_t>(3) * h * w;
  Tensor<T> pairs({b_n * (len - 1), 6, h, w});
  for (int b = 0; b < b_n; ++b) {
    for (int t = 0; t + 1 < len; ++t) {
      const T* a = images.data() + (static_cast<std::size_t>(b) * len + t) * plane;
      T* dst = pairs.data() + (static_cast<std::size_t>(b) * (len - 1) + t) * 2 * plane;
      std::copy(a, a + 2 * plane, dst);  // frames t and t+1 are contiguous
    }
  }
  return pairs;
}

template <typename T>
Tensor<T> model_forward(const ModelConfig& cfg, const ParameterSet<T>& params,
                        const Tensor<T>& images, Mode mode, Rng& rng, ModelTape<T>* tape) {
  cfg.validate();
  const Tensor<T> pairs = stack_pairs(images);
  const int b_n = images.dim(0), steps = images.dim(1) - 1;
  if (images.dim(3) != cfg.image_size.height || images.dim(4) != cfg.image_size.width) {
    throw ConfigError("model: image size " + std::to_string(images.dim(3)) + "x" +
                      std::to_string(images.dim(4)) + " does not match the configuration");
  }
  Tensor<T> feat = conv_encoder_forward(cfg, params, pairs, mode, rng, tape ? &tape->conv : nullptr);
  feat.reshape({b_n, steps, feat.dim(1)});
  Tensor<T> seq = bilstm_forward(cfg, params, feat, mode, rng, tape ? &tape->lstm : nullptr);
  seq = mha_forward(cfg, params, seq, mode, rng, tape ? &tape->attn : nullptr);
  Tensor<T> out = head_forward(cfg, params, seq, mode, rng, tape ? &tape->head : nullptr);
  if (tape) {
    tape->recorded = true;
    tape->mode = mode;
    tape->batch = b_n;
    tape->steps = steps;
  }
  return out;
}

template <typename T>
ParameterSet<T> model_backward(const ModelConfig& cfg, const ParameterSet<T>& params,
                               const ModelTape<T>& tape, const Tensor<T>& grad_output) {
  if (!tape.recorded) throw StateError("backward called without a recorded forward pass");
  const std::vector<int> expected{tape.batch, tape.steps, 6};
  if (grad_output.shape() != expected) {
    throw InvalidArgument("backward: gradient shape " + shape_string(grad_output.shape()) +
                          " does not match output " + shape_string(expected));
  }
  ParameterSet<T> grads = params.zeros_like();
  Tensor<T> g = head_backward(cfg, params, tape.head, grad_output, grads);
  for (int a = cfg.attn_layers - 1; a >= 0; --a) {
    g = attention_layer_backward(cfg, params, a, tape.attn.layers[static_cast<std::size_t>(a)],
                                 std::move(g), grads);
  }
  for (int l = cfg.lstm_layers - 1; l >= 0; --l) {
    g = lstm_layer_backward(cfg, params, l, tape.lstm.layers[static_cast<std::size_t>(l)],
                            std::move(g), grads);
  }
  // [B, T, F] -> last conv stage output shape.
  const auto& last = tape.conv.stages.back();
  g.reshape(last.bn_out.shape());
  for (std::size_t s = cfg.conv_channels.size(); s-- > 0;) {
    g = conv_stage_backward(cfg, params, s, tape.conv.stages[s], tape.mode, std::move(g), grads,
                            s > 0);
  }
  return grads;
}

template <typename T>
void update_running_stats(const ModelConfig& cfg, ParameterSet<T>& params, const ModelTape<T>& tape) {
  if (!tape.recorded || tape.mode != Mode::train) {
    throw StateError("running statistics need a recorded train-mode pass");
  }
  for (std::size_t s = 0; s < cfg.conv_channels.size(); ++s) {
    const auto& c = tape.conv.stages[s];
    const double m = static_cast<double>(c.xhat.size() / c.xhat.dim(1));
    const double unbias = m > 1 ? m / (m - 1) : 1.0;
    Tensor<T>& rm = params.at(conv_name(s, "bn_running_mean"));
    Tensor<T>& rv = params.at(conv_name(s, "bn_running_var"));
    for (std::size_t k = 0; k < rm.size(); ++k) {
      rm[k] = static_cast<T>((1.0 - kBatchNormMomentum) * rm[k] + kBatchNormMomentum * c.batch_mean[k]);
      rv[k] = static_cast<T>((1.0 - kBatchNormMomentum) * rv[k] +
                             kBatchNormMomentum * c.batch_var[k] * unbias);
    }
  }
}

template <typename T>
Tensor<T> frames_to_tensor(const std::vector<std::vector<const Frame*>>& samples) {
  if (samples.empty() || samples.front().empty()) throw InvalidArgument("empty batch");
  const int b_n = static_cast<int>(samples.size());
  const int len = static_cast<int>(samples.front().size());
  const int h = samples.front().front()->image.height;
  const int w = samples.front().front()->image.width;
  Tensor<T> out({b_n, len, 3, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < b_n; ++b) {
    if (static_cast<int>(samples[b].size()) != len) {
      throw InvalidArgument("batch samples differ in length");
    }
    for (int t = 0; t < len; ++t) {
      const Image& img = samples[b][t]->image;
      if (img.height != h || img.width != w) throw InvalidArgument("batch images differ in size");
      T* dst = out.data() + (static_cast<std::size_t>(b) * len + t) * 3 * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        for (int c = 0; c < 3; ++c) dst[c * hw + i] = static_cast<T>(img.pixels[i * 3 + c]);
      }
    }
  }
  return out;
}

#define ATTNVO_INSTANTIATE(T)                                                                     \
  template class ParameterSet<T>;                                                                \
  template ParameterSet<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                \
  template Tensor<T> conv_encoder_forward<T>(const ModelConfig&, const ParameterSet<T>&,         \
                                             const Tensor<T>&, Mode, Rng&, ConvEncoderCache<T>*); \
  template Tensor<T> bilstm_forward<T>(const ModelConfig&, const ParameterSet<T>&,               \
                                       const Tensor<T>&, Mode, Rng&, BiLstmCache<T>*);           \
  template Tensor<T> mha_forward<T>(const ModelConfig&, const ParameterSet<T>&, const Tensor<T>&, \
                                    Mode, Rng&, AttentionCache<T>*);                             \
  template Tensor<T> head_forward<T>(const ModelConfig&, const ParameterSet<T>&, const Tensor<T>&, \
                                     Mode, Rng&, HeadCache<T>*);                                 \
  template Tensor<T> stack_pairs<T>(const Tensor<T>&);                                           \
  template Tensor<T> model_forward<T>(const ModelConfig&, const ParameterSet<T>&,                \
                                      const Tensor<T>&, Mode, Rng&, ModelTape<T>*);              \
  template ParameterSet<T> model_backward<T>(const ModelConfig&, const ParameterSet<T>&,         \
                                             const ModelTape<T>&, const Tensor<T>&);             \
  template void update_running_stats<T>(const ModelConfig&, ParameterSet<T>&,                    \
                                        const ModelTape<T>&);                                    \
  template Tensor<T> frames_to_tensor<T>(const std::vector<std::vector<const Frame*>>&);

ATTNVO_INSTANTIATE(float)
ATTNVO_INSTANTIATE(double)

#undef ATTNVO_INSTANTIATE

}  // namespace attnvo

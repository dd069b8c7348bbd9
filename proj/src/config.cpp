#include "attnvo/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "attnvo/dataset.hpp"
#include "attnvo/errors.hpp"

namespace attnvo {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + expected);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value, const char* expected) {
  N out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last || first == last) bad_value(key, value, expected);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "a boolean");
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& value, const char* expected) {
  std::vector<N> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<N>(key, trim(item), expected));
  if (out.empty()) bad_value(key, value, expected);
  return out;
}

template <typename N>
std::string join(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<N>) {
      out += format_real(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Binding {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&, const std::string&)> set;
};

Binding field(std::string key, int& v) {
  return {std::move(key), [&v] { return std::to_string(v); },
          [&v](const std::string& k, const std::string& s) { v = parse_number<int>(k, s, "an integer"); }};
}
Binding field(std::string key, std::size_t& v) {
  return {std::move(key), [&v] { return std::to_string(v); },
          [&v](const std::string& k, const std::string& s) {
            v = parse_number<std::size_t>(k, s, "a non-negative integer");
          }};
}
Binding field(std::string key, std::uint64_t& v, int) {
  return {std::move(key), [&v] { return std::to_string(v); },
          [&v](const std::string& k, const std::string& s) {
            v = parse_number<std::uint64_t>(k, s, "an unsigned 64-bit integer");
          }};
}
Binding field(std::string key, double& v) {
  return {std::move(key), [&v] { return format_real(v); },
          [&v](const std::string& k, const std::string& s) { v = parse_number<double>(k, s, "a number"); }};
}
Binding field(std::string key, bool& v) {
  return {std::move(key), [&v] { return std::string(v ? "true" : "false"); },
          [&v](const std::string& k, const std::string& s) { v = parse_bool(k, s); }};
}
Binding field(std::string key, std::string& v) {
  return {std::move(key), [&v] { return v; }, [&v](const std::string&, const std::string& s) { v = s; }};
}
Binding field(std::string key, std::filesystem::path& v) {
  return {std::move(key), [&v] { return v.string(); },
          [&v](const std::string&, const std::string& s) { v = s; }};
}
Binding field(std::string key, std::vector<int>& v) {
  return {std::move(key), [&v] { return join(v); },
          [&v](const std::string& k, const std::string& s) { v = parse_list<int>(k, s, "an integer list"); }};
}
Binding field(std::string key, std::vector<double>& v) {
  return {std::move(key), [&v] { return join(v); },
          [&v](const std::string& k, const std::string& s) { v = parse_list<double>(k, s, "a number list"); }};
}

void model_bindings(std::vector<Binding>& b, ModelConfig& m) {
  b.push_back(field("model.image_height", m.image_size.height));
  b.push_back(field("model.image_width", m.image_size.width));
  b.push_back(field("model.conv_channels", m.conv_channels));
  b.push_back(field("model.conv_strides", m.conv_strides));
  b.push_back(field("model.lstm_hidden", m.lstm_hidden));
  b.push_back(field("model.lstm_layers", m.lstm_layers));
  b.push_back(field("model.attn_layers", m.attn_layers));
  b.push_back(field("model.attn_heads", m.attn_heads));
  b.push_back(field("model.fc_intermediate", m.fc_intermediate));
  b.push_back(field("model.dropout", m.dropout_p));
  b.push_back(field("model.leaky_slope", m.leaky_slope));
}

std::vector<Binding> bindings(AppConfig& c) {
  std::vector<Binding> b;
  TrainConfig& t = c.train;
  b.push_back(field("train.batch_size", t.batch_size));
  b.push_back(field("train.learning_rate", t.learning_rate));
  b.push_back(field("train.rotation_weight", t.rotation_weight));
  b.push_back(field("train.max_epochs", t.max_epochs));
  b.push_back(field("train.patience", t.early_stop_patience));
  b.push_back(field("train.min_delta", t.min_delta));
  b.push_back({"train.monitor",
               [&t] { return std::string(t.monitor == Monitor::validation ? "validation" : "training"); },
               [&t](const std::string& k, const std::string& s) {
                 if (s == "validation") {
                   t.monitor = Monitor::validation;
                 } else if (s == "training") {
                   t.monitor = Monitor::training;
                 } else {
                   bad_value(k, s, "'validation' or 'training'");
                 }
               }});
  b.push_back(field("train.grad_clip", t.grad_clip));
  b.push_back(field("train.seed", t.seed, 0));
  b.push_back(field("train.data_root", t.data_root));
  b.push_back(field("train.train_split", t.train_split));
  b.push_back(field("train.val_split", t.val_split));
  b.push_back(field("train.output_dir", t.output_dir));
  b.push_back(field("train.augment", t.augment_enabled));

  b.push_back(field("segments.min_len", t.segments.min_len));
  b.push_back(field("segments.max_len", t.segments.max_len));
  b.push_back(field("segments.stride", t.segments.stride));

  model_bindings(b, t.model);

  AugmentConfig& a = t.augment;
  b.push_back(field("augment.brightness", a.brightness_range));
  b.push_back(field("augment.saturation", a.saturation_range));
  b.push_back(field("augment.contrast", a.contrast_range));
  b.push_back(field("augment.cutout_count_max", a.cutout_count_max));
  b.push_back(field("augment.cutout_size_min", a.cutout_size_min));
  b.push_back(field("augment.cutout_size_max", a.cutout_size_max));
  b.push_back(field("augment.probability", a.apply_probability));

  b.push_back(field("window.size", c.window.size));
  b.push_back(field("window.overlap", c.window.overlap));

  SynthDatasetConfig& s = c.synth;
  b.push_back(field("synth.n_trajectories", s.n_trajectories));
  b.push_back(field("synth.n_val", s.n_val));
  b.push_back(field("synth.n_test", s.n_test));
  b.push_back(field("synth.speed_min", s.speed_min));
  b.push_back(field("synth.speed_max", s.speed_max));
  b.push_back(field("synth.yaw_rate_max", s.yaw_rate_max));
  b.push_back(field("synth.seed", s.seed, 0));
  b.push_back(field("synth.n_points", s.base.n_points));
  b.push_back(field("synth.world_extent", s.base.world_extent));
  b.push_back(field("synth.trajectory_length", s.base.trajectory_length));
  b.push_back(field("synth.motion_smoothness", s.base.motion_smoothness));
  b.push_back(field("synth.image_height", s.base.image_size.height));
  b.push_back(field("synth.image_width", s.base.image_size.width));
  b.push_back(field("synth.frame_period", s.base.frame_period));
  b.push_back(field("synth.velocity_noise", s.base.velocity_noise));
  b.push_back(field("synth.angular_noise", s.base.angular_noise));
  b.push_back(field("synth.landmark_radius", s.base.landmark_radius));

  b.push_back(field("eval.lengths", c.eval.lengths));
  b.push_back(field("eval.truncation", c.eval.truncation));

  b.push_back(field("serve.report_interval", c.serve.report_interval));
  b.push_back(field("serve.pipeline", c.serve.pipeline));
  return b;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("config: expected 'key = value'", n);
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError("config: empty key", n);
    kv.emplace_back(std::move(key), trim(std::string_view(t).substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  try {
    return parse_key_values(in);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ":" + std::to_string(e.line()) + ": " + e.what());
  }
}

void write_key_values(const KeyValues& kv, std::ostream& out) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

std::pair<std::string, std::string> parse_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  }
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  return {std::move(key), trim(text.substr(eq + 1))};
}

void apply_key_values(AppConfig& cfg, const KeyValues& kv) {
  auto b = bindings(cfg);
  for (const auto& [key, value] : kv) {
    if (key == "seed") {
      // Shorthand for every seeded component.
      const auto s = parse_number<std::uint64_t>(key, value, "an unsigned 64-bit integer");
      cfg.train.seed = s;
      cfg.synth.seed = s;
      continue;
    }
    auto it = std::find_if(b.begin(), b.end(), [&](const Binding& x) { return x.key == key; });
    if (it == b.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->set(key, value);
  }
}

KeyValues to_key_values(const AppConfig& cfg) {
  AppConfig copy = cfg;
  KeyValues kv;
  for (const auto& b : bindings(copy)) kv.emplace_back(b.key, b.get());
  return kv;
}

KeyValues model_key_values(const ModelConfig& cfg) {
  ModelConfig copy = cfg;
  std::vector<Binding> b;
  model_bindings(b, copy);
  KeyValues kv;
  for (const auto& x : b) kv.emplace_back(x.key, x.get());
  return kv;
}

ModelConfig model_from_key_values(const KeyValues& kv) {
  ModelConfig cfg;
  std::vector<Binding> b;
  model_bindings(b, cfg);
  for (const auto& [key, value] : kv) {
    auto it = std::find_if(b.begin(), b.end(), [&](const Binding& x) { return x.key == key; });
    if (it != b.end()) it->set(key, value);
  }
  cfg.validate();
  return cfg;
}

}  // namespace attnvo

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attnvo/app.hpp"
#include "attnvo/config.hpp"
#include "attnvo/dataset.hpp"
#include "attnvo/errors.hpp"
#include "attnvo/metrics.hpp"
#include "attnvo/synth.hpp"
#include "attnvo/training.hpp"
#include "attnvo/trajectory.hpp"

namespace fs = std::filesystem;
using namespace attnvo;

namespace {

struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;

  AppConfig load() const {
    AppConfig cfg;
    if (!config_file.empty()) apply_key_values(cfg, read_key_values(config_file));
    KeyValues kv;
    for (const auto& o : overrides) kv.push_back(parse_assignment(o));
    apply_key_values(cfg, kv);
    if (seed) apply_key_values(cfg, {{"seed", std::to_string(*seed)}});
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for every random stream");
  cmd->add_option("--set", c.overrides, "override a configuration key (key=value)")->take_all();
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw Error("cannot write " + path);
  return file;
}

void write_trajectory(const Trajectory& t, const std::string& path) {
  if (path.empty() || path == "-") {
    write_poses(std::cout, t);
  } else {
    save_pose_file(t, path);
  }
}

// ---------------------------------------------------------------------------

int run_prepare_synth(const AppConfig& cfg, const std::string& out) {
  const SynthDataset ds = synth_dataset(cfg.synth);
  write_synth_dataset(ds, out);
  std::cerr << "prepare: wrote " << ds.train.size() << " train, " << ds.val.size() << " val, "
            << ds.test.size() << " test sequences to " << out << '\n';
  return 0;
}

int run_prepare_manifest(const std::string& dir, double period) {
  const Manifest m = build_manifest(dir, period);
  std::cerr << "prepare: manifest with " << m.frames.size() << " frames\n";
  return 0;
}

int run_prepare_stats(const AppConfig& cfg, const std::string& root, const std::string& split) {
  const auto seqs = load_split(root, split);
  const ChannelStats s = training_stats(seqs, cfg.train.model.image_size);
  write_channel_stats(s, fs::path(root) / "stats.txt");
  std::cerr << "prepare: stats over " << seqs.size() << " sequences written to " << (fs::path(root) / "stats.txt")
            << '\n';
  return 0;
}

int run_prepare_midair(const std::string& in, const std::string& out, double period) {
  write_trajectory(midair_to_camera_frame(load_pose_file(in, period)), out);
  return 0;
}

int run_prepare_stream(const std::string& seq_dir, const std::string& out) {
  const Sequence seq = load_sequence(seq_dir, false);
  std::ofstream file;
  std::ostream& os = open_out(out, file);
  write_input_header(os);
  for (const auto& f : seq.frames) write_frame_message(os, frame_to_message(*f));
  os.flush();
  return 0;
}

int run_train(const AppConfig& app, const std::string& data, const std::string& out, bool resume) {
  TrainConfig cfg = app.train;
  if (!data.empty()) cfg.data_root = data;
  if (!out.empty()) cfg.output_dir = out;
  if (cfg.output_dir.empty()) throw ConfigError("train: an output directory is required (--out)");
  const TrainData td = load_train_data(cfg);

  std::optional<Checkpoint> last, best;
  if (resume) {
    last = load_checkpoint(cfg.output_dir / "last.ckpt");
    if (fs::exists(cfg.output_dir / "best.ckpt")) best = load_checkpoint(cfg.output_dir / "best.ckpt");
  }
  const TrainResult r = train(cfg, td, last ? &*last : nullptr, best ? &*best : nullptr, [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %d: train %.6f val %.6f (%.1f s)\n", e.epoch, e.train_loss, e.val_loss,
                 e.wall_seconds);
    return true;
  });
  std::fprintf(stderr, "train: %zu epochs, best %s loss %.6f at epoch %d%s\n", r.history.size(),
               cfg.monitor == Monitor::validation ? "validation" : "training", r.best.best_loss,
               r.best.best_epoch, r.early_stopped ? " (early stop)" : "");
  return 0;
}

struct LoadedModel {
  Checkpoint ckpt;
  std::unique_ptr<NetworkMotionModel> model;
};

LoadedModel load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("a checkpoint is required (--checkpoint)");
  LoadedModel m;
  m.ckpt = load_checkpoint(path);
  m.model = std::make_unique<NetworkMotionModel>(m.ckpt.model, m.ckpt.params);
  return m;
}

void write_report(const MetricsReport& r, const std::string& out) {
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    write_report_csv(r, f);
  }
  std::cout << render_report(r);
}

int run_eval(const AppConfig& cfg, const std::string& est_path, const std::string& gt_path,
             const std::string& ckpt_path, const std::string& seq_dir, bool corrupt, const std::string& est_out,
             const std::string& out) {
  Trajectory est, gt;
  std::string id;
  if (!seq_dir.empty()) {
    const auto m = load_model(ckpt_path);
    const Sequence seq = load_sequence(seq_dir);
    std::optional<Corruption> c;
    if (corrupt) {
      AugmentConfig a = cfg.train.augment;
      a.cutout_fill = m.ckpt.stats.mean;
      c = Corruption{a, cfg.train.seed};
    }
    est = infer_sequence(*m.model, seq, m.ckpt.stats, m.ckpt.model.image_size, cfg.window, c);
    gt = seq.trajectory;
    id = seq.id;
    if (!est_out.empty()) save_pose_file(est, est_out);
  } else {
    if (est_path.empty() || gt_path.empty()) {
      throw ConfigError("eval needs --est and --gt, or --checkpoint and --sequence");
    }
    est = load_pose_file(est_path);
    gt = load_pose_file(gt_path);
    id = fs::path(est_path).stem().string();
  }
  write_report(build_report(est, gt, cfg.eval.lengths, cfg.eval.truncation, id), out);
  return 0;
}

int run_infer(const AppConfig& cfg, const std::string& ckpt_path, const std::string& seq_dir,
              const std::string& out) {
  const auto m = load_model(ckpt_path);
  const Sequence seq = load_sequence(seq_dir, false);
  write_trajectory(infer_sequence(*m.model, seq, m.ckpt.stats, m.ckpt.model.image_size, cfg.window), out);
  return 0;
}

int run_serve(const AppConfig& cfg, const std::string& ckpt_path, const std::string& input,
              const std::string& output, int port, bool single_thread) {
  const auto m = load_model(ckpt_path);
  ServeConfig sc = cfg.serve;
  if (single_thread) sc.pipeline = false;
  if (port > 0) {
    serve_tcp(static_cast<std::uint16_t>(port), *m.model, cfg.window, m.ckpt.stats, m.ckpt.model.image_size, sc,
              &std::cerr);
    return 0;
  }
  std::ifstream in_file;
  std::istream* in = &std::cin;
  if (!input.empty() && input != "-") {
    in_file.open(input, std::ios::binary);
    if (!in_file) throw Error("cannot read " + input);
    in = &in_file;
  }
  std::ofstream out_file;
  std::ostream& out = open_out(output, out_file);
  serve(*in, out, *m.model, cfg.window, m.ckpt.stats, m.ckpt.model.image_size, sc, &std::cerr);
  return 0;
}

int run_config_dump(const AppConfig& cfg) {
  write_key_values(to_key_values(cfg), std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based monocular visual odometry toolkit"};
  app.require_subcommand(1);

  Common common;

  auto* prepare = app.add_subcommand("prepare", "build datasets, manifests, statistics and streams");
  prepare->require_subcommand(1);

  std::string synth_out;
  auto* p_synth = prepare->add_subcommand("synth", "generate the synthetic dataset");
  p_synth->add_option("--out", synth_out, "dataset root")->required();
  add_common(p_synth, common);

  std::string manifest_dir;
  double manifest_period = 0.1;
  auto* p_manifest = prepare->add_subcommand("manifest", "write manifest.txt for a sequence directory");
  p_manifest->add_option("--dir", manifest_dir, "sequence directory")->required()->check(CLI::ExistingDirectory);
  p_manifest->add_option("--frame-period", manifest_period, "seconds between frames");

  std::string stats_root, stats_split = "train";
  auto* p_stats = prepare->add_subcommand("stats", "compute channel statistics of a split");
  p_stats->add_option("--root", stats_root, "dataset root")->required()->check(CLI::ExistingDirectory);
  p_stats->add_option("--split", stats_split, "split name");
  add_common(p_stats, common);

  std::string midair_in, midair_out;
  double midair_period = 0.1;
  auto* p_midair = prepare->add_subcommand("convert-midair", "convert body-frame poses to the camera frame");
  p_midair->add_option("--in", midair_in, "pose file in the body frame")->required()->check(CLI::ExistingFile);
  p_midair->add_option("--out", midair_out, "output pose file (default stdout)");
  p_midair->add_option("--frame-period", midair_period, "seconds between frames");

  std::string stream_seq, stream_out;
  auto* p_stream = prepare->add_subcommand("stream", "encode a sequence as a frame stream");
  p_stream->add_option("--sequence", stream_seq, "sequence directory")->required()->check(CLI::ExistingDirectory);
  p_stream->add_option("--out", stream_out, "output file (default stdout)");

  std::string train_data, train_out;
  bool train_resume = false;
  auto* train_cmd = app.add_subcommand("train", "train the network");
  train_cmd->add_option("--data", train_data, "dataset root");
  train_cmd->add_option("--out", train_out, "output directory for checkpoints and history");
  train_cmd->add_flag("--resume", train_resume, "continue from <out>/last.ckpt");
  add_common(train_cmd, common);

  std::string eval_est, eval_gt, eval_ckpt, eval_seq, eval_est_out, eval_out;
  bool eval_corrupt = false;
  auto* eval_cmd = app.add_subcommand("eval", "KITTI drift and ATE report");
  eval_cmd->add_option("--est", eval_est, "estimated pose file");
  eval_cmd->add_option("--gt", eval_gt, "ground-truth pose file");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "run the model instead of reading --est");
  eval_cmd->add_option("--sequence", eval_seq, "sequence directory (with --checkpoint)");
  eval_cmd->add_flag("--corrupt", eval_corrupt, "apply augmentation-style corruption to the input frames");
  eval_cmd->add_option("--save-est", eval_est_out, "write the inferred trajectory here");
  eval_cmd->add_option("--out", eval_out, "report CSV path");
  add_common(eval_cmd, common);

  std::string infer_ckpt, infer_seq, infer_out;
  auto* infer_cmd = app.add_subcommand("infer", "estimate a trajectory from frames");
  infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--sequence", infer_seq, "sequence directory")->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--out", infer_out, "output pose file (default stdout)");
  add_common(infer_cmd, common);

  std::string serve_ckpt, serve_in, serve_out;
  int serve_port = 0;
  bool serve_single = false;
  auto* serve_cmd = app.add_subcommand("serve", "streaming inference over stdin/stdout, files or TCP");
  serve_cmd->add_option("--checkpoint", serve_ckpt, "checkpoint file")->required();
  serve_cmd->add_option("--input", serve_in, "frame stream (default stdin)");
  serve_cmd->add_option("--output", serve_out, "pose stream (default stdout)");
  serve_cmd->add_option("--listen", serve_port, "serve one TCP connection on this port")->check(CLI::Range(1, 65535));
  serve_cmd->add_flag("--single-thread", serve_single, "read and infer on one thread");
  add_common(serve_cmd, common);

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  add_common(config_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*p_synth) return run_prepare_synth(common.load(), synth_out);
    if (*p_manifest) return run_prepare_manifest(manifest_dir, manifest_period);
    if (*p_stats) return run_prepare_stats(common.load(), stats_root, stats_split);
    if (*p_midair) return run_prepare_midair(midair_in, midair_out, midair_period);
    if (*p_stream) return run_prepare_stream(stream_seq, stream_out);
    if (*train_cmd) return run_train(common.load(), train_data, train_out, train_resume);
    if (*eval_cmd) {
      return run_eval(common.load(), eval_est, eval_gt, eval_ckpt, eval_seq, eval_corrupt, eval_est_out, eval_out);
    }
    if (*infer_cmd) return run_infer(common.load(), infer_ckpt, infer_seq, infer_out);
    if (*serve_cmd) return run_serve(common.load(), serve_ckpt, serve_in, serve_out, serve_port, serve_single);
    if (*config_cmd) return run_config_dump(common.load());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

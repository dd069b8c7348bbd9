#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attnvo/app.hpp"
#include "attnvo/dataset.hpp"
#include "attnvo/metrics.hpp"
#include "attnvo/training.hpp"
#include "test_support.hpp"

using namespace attnvo;
using namespace attnvo::testing;
namespace fs = std::filesystem;

namespace {

const std::string kTiny =
    " --set model.image_height=8 model.image_width=16 model.conv_channels=4,6 model.conv_strides=2,2"
    " model.lstm_hidden=8 model.attn_layers=1 model.attn_heads=2 model.fc_intermediate=12"
    " synth.n_trajectories=4 synth.n_val=1 synth.n_test=1 synth.trajectory_length=16"
    " synth.image_height=8 synth.image_width=16 synth.n_points=100"
    " train.max_epochs=2 train.batch_size=4 segments.stride=2 window.size=6 window.overlap=3";

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ATTNVO_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One dataset and one trained checkpoint shared by the tests below.
const fs::path& workspace() {
  static const fs::path dir = [] {
    const auto d = scratch_dir("cli");
    const auto log = d / "setup.log";
    if (run("prepare synth --out " + (d / "data").string() + kTiny, log) != 0) return fs::path();
    if (run("train --data " + (d / "data").string() + " --out " + (d / "run").string() + kTiny, log) != 0) {
      return fs::path();
    }
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, UnknownSubcommandOrFlagIsUsageError) {
  const auto d = scratch_dir("cli_usage");
  EXPECT_EQ(run("frobnicate", d / "a.log"), 2);
  EXPECT_EQ(run("eval --no-such-flag", d / "b.log"), 2);
  EXPECT_EQ(run("", d / "c.log"), 2);
}

TEST(Cli, EvalOfIdenticalFilesIsAllZeros) {
  const auto d = scratch_dir("cli_eval");
  Rng rng(1);
  std::vector<MotionVector> m;
  for (int i = 0; i < 300; ++i) {
    MotionVector v;
    v.angles = Vec3(uniform(rng, -0.01, 0.01), 0, 0);
    v.trans = Vec3(0, 0, 1.0);
    m.push_back(v);
  }
  save_pose_file(accumulate(Pose::identity(), m), d / "a.txt");
  const std::string a = (d / "a.txt").string();
  ASSERT_EQ(run("eval --est " + a + " --gt " + a + " --out " + (d / "r.csv").string(), d / "log"), 0)
      << slurp(d / "log");
  std::ifstream in(d / "r.csv");
  const auto r = read_report_csv(in);
  ASSERT_FALSE(r.rows.empty());
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.trans_pct, 0.0);
    EXPECT_LT(row.rot_deg_per_100m, 1e-12);
  }
  EXPECT_LT(r.ate.trans_rmse, 1e-9);
}

TEST(Cli, MissingInputsFailWithOneLineDiagnostic) {
  const auto d = scratch_dir("cli_missing");
  const auto ws = workspace();
  ASSERT_FALSE(ws.empty());
  const auto seq = ws / "data" / "test";
  const auto first = fs::directory_iterator(seq)->path();
  EXPECT_EQ(run("infer --checkpoint " + (d / "nope.ckpt").string() + " --sequence " + first.string(), d / "log"), 1);
  const std::string log = slurp(d / "log");
  EXPECT_EQ(log.rfind("error: ", 0), 0u) << log;
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1);
  EXPECT_NE(run("eval --est " + (d / "nope.txt").string() + " --gt " + (d / "nope.txt").string(), d / "log2"), 0);
  EXPECT_NE(run("eval", d / "log3"), 0);
}

TEST(Cli, InferThenEvalMatchesInProcessPipeline) {
  const auto ws = workspace();
  ASSERT_FALSE(ws.empty());
  const auto seq_dir = fs::directory_iterator(ws / "data" / "test")->path();
  const auto est = ws / (seq_dir.filename().string() + ".txt");
  ASSERT_EQ(run("infer --checkpoint " + (ws / "run" / "best.ckpt").string() + " --sequence " + seq_dir.string() +
                    " --out " + est.string() + kTiny,
                ws / "infer.log"),
            0)
      << slurp(ws / "infer.log");
  ASSERT_EQ(run("eval --est " + est.string() + " --gt " + (seq_dir / "poses.txt").string() + " --out " +
                    (ws / "cli.csv").string() + kTiny,
                ws / "eval.log"),
            0)
      << slurp(ws / "eval.log");

  const auto ckpt = load_checkpoint(ws / "run" / "best.ckpt");
  const NetworkMotionModel model(ckpt.model, ckpt.params);
  const auto seq = load_sequence(seq_dir);
  const auto traj = infer_sequence(model, seq, ckpt.stats, ckpt.model.image_size, {6, 3});
  const auto report = build_report(traj, seq.trajectory, default_path_lengths(), kDefaultTruncation, seq.id);
  std::ostringstream expect;
  write_report_csv(report, expect);
  EXPECT_EQ(slurp(ws / "cli.csv"), expect.str());

  // the checkpoint path through eval gives the same numbers
  ASSERT_EQ(run("eval --checkpoint " + (ws / "run" / "best.ckpt").string() + " --sequence " + seq_dir.string() +
                    " --out " + (ws / "direct.csv").string() + kTiny,
                ws / "eval2.log"),
            0);
  EXPECT_EQ(slurp(ws / "direct.csv"), expect.str());
}

TEST(Cli, ServeFromFileMatchesInfer) {
  const auto ws = workspace();
  ASSERT_FALSE(ws.empty());
  const auto seq_dir = fs::directory_iterator(ws / "data" / "test")->path();
  const auto stream = ws / "frames.avos";
  ASSERT_EQ(run("prepare stream --sequence " + seq_dir.string() + " --out " + stream.string(), ws / "s.log"), 0);
  for (const char* mode : {"", " --single-thread"}) {
    const auto poses = ws / "poses.avop";
    ASSERT_EQ(run("serve --checkpoint " + (ws / "run" / "last.ckpt").string() + " --input " + stream.string() +
                      " --output " + poses.string() + mode + kTiny,
                  ws / "serve.log"),
              0)
        << slurp(ws / "serve.log");
    EXPECT_NE(slurp(ws / "serve.log").find("serve done: 16 frames, 16 poses"), std::string::npos);

    const auto ckpt = load_checkpoint(ws / "run" / "last.ckpt");
    const NetworkMotionModel model(ckpt.model, ckpt.params);
    auto seq = load_sequence(seq_dir);
    seq.trajectory = Trajectory{};  // serve starts from the identity
    const auto offline = infer_sequence(model, seq, ckpt.stats, ckpt.model.image_size, {6, 3});

    std::ifstream in(poses, std::ios::binary);
    read_output_header(in);
    std::size_t i = 0;
    while (auto m = read_pose_message(in)) {
      ASSERT_LT(i, offline.size());
      EXPECT_EQ(m->index, i);
      EXPECT_LT(max_abs_diff(message_pose(*m).matrix(), offline.poses[i].matrix()), 1e-6);
      ++i;
    }
    EXPECT_EQ(i, offline.size());
  }
}

TEST(Cli, TrainWritesHistoryAndResumes) {
  const auto ws = workspace();
  ASSERT_FALSE(ws.empty());
  std::ifstream h(ws / "run" / "history.csv");
  EXPECT_EQ(read_history_csv(h).size(), 2u);
  // one more epoch on top of a copy of the run
  fs::copy(ws / "run", ws / "more", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  ASSERT_EQ(run("train --resume --data " + (ws / "data").string() + " --out " + (ws / "more").string() + kTiny +
                    " train.max_epochs=3",
                ws / "resume.log"),
            0)
      << slurp(ws / "resume.log");
  std::ifstream h2(ws / "more" / "history.csv");
  const auto hist = read_history_csv(h2);
  ASSERT_EQ(hist.size(), 3u);
  EXPECT_GT(hist[0].wall_seconds, 0.0);
}

TEST(Cli, ConfigDumpReflectsOverrides) {
  const auto d = scratch_dir("cli_config");
  std::ofstream(d / "c.txt") << "train.batch_size = 9\nwindow.size = 11\n";
  ASSERT_EQ(run("config --config " + (d / "c.txt").string() + " --seed 5 --set window.size=12", d / "out"), 0);
  const std::string out = slurp(d / "out");
  EXPECT_NE(out.find("train.batch_size = 9"), std::string::npos) << out;
  EXPECT_NE(out.find("window.size = 12"), std::string::npos);
  EXPECT_NE(out.find("train.seed = 5"), std::string::npos);
  std::ofstream(d / "bad.txt") << "train.bogus = 1\n";
  EXPECT_EQ(run("config --config " + (d / "bad.txt").string(), d / "out2"), 1);
}

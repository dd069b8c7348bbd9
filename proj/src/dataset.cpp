#include "attnvo/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "attnvo/errors.hpp"

namespace fs = std::filesystem;

namespace attnvo {

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw InvalidArgument("format_real: conversion failed");
  return std::string(buf, ptr);
}

namespace {

bool parse_double(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t j = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > j) toks.push_back(line.substr(j, i - j));
  }
  return toks;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

Trajectory read_poses(std::istream& in, double frame_period) {
  Trajectory traj;
  traj.frame_period = frame_period;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 12) {
      throw ParseError("expected 12 values, found " + std::to_string(toks.size()), line_no);
    }
    Mat4 m = Mat4::Identity();
    for (int k = 0; k < 12; ++k) {
      double v;
      if (!parse_double(toks[k], v) || !std::isfinite(v)) {
        throw ParseError("invalid number '" + std::string(toks[k]) + "'", line_no);
      }
      m(k / 4, k % 4) = v;
    }
    try {
      traj.poses.push_back(Pose::from_matrix(m, 1e-3));
    } catch (const InvalidArgument& e) {
      throw DataError("pose on line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return traj;
}

void write_poses(std::ostream& out, const Trajectory& traj) {
  for (const auto& p : traj.poses) {
    const Mat4& m = p.matrix();
    for (int k = 0; k < 12; ++k) {
      if (k) out << ' ';
      out << format_real(m(k / 4, k % 4));
    }
    out << '\n';
  }
}

Trajectory load_pose_file(const fs::path& path, double frame_period) {
  auto in = open_in(path);
  return read_poses(in, frame_period);
}

void save_pose_file(const Trajectory& traj, const fs::path& path) {
  auto out = open_out(path);
  write_poses(out, traj);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

namespace {

// Rows are camera axes expressed in body coordinates.
Mat4 body_to_camera() {
  Mat4 c = Mat4::Zero();
  c(0, 1) = 1.0;  // camera x = body y (right)
  c(1, 2) = 1.0;  // camera y = body z (down)
  c(2, 0) = 1.0;  // camera z = body x (forward)
  c(3, 3) = 1.0;
  return c;
}

}  // namespace

Pose midair_to_camera_frame(const Pose& p) {
  static const Mat4 c = body_to_camera();
  return Pose::from_matrix(c * p.matrix() * c.transpose());
}

Trajectory midair_to_camera_frame(const Trajectory& traj) {
  Trajectory out;
  out.frame_period = traj.frame_period;
  out.poses.reserve(traj.size());
  for (const auto& p : traj.poses) out.poses.push_back(midair_to_camera_frame(p));
  return out;
}

void write_ppm(const Image& img, const fs::path& path) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.pixels[i]), 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Image read_ppm(const fs::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  auto next_token = [&]() {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (next_token() != "P6") throw DataError("'" + path.string() + "' is not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw DataError("'" + path.string() + "': malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw DataError("'" + path.string() + "': unsupported PPM geometry or maxval");
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("'" + path.string() + "': truncated pixel data");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0f;
  return img;
}

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    v = static_cast<unsigned char>(std::lround(c * 255.0)) / 255.0f;
  }
  return out;
}

void write_manifest(const Manifest& m, std::ostream& out) {
  out << "# attnvo sequence manifest\n";
  out << "poses " << m.pose_file << '\n';
  out << "frame_period " << format_real(m.frame_period) << '\n';
  for (const auto& f : m.frames) {
    out << "frame " << f.index << ' ' << format_real(f.timestamp) << ' ' << f.path << '\n';
  }
}

Manifest read_manifest(std::istream& in) {
  Manifest m;
  m.pose_file.clear();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty() || toks[0].front() == '#') continue;
    if (toks[0] == "poses" && toks.size() == 2) {
      m.pose_file = std::string(toks[1]);
    } else if (toks[0] == "frame_period" && toks.size() == 2) {
      if (!parse_double(toks[1], m.frame_period)) throw ParseError("bad frame_period", line_no);
    } else if (toks[0] == "frame" && toks.size() == 4) {
      ManifestEntry e;
      const auto idx = toks[1];
      auto [p, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), e.index);
      if (ec != std::errc{} || p != idx.data() + idx.size()) {
        throw ParseError("bad frame index", line_no);
      }
      if (!parse_double(toks[2], e.timestamp)) throw ParseError("bad timestamp", line_no);
      e.path = std::string(toks[3]);
      m.frames.push_back(std::move(e));
    } else {
      throw ParseError("unrecognized manifest line", line_no);
    }
  }
  return m;
}

namespace {

std::string frame_filename(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".ppm";
  return os.str();
}

}  // namespace

Manifest build_manifest(const fs::path& dir, double frame_period) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir / "frames")) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Manifest m;
  m.frame_period = frame_period;
  for (std::size_t i = 0; i < files.size(); ++i) {
    m.frames.push_back({i, static_cast<double>(i) * frame_period,
                        (fs::path("frames") / files[i].filename()).generic_string()});
  }
  auto out = open_out(dir / "manifest.txt");
  write_manifest(m, out);
  return m;
}

void save_sequence(const fs::path& dir, const Trajectory& traj, std::span<const Frame> frames) {
  fs::create_directories(dir / "frames");
  Manifest m;
  m.frame_period = traj.frame_period;
  for (const auto& f : frames) {
    const std::string rel = (fs::path("frames") / frame_filename(f.index)).generic_string();
    write_ppm(f.image, dir / rel);
    m.frames.push_back({f.index, f.timestamp, rel});
  }
  save_pose_file(traj, dir / m.pose_file);
  auto out = open_out(dir / "manifest.txt");
  write_manifest(m, out);
}

Sequence load_sequence(const fs::path& dir, bool require_poses) {
  auto in = open_in(dir / "manifest.txt");
  const Manifest m = read_manifest(in);
  Sequence seq;
  seq.id = dir.filename().string();
  seq.frames.reserve(m.frames.size());
  for (const auto& e : m.frames) {
    auto f = std::make_shared<Frame>();
    f->index = e.index;
    f->timestamp = e.timestamp;
    f->image = read_ppm(dir / e.path);
    seq.frames.push_back(std::move(f));
  }
  const fs::path pose_path = dir / (m.pose_file.empty() ? "poses.txt" : m.pose_file);
  if (fs::exists(pose_path)) {
    seq.trajectory = load_pose_file(pose_path, m.frame_period);
    if (seq.trajectory.size() != seq.frames.size()) {
      throw DataError("sequence '" + seq.id + "': " + std::to_string(seq.frames.size()) +
                      " frames but " + std::to_string(seq.trajectory.size()) + " poses");
    }
  } else if (require_poses) {
    throw DataError("sequence '" + seq.id + "': missing pose file " + pose_path.string());
  } else {
    seq.trajectory.frame_period = m.frame_period;
  }
  return seq;
}

std::vector<Sequence> load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) throw DataError("missing split directory '" + dir.string() + "'");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

void write_channel_stats(const ChannelStats& s, const fs::path& path) {
  auto out = open_out(path);
  out << "mean";
  for (double v : s.mean) out << ' ' << format_real(v);
  out << "\nstd";
  for (double v : s.std) out << ' ' << format_real(v);
  out << '\n';
}

ChannelStats read_channel_stats(const fs::path& path) {
  auto in = open_in(path);
  ChannelStats s;
  std::string line;
  std::size_t line_no = 0;
  bool got_mean = false, got_std = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 4) throw ParseError("expected a key and 3 values", line_no);
    auto& dst = toks[0] == "mean" ? s.mean : s.std;
    if (toks[0] != "mean" && toks[0] != "std") throw ParseError("unknown key", line_no);
    for (int c = 0; c < 3; ++c) {
      if (!parse_double(toks[c + 1], dst[c])) throw ParseError("invalid number", line_no);
    }
    (toks[0] == "mean" ? got_mean : got_std) = true;
  }
  if (!got_mean || !got_std) throw DataError("'" + path.string() + "': incomplete channel stats");
  return s;
}

}  // namespace attnvo

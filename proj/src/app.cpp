#include "attnvo/app.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <exception>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <streambuf>
#include <thread>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "attnvo/errors.hpp"

namespace attnvo {

static_assert(std::endian::native == std::endian::little, "stream I/O assumes a little-endian host");

namespace {

constexpr char kInputMagic[4] = {'A', 'V', 'O', 'S'};
constexpr char kOutputMagic[4] = {'A', 'V', 'O', 'P'};
constexpr std::uint32_t kPosePayload = 8 + 13 * 8;
constexpr std::uint64_t kMaxFrameBytes = 1ull << 28;

template <typename V>
void put(std::ostream& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.write(buf, sizeof(V));
}

template <typename V>
V take(const char* p) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  return v;
}

/// Reads exactly n bytes. Returns false on EOF before the first byte when
/// `allow_eof`; a partial read is a protocol error.
bool read_exact(std::istream& in, char* dst, std::size_t n, bool allow_eof, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got == n) return true;
  if (got == 0 && allow_eof) return false;
  throw ProtocolError(std::string("truncated ") + what + " (" + std::to_string(got) + " of " +
                      std::to_string(n) + " bytes)");
}

void write_header(std::ostream& out, const char (&magic)[4]) {
  out.write(magic, 4);
  put<std::uint32_t>(out, kStreamVersion);
}

void read_header(std::istream& in, const char (&magic)[4], const char* what) {
  char buf[8];
  read_exact(in, buf, 8, false, what);
  if (std::memcmp(buf, magic, 4) != 0) throw ProtocolError(std::string(what) + ": bad magic");
  const auto version = take<std::uint32_t>(buf + 4);
  if (version != kStreamVersion) {
    throw ProtocolError(std::string(what) + ": unsupported version " + std::to_string(version));
  }
}

}  // namespace

void write_input_header(std::ostream& out) { write_header(out, kInputMagic); }
void read_input_header(std::istream& in) { read_header(in, kInputMagic, "input stream header"); }
void write_output_header(std::ostream& out) { write_header(out, kOutputMagic); }
void read_output_header(std::istream& in) { read_header(in, kOutputMagic, "pose stream header"); }

void write_frame_message(std::ostream& out, const StreamFrameMessage& msg) {
  const std::uint64_t pixels = std::uint64_t{3} * msg.width * msg.height;
  if (msg.rgb.size() != pixels) throw InvalidArgument("frame message: payload does not match 3*width*height");
  put<std::uint32_t>(out, static_cast<std::uint32_t>(16 + pixels));
  put<std::uint64_t>(out, msg.index);
  put<std::uint32_t>(out, msg.width);
  put<std::uint32_t>(out, msg.height);
  out.write(reinterpret_cast<const char*>(msg.rgb.data()), static_cast<std::streamsize>(msg.rgb.size()));
}

std::optional<StreamFrameMessage> read_frame_message(std::istream& in) {
  char len_buf[4];
  if (!read_exact(in, len_buf, 4, true, "frame record length")) return std::nullopt;
  const auto len = take<std::uint32_t>(len_buf);
  char head[16];
  if (len < 16) throw ProtocolError("frame record of " + std::to_string(len) + " bytes is too short");
  read_exact(in, head, 16, false, "frame record header");
  StreamFrameMessage msg;
  msg.index = take<std::uint64_t>(head);
  msg.width = take<std::uint32_t>(head + 8);
  msg.height = take<std::uint32_t>(head + 12);
  const std::uint64_t pixels = std::uint64_t{3} * msg.width * msg.height;
  if (msg.width == 0 || msg.height == 0 || pixels > kMaxFrameBytes || pixels + 16 != len) {
    throw ProtocolError("frame " + std::to_string(msg.index) + ": record length " + std::to_string(len) +
                        " does not match " + std::to_string(msg.width) + "x" + std::to_string(msg.height));
  }
  msg.rgb.resize(pixels);
  read_exact(in, reinterpret_cast<char*>(msg.rgb.data()), pixels, false, "frame payload");
  return msg;
}

void write_pose_message(std::ostream& out, const PoseMessage& msg) {
  put<std::uint32_t>(out, kPosePayload);
  put<std::uint64_t>(out, msg.index);
  for (double v : msg.pose) put<double>(out, v);
  put<double>(out, msg.latency_ms);
}

std::optional<PoseMessage> read_pose_message(std::istream& in) {
  char len_buf[4];
  if (!read_exact(in, len_buf, 4, true, "pose record length")) return std::nullopt;
  if (take<std::uint32_t>(len_buf) != kPosePayload) throw ProtocolError("pose record has the wrong length");
  char buf[kPosePayload];
  read_exact(in, buf, kPosePayload, false, "pose record");
  PoseMessage msg;
  msg.index = take<std::uint64_t>(buf);
  for (std::size_t i = 0; i < 12; ++i) msg.pose[i] = take<double>(buf + 8 + 8 * i);
  msg.latency_ms = take<double>(buf + 8 + 96);
  return msg;
}

StreamFrameMessage frame_to_message(const Frame& frame) {
  StreamFrameMessage msg;
  msg.index = frame.index;
  msg.width = static_cast<std::uint32_t>(frame.image.width);
  msg.height = static_cast<std::uint32_t>(frame.image.height);
  msg.rgb.resize(frame.image.pixels.size());
  for (std::size_t i = 0; i < msg.rgb.size(); ++i) {
    const double v = std::clamp(static_cast<double>(frame.image.pixels[i]), 0.0, 1.0);
    msg.rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return msg;
}

Frame message_to_frame(const StreamFrameMessage& msg) {
  Frame f;
  f.index = msg.index;
  f.image = Image(static_cast<int>(msg.height), static_cast<int>(msg.width));
  for (std::size_t i = 0; i < msg.rgb.size(); ++i) f.image.pixels[i] = msg.rgb[i] / 255.0f;
  return f;
}

PoseMessage make_pose_message(std::uint64_t index, const Pose& pose, double latency_ms) {
  PoseMessage msg;
  msg.index = index;
  const Mat4& m = pose.matrix();
  for (int k = 0; k < 12; ++k) msg.pose[static_cast<std::size_t>(k)] = m(k / 4, k % 4);
  msg.latency_ms = latency_ms;
  return msg;
}

Pose message_pose(const PoseMessage& msg) {
  Mat4 m = Mat4::Identity();
  for (int k = 0; k < 12; ++k) m(k / 4, k % 4) = msg.pose[static_cast<std::size_t>(k)];
  try {
    return Pose::from_matrix(m, 1e-3);
  } catch (const InvalidArgument& e) {
    throw ProtocolError("pose for frame " + std::to_string(msg.index) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// StreamingOdometry
// ---------------------------------------------------------------------------

StreamingOdometry::StreamingOdometry(const MotionModel& model, WindowConfig window, ChannelStats stats,
                                     ImageSize size, const Pose& initial)
    : model_(model), window_(window), stats_(stats), size_(size), current_(initial) {
  window_.validate();
}

std::vector<EmittedPose> StreamingOdometry::push(const Frame& frame) {
  if (finished_) throw StateError("stream already finished");
  if (last_index_ && frame.index <= *last_index_) {
    throw ProtocolError("frame index " + std::to_string(frame.index) + " after " +
                        std::to_string(*last_index_) + ": out of order or duplicate");
  }
  last_index_ = frame.index;
  buffer_.push_back(normalize_resize(frame, stats_, size_));
  indices_.push_back(frame.index);
  ++received_;

  const std::size_t end = next_window_ + window_.size - 1;
  if (received_ - 1 < end) return {};
  auto out = run_window(next_window_, end);
  next_window_ += window_.stride();
  while (buffer_start_ < next_window_ && !buffer_.empty()) {
    buffer_.pop_front();
    indices_.pop_front();
    ++buffer_start_;
  }
  return out;
}

std::vector<EmittedPose> StreamingOdometry::finish() {
  if (finished_) return {};
  finished_ = true;
  if (received_ == 0) return {};
  if (received_ == 1) {
    if (emitted_ == 0) {
      ++emitted_;
      return {{indices_.front(), current_}};
    }
    return {};
  }
  if (emitted_ > 0 && assembler_.covered() == received_ - 1) return {};
  return run_window(next_window_, received_ - 1);
}

std::vector<EmittedPose> StreamingOdometry::run_window(std::size_t start, std::size_t end) {
  std::vector<const Frame*> frames;
  for (std::size_t p = start; p <= end; ++p) frames.push_back(&buffer_[p - buffer_start_]);
  std::vector<MotionVector> motions;
  if (end > start) motions = model_.predict(frames);
  const auto fresh = assembler_.add(start, motions);

  std::vector<EmittedPose> out;
  if (emitted_ == 0) {
    out.push_back({indices_[0 - buffer_start_], current_});
    ++emitted_;
  }
  for (const auto& m : fresh) {
    current_ = compose(current_, motion_to_pose(m));
    out.push_back({indices_[emitted_ - buffer_start_], current_});
    ++emitted_;
  }
  return out;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

struct Arrival {
  std::optional<StreamFrameMessage> msg;  // empty = end of stream
  Clock::time_point received;
};

/// Bounded single-producer queue between the reader thread and inference.
class ArrivalQueue {
 public:
  explicit ArrivalQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Arrival a) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(a));
    not_empty_.notify_one();
  }
  void fail(std::exception_ptr e) {
    std::lock_guard lock(mu_);
    error_ = e;
    not_empty_.notify_one();
  }
  /// Consumer side.
  Arrival pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || error_; });
    if (items_.empty()) std::rethrow_exception(error_);
    Arrival a = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return a;
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<Arrival> items_;
  std::size_t capacity_;
  std::exception_ptr error_;
  bool closed_ = false;
};

class Server {
 public:
  Server(std::ostream& out, const MotionModel& model, const WindowConfig& window, const ChannelStats& stats,
         ImageSize size, const ServeConfig& cfg, std::ostream* diag)
      : out_(out), odo_(model, window, stats, size), cfg_(cfg), diag_(diag), start_(Clock::now()) {}

  void handle(const Arrival& a) {
    Frame f = message_to_frame(*a.msg);
    receipts_.emplace(f.index, a.received);
    emit(odo_.push(f));
    ++stats_.frames;
    if (diag_ && cfg_.report_interval && stats_.frames % cfg_.report_interval == 0) report("progress");
  }

  ServeStats finish() {
    emit(odo_.finish());
    if (diag_) report("done");
    stats_.seconds = elapsed();
    stats_.mean_latency_ms = stats_.poses ? latency_sum_ / static_cast<double>(stats_.poses) : 0.0;
    return stats_;
  }

 private:
  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

  void emit(const std::vector<EmittedPose>& poses) {
    const auto now = Clock::now();
    for (const auto& p : poses) {
      auto it = receipts_.find(p.index);
      const double latency = std::chrono::duration<double, std::milli>(now - it->second).count();
      receipts_.erase(it);
      write_pose_message(out_, make_pose_message(p.index, p.pose, latency));
      latency_sum_ += latency;
      ++stats_.poses;
    }
    if (!poses.empty()) out_.flush();
  }

  void report(const char* what) {
    const double s = elapsed();
    const double fps = s > 0 ? static_cast<double>(stats_.frames) / s : 0.0;
    const double lat = stats_.poses ? latency_sum_ / static_cast<double>(stats_.poses) : 0.0;
    char line[160];
    std::snprintf(line, sizeof(line), "serve %s: %zu frames, %zu poses, %.2f frames/s, mean latency %.2f ms\n",
                  what, stats_.frames, stats_.poses, fps, lat);
    *diag_ << line << std::flush;
  }

  std::ostream& out_;
  StreamingOdometry odo_;
  ServeConfig cfg_;
  std::ostream* diag_;
  Clock::time_point start_;
  std::map<std::uint64_t, Clock::time_point> receipts_;
  ServeStats stats_;
  double latency_sum_ = 0.0;
};

}  // namespace

ServeStats serve(std::istream& in, std::ostream& out, const MotionModel& model, const WindowConfig& window,
                 const ChannelStats& stats, ImageSize size, const ServeConfig& cfg, std::ostream* diag) {
  window.validate();
  write_output_header(out);
  out.flush();
  if (in.peek() == std::char_traits<char>::eof()) {
    // Nothing at all on the input: a clean, empty session.
    return {};
  }
  read_input_header(in);
  Server server(out, model, window, stats, size, cfg, diag);

  if (!cfg.pipeline) {
    while (auto msg = read_frame_message(in)) server.handle({std::move(msg), Clock::now()});
    return server.finish();
  }

  ArrivalQueue queue(64);
  std::thread reader([&] {
    try {
      while (true) {
        auto msg = read_frame_message(in);
        const bool end = !msg;
        queue.push({std::move(msg), Clock::now()});
        if (end) return;
      }
    } catch (...) {
      queue.fail(std::current_exception());
    }
  });
  try {
    while (true) {
      Arrival a = queue.pop();
      if (!a.msg) break;
      server.handle(a);
    }
  } catch (...) {
    queue.close();
    reader.join();
    throw;
  }
  reader.join();
  return server.finish();
}

// ---------------------------------------------------------------------------
// TCP
// ---------------------------------------------------------------------------

namespace {

class FdStreambuf : public std::streambuf {
 public:
  explicit FdStreambuf(int fd) : fd_(fd) {
    setg(in_, in_, in_);
    setp(out_, out_ + sizeof(out_));
  }
  ~FdStreambuf() override { sync(); }

 protected:
  int_type underflow() override {
    ssize_t n;
    do {
      n = ::recv(fd_, in_, sizeof(in_), 0);
    } while (n < 0 && errno == EINTR);
    if (n <= 0) return traits_type::eof();
    setg(in_, in_, in_ + n);
    return traits_type::to_int_type(*gptr());
  }

  int_type overflow(int_type ch) override {
    if (flush_out() < 0) return traits_type::eof();
    if (!traits_type::eq_int_type(ch, traits_type::eof())) {
      *pptr() = traits_type::to_char_type(ch);
      pbump(1);
    }
    return traits_type::not_eof(ch);
  }

  int sync() override { return flush_out(); }

 private:
  int flush_out() {
    char* p = pbase();
    while (p < pptr()) {
      const ssize_t n = ::send(fd_, p, static_cast<std::size_t>(pptr() - p), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        return -1;
      }
      p += n;
    }
    setp(out_, out_ + sizeof(out_));
    return 0;
  }

  int fd_;
  char in_[1 << 16];
  char out_[1 << 14];
};

struct Fd {
  int fd = -1;
  ~Fd() {
    if (fd >= 0) ::close(fd);
  }
};

}  // namespace

ServeStats serve_tcp(std::uint16_t port, const MotionModel& model, const WindowConfig& window,
                     const ChannelStats& stats, ImageSize size, const ServeConfig& cfg, std::ostream* diag) {
  Fd listener{::socket(AF_INET, SOCK_STREAM, 0)};
  if (listener.fd < 0) throw Error("socket: " + std::string(std::strerror(errno)));
  const int one = 1;
  ::setsockopt(listener.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(listener.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    throw Error("bind port " + std::to_string(port) + ": " + std::strerror(errno));
  }
  if (::listen(listener.fd, 1) < 0) throw Error("listen: " + std::string(std::strerror(errno)));
  if (diag) *diag << "serve: listening on port " << port << '\n' << std::flush;
  Fd conn{::accept(listener.fd, nullptr, nullptr)};
  if (conn.fd < 0) throw Error("accept: " + std::string(std::strerror(errno)));

  FdStreambuf buf(conn.fd);
  std::istream in(&buf);
  std::ostream out(&buf);
  ServeStats s = serve(in, out, model, window, stats, size, cfg, diag);
  out.flush();
  return s;
}

// ---------------------------------------------------------------------------
// Offline helpers
// ---------------------------------------------------------------------------

Trajectory infer_sequence(const MotionModel& model, const Sequence& seq, const ChannelStats& stats,
                          ImageSize size, const WindowConfig& window,
                          const std::optional<Corruption>& corruption) {
  std::vector<Frame> frames;
  frames.reserve(seq.frames.size());
  for (const auto& f : seq.frames) {
    if (corruption) {
      Rng rng(derive_seed(corruption->seed, {f->index}));
      frames.push_back(normalize_resize(augment(*f, corruption->augment, rng), stats, size));
    } else {
      frames.push_back(normalize_resize(*f, stats, size));
    }
  }
  std::vector<const Frame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  const Pose initial = seq.trajectory.empty() ? Pose::identity() : seq.trajectory.poses.front();
  const double period = seq.trajectory.empty() ? 0.1 : seq.trajectory.frame_period;
  return infer_trajectory(model, ptrs, window, initial, period);
}

}  // namespace attnvo

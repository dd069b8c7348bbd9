#include "attnvo/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "attnvo/dataset.hpp"
#include "attnvo/errors.hpp"

namespace attnvo {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

void require_same_length(const Trajectory& est, const Trajectory& gt, const char* what) {
  if (est.size() != gt.size()) {
    throw InvalidArgument(std::string(what) + ": estimate has " + std::to_string(est.size()) +
                          " poses, ground truth " + std::to_string(gt.size()));
  }
}

}  // namespace

std::vector<double> default_path_lengths() { return {100, 200, 300, 400, 500, 600, 700, 800}; }

std::vector<double> cumulative_distances(const Trajectory& gt) {
  std::vector<double> dist(gt.size(), 0.0);
  for (std::size_t i = 1; i < gt.size(); ++i) {
    dist[i] = dist[i - 1] + (gt.poses[i].translation() - gt.poses[i - 1].translation()).norm();
  }
  return dist;
}

std::vector<LengthError> kitti_errors(const Trajectory& est, const Trajectory& gt,
                                      const std::vector<double>& lengths, std::size_t step) {
  require_same_length(est, gt, "kitti_errors");
  if (step == 0) throw InvalidArgument("kitti_errors: step must be positive");
  for (double d : lengths) {
    if (!(d > 0.0)) throw InvalidArgument("kitti_errors: path lengths must be positive");
  }
  const auto dist = cumulative_distances(gt);
  std::vector<LengthError> rows;
  for (double d : lengths) {
    LengthError row;
    row.length = d;
    double t_sum = 0.0, r_sum = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < gt.size(); i += step) {
      // dist is non-decreasing, so the end frame only moves forward.
      j = std::max(j, i);
      while (j < gt.size() && dist[j] - dist[i] < d) ++j;
      if (j == gt.size()) break;
      const double actual = dist[j] - dist[i];
      const Pose delta_est = relative(est.poses[i], est.poses[j]);
      const Pose delta_gt = relative(gt.poses[i], gt.poses[j]);
      // err = delta_est^-1 * delta_gt, expanded so equal deltas give exact zeros
      const Mat3 r_est_t = delta_est.rotation().transpose();
      const Vec3 err_t = r_est_t * (delta_gt.translation() - delta_est.translation());
      t_sum += err_t.norm() / actual;
      r_sum += rotation_angle(Mat3(r_est_t * delta_gt.rotation())) / actual;
      ++row.pairs;
    }
    if (row.pairs == 0) continue;
    row.trans_pct = 100.0 * t_sum / static_cast<double>(row.pairs);
    row.rot_deg_per_100m = 100.0 * kRadToDeg * r_sum / static_cast<double>(row.pairs);
    rows.push_back(row);
  }
  return rows;
}

AteResult ate(const Trajectory& est, const Trajectory& gt) {
  require_same_length(est, gt, "ate");
  const Trajectory aligned = align_rigid(est, gt);
  double t2 = 0.0, r2 = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    t2 += (gt.poses[i].translation() - aligned.poses[i].translation()).squaredNorm();
    const double a = rotation_angle(Mat3(aligned.poses[i].rotation() * gt.poses[i].rotation().transpose()));
    r2 += a * a;
  }
  const double n = static_cast<double>(gt.size());
  return {std::sqrt(t2 / n), std::sqrt(r2 / n) * kRadToDeg};
}

TrajectoryPair truncate_at(const TrajectoryPair& pair, double limit) {
  require_same_length(pair.est, pair.gt, "truncate_at");
  if (!(limit > 0.0)) throw InvalidArgument("truncate_at: limit must be positive");
  const auto dist = cumulative_distances(pair.gt);
  std::size_t keep = 0;
  while (keep < dist.size() && dist[keep] <= limit) ++keep;
  TrajectoryPair out = pair;
  out.est.poses.resize(keep, Pose::identity());
  out.gt.poses.resize(keep, Pose::identity());
  return out;
}

MetricsReport build_report(const Trajectory& est, const Trajectory& gt,
                           const std::vector<double>& lengths, double limit, std::string id) {
  const TrajectoryPair cut = truncate_at({est, gt}, limit);
  MetricsReport r;
  r.trajectory_id = std::move(id);
  r.rows = kitti_errors(cut.est, cut.gt, lengths);
  if (r.rows.empty()) {
    r.mean_trans_pct = std::numeric_limits<double>::quiet_NaN();
    r.mean_rot_deg_per_100m = std::numeric_limits<double>::quiet_NaN();
  } else {
    for (const auto& row : r.rows) {
      r.mean_trans_pct += row.trans_pct;
      r.mean_rot_deg_per_100m += row.rot_deg_per_100m;
    }
    r.mean_trans_pct /= static_cast<double>(r.rows.size());
    r.mean_rot_deg_per_100m /= static_cast<double>(r.rows.size());
  }
  r.ate = ate(cut.est, cut.gt);
  return r;
}

// CSV layout:
//   length_m,trans_err_pct,rot_err_deg_per_100m,pairs
//   100,1.5,0.3,812
//   ...
//   mean,<trans>,<rot>,
//   ate_trans_m,<v>
//   ate_rot_deg,<v>
// plus an optional leading "# trajectory <id>" line.

void write_report_csv(const MetricsReport& r, std::ostream& out) {
  if (!r.trajectory_id.empty()) out << "# trajectory " << r.trajectory_id << '\n';
  out << "length_m,trans_err_pct,rot_err_deg_per_100m,pairs\n";
  for (const auto& row : r.rows) {
    out << format_real(row.length) << ',' << format_real(row.trans_pct) << ','
        << format_real(row.rot_deg_per_100m) << ',' << row.pairs << '\n';
  }
  out << "mean," << format_real(r.mean_trans_pct) << ',' << format_real(r.mean_rot_deg_per_100m)
      << ",\n";
  out << "ate_trans_m," << format_real(r.ate.trans_rmse) << '\n';
  out << "ate_rot_deg," << format_real(r.ate.rot_rmse) << '\n';
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("report: bad number '" + s + "'", line);
  }
}

}  // namespace

MetricsReport read_report_csv(std::istream& in) {
  MetricsReport r;
  std::string line;
  std::size_t n = 0;
  bool header = false, have_mean = false, have_t = false, have_r = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    if (line.rfind("# trajectory ", 0) == 0) {
      r.trajectory_id = line.substr(13);
      continue;
    }
    if (!header) {
      if (line != "length_m,trans_err_pct,rot_err_deg_per_100m,pairs") {
        throw ParseError("report: missing header", n);
      }
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.empty()) throw ParseError("report: empty row", n);
    if (cells[0] == "mean") {
      if (cells.size() < 3) throw ParseError("report: short mean row", n);
      r.mean_trans_pct = parse_double(cells[1], n);
      r.mean_rot_deg_per_100m = parse_double(cells[2], n);
      have_mean = true;
    } else if (cells[0] == "ate_trans_m" && cells.size() == 2) {
      r.ate.trans_rmse = parse_double(cells[1], n);
      have_t = true;
    } else if (cells[0] == "ate_rot_deg" && cells.size() == 2) {
      r.ate.rot_rmse = parse_double(cells[1], n);
      have_r = true;
    } else {
      if (cells.size() != 4) throw ParseError("report: expected 4 columns", n);
      LengthError row;
      row.length = parse_double(cells[0], n);
      row.trans_pct = parse_double(cells[1], n);
      row.rot_deg_per_100m = parse_double(cells[2], n);
      row.pairs = static_cast<std::size_t>(parse_double(cells[3], n));
      r.rows.push_back(row);
    }
  }
  if (!header || !have_mean || !have_t || !have_r) throw ParseError("report: incomplete", n);
  return r;
}

std::string render_report(const MetricsReport& r) {
  std::ostringstream os;
  if (!r.trajectory_id.empty()) os << "Trajectory " << r.trajectory_id << '\n';
  os << std::fixed;
  os << std::setw(12) << "Length (m)" << std::setw(14) << "Trans (%)" << std::setw(18)
     << "Rot (deg/100m)" << std::setw(10) << "Pairs" << '\n';
  for (const auto& row : r.rows) {
    os << std::setw(12) << std::setprecision(0) << row.length << std::setw(14)
       << std::setprecision(3) << row.trans_pct << std::setw(18) << row.rot_deg_per_100m
       << std::setw(10) << row.pairs << '\n';
  }
  os << std::setw(12) << "Mean" << std::setw(14) << std::setprecision(3) << r.mean_trans_pct
     << std::setw(18) << r.mean_rot_deg_per_100m << '\n';
  os << "ATE translation: " << std::setprecision(4) << r.ate.trans_rmse << " m\n";
  os << "ATE rotation:    " << std::setprecision(4) << r.ate.rot_rmse << " deg\n";
  return os.str();
}

}  // namespace attnvo

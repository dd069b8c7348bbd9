#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "attnvo/geometry.hpp"

namespace attnvo {

/// 100, 200, ..., 800 m.
std::vector<double> default_path_lengths();

inline constexpr double kDefaultTruncation = 1000.0;

/// dist[0] = 0, dist[i] = dist[i-1] + |t_i - t_{i-1}|.
std::vector<double> cumulative_distances(const Trajectory& gt);

struct LengthError {
  double length = 0.0;       // meters
  double trans_pct = 0.0;    // percent
  double rot_deg_per_100m = 0.0;
  std::size_t pairs = 0;
};

/// Per-length drift. Each start frame i is paired with the first j whose
/// ground-truth distance from i reaches d; the per-pair error is divided by
/// that actual distance and averaged. Lengths without pairs are omitted.
std::vector<LengthError> kitti_errors(const Trajectory& est, const Trajectory& gt,
                                      const std::vector<double>& lengths, std::size_t step = 1);

struct AteResult {
  double trans_rmse = 0.0;  // meters
  double rot_rmse = 0.0;    // degrees
};

/// Root mean square error after rigid alignment of est onto gt.
AteResult ate(const Trajectory& est, const Trajectory& gt);

struct TrajectoryPair {
  Trajectory est;
  Trajectory gt;
};

/// Keeps frames whose ground-truth cumulative distance is <= limit.
TrajectoryPair truncate_at(const TrajectoryPair& pair, double limit);

struct MetricsReport {
  std::string trajectory_id;
  std::vector<LengthError> rows;
  double mean_trans_pct = 0.0;
  double mean_rot_deg_per_100m = 0.0;
  AteResult ate;
};

MetricsReport build_report(const Trajectory& est, const Trajectory& gt,
                           const std::vector<double>& lengths = default_path_lengths(),
                           double limit = kDefaultTruncation, std::string id = {});

void write_report_csv(const MetricsReport& r, std::ostream& out);
MetricsReport read_report_csv(std::istream& in);
/// Table layout for terminals.
std::string render_report(const MetricsReport& r);

}  // namespace attnvo

#include "rlvo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rlvo/errors.hpp"

namespace rlvo {

Association associate(const Trajectory& estimated, const Trajectory& ground_truth,
                      double tolerance) {
  Association out;
  if (ground_truth.empty()) return out;
  std::vector<double> gt_times;
  gt_times.reserve(ground_truth.size());
  for (const auto& p : ground_truth) gt_times.push_back(p.timestamp());

  std::vector<bool> used(ground_truth.size(), false);
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    const double t = estimated[i].timestamp();
    const auto it = std::lower_bound(gt_times.begin(), gt_times.end(), t);
    std::size_t best = gt_times.size();
    double best_dt = tolerance;
    auto consider = [&](std::size_t j) {
      const double dt = std::abs(gt_times[j] - t);
      if (!used[j] && dt <= best_dt) {
        // prefer the earlier frame on exact ties
        if (best == gt_times.size() || dt < best_dt) {
          best = j;
          best_dt = dt;
        }
      }
    };
    if (it != gt_times.begin()) consider(static_cast<std::size_t>(it - gt_times.begin()) - 1);
    if (it != gt_times.end()) consider(static_cast<std::size_t>(it - gt_times.begin()));
    if (best != gt_times.size()) {
      used[best] = true;
      out.estimated_index.push_back(i);
      out.ground_truth_index.push_back(best);
    }
  }
  return out;
}

namespace {

struct Matched {
  std::vector<Vec3> estimated;
  std::vector<Vec3> ground_truth;
};

Matched matched_positions(const Trajectory& estimated, const Trajectory& ground_truth,
                          double tolerance) {
  const Association assoc = associate(estimated, ground_truth, tolerance);
  if (assoc.size() < 3) {
    throw NoAssociation("only " + std::to_string(assoc.size()) +
                        " timestamp matches (need at least 3)");
  }
  Matched m;
  m.estimated.reserve(assoc.size());
  m.ground_truth.reserve(assoc.size());
  for (std::size_t k = 0; k < assoc.size(); ++k) {
    m.estimated.push_back(estimated[assoc.estimated_index[k]].translation());
    m.ground_truth.push_back(ground_truth[assoc.ground_truth_index[k]].translation());
  }
  return m;
}

}  // namespace

AteResult ate(const Trajectory& estimated, const Trajectory& ground_truth, double tolerance) {
  const Matched m = matched_positions(estimated, ground_truth, tolerance);
  AteResult result;
  result.alignment = umeyama_align(m.estimated, m.ground_truth);
  result.matched = m.estimated.size();
  result.per_pose_errors.reserve(m.estimated.size());
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < m.estimated.size(); ++i) {
    const double e = (result.alignment.apply(m.estimated[i]) - m.ground_truth[i]).norm();
    result.per_pose_errors.push_back(e);
    sum_sq += e * e;
  }
  result.rmse = std::sqrt(sum_sq / static_cast<double>(m.estimated.size()));
  result.completed = static_cast<double>(result.matched) >=
                     kCompletionFraction * static_cast<double>(ground_truth.size());
  return result;
}

RpeCdf rpe_distance_windows(const Trajectory& estimated, const Trajectory& ground_truth,
                            double window, double tolerance) {
  if (!(window > 0.0)) throw NoWindows("window length must be positive");
  const Matched m = matched_positions(estimated, ground_truth, tolerance);
  const std::size_t n = m.ground_truth.size();

  // cumulative path length along the associated ground-truth positions
  std::vector<double> dist(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    dist[i] = dist[i - 1] + (m.ground_truth[i] - m.ground_truth[i - 1]).norm();
  }
  if (dist.back() < window) {
    throw NoWindows("ground-truth path length " + std::to_string(dist.back()) +
                    " m is shorter than the window");
  }

  RpeCdf out;
  out.window_length = window;
  std::size_t end = 0;
  for (std::size_t start = 0; start < n; ++start) {
    end = std::max(end, start);
    while (end < n && dist[end] - dist[start] < window) ++end;
    if (end == n) break;
    const std::size_t count = end - start + 1;
    if (count < 3) continue;
    const std::span<const Vec3> est(m.estimated.data() + start, count);
    const std::span<const Vec3> gt(m.ground_truth.data() + start, count);
    try {
      const SimilarityTransform t = umeyama_align(est, gt);
      out.errors.push_back((t.apply(est.back()) - gt.back()).norm());
    } catch (const DegenerateInput&) {
      continue;
    }
  }
  if (out.errors.empty()) throw NoWindows("no window satisfied the alignment preconditions");

  std::sort(out.errors.begin(), out.errors.end());
  const double total = static_cast<double>(out.errors.size());
  out.cdf_points.reserve(out.errors.size());
  for (std::size_t i = 0; i < out.errors.size(); ++i) {
    out.cdf_points.emplace_back(out.errors[i], static_cast<double>(i + 1) / total);
  }
  return out;
}

double ate_per_distance(const Trajectory& estimated, const Trajectory& ground_truth,
                        double tolerance) {
  const double length = ground_truth.path_length();
  if (!(length > 0.0)) throw ZeroLength("ground-truth path length is zero");
  return 100.0 * ate(estimated, ground_truth, tolerance).rmse / length;
}

namespace {

std::vector<std::pair<double, std::size_t>> make_bins(double width, double max_value) {
  const auto count = static_cast<std::size_t>(std::floor(max_value / width)) + 1;
  std::vector<std::pair<double, std::size_t>> bins;
  bins.reserve(count);
  for (std::size_t i = 0; i < count; ++i) bins.emplace_back(static_cast<double>(i) * width, 0);
  return bins;
}

}  // namespace

KeyframeHistogram keyframe_velocity_histogram(const Trajectory& ground_truth,
                                              const std::vector<bool>& keyframe_flags,
                                              double translational_bin_width,
                                              double angular_bin_width) {
  if (keyframe_flags.size() != ground_truth.size()) {
    throw LengthMismatch("keyframe flags (" + std::to_string(keyframe_flags.size()) +
                         ") and trajectory (" + std::to_string(ground_truth.size()) +
                         ") lengths differ");
  }
  if (ground_truth.size() < 2) throw LengthMismatch("histogram needs at least 2 poses");
  if (!(translational_bin_width > 0.0) || !(angular_bin_width > 0.0)) {
    throw InvalidConfig("bin widths must be positive");
  }

  const std::size_t n = ground_truth.size();
  std::vector<double> v_trans(n, 0.0);
  std::vector<double> v_ang(n, 0.0);
  double max_trans = 0.0;
  double max_ang = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double dt = ground_truth[i].timestamp() - ground_truth[i - 1].timestamp();
    const Pose rel = relative(ground_truth[i - 1], ground_truth[i]);
    v_trans[i] = rel.translation().norm() / dt;
    v_ang[i] = rotation_angle(rel) / dt;
    max_trans = std::max(max_trans, v_trans[i]);
    max_ang = std::max(max_ang, v_ang[i]);
  }

  KeyframeHistogram h;
  h.translational_bin_width = translational_bin_width;
  h.angular_bin_width = angular_bin_width;
  h.translational_bins = make_bins(translational_bin_width, max_trans);
  h.angular_bins = make_bins(angular_bin_width, max_ang);
  for (std::size_t i = 1; i < n; ++i) {
    if (!keyframe_flags[i]) continue;
    ++h.translational_bins[static_cast<std::size_t>(v_trans[i] / translational_bin_width)].second;
    ++h.angular_bins[static_cast<std::size_t>(v_ang[i] / angular_bin_width)].second;
    ++h.total_keyframes;
  }
  return h;
}

}  // namespace rlvo

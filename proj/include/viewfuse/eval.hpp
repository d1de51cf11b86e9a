#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "viewfuse/geometry.hpp"
#include "viewfuse/scene.hpp"

namespace viewfuse {

struct Detection {
  double x = 0.0;  // cell coordinates
  double y = 0.0;
  double score = 0.0;
};

struct DetectionSet {
  std::vector<Detection> points;
};

inline constexpr double kDefaultClassificationThreshold = 0.4;

// Local 3x3 maxima with value >= threshold are refined to the value-weighted
// centroid of their 3x3 neighbourhood, then kept greedily in descending
// score order; a candidate closer than nms_radius to a kept point is dropped.
// Plateaus yield a single candidate.
DetectionSet extract_detections(const Array2& map, double threshold,
                                double nms_radius_cells);

struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<double> matched_distances;  // cells, each < t
};

// One-to-one assignment between detections and ground truth among pairs with
// distance < t. Maximises the number of matches, then minimises their total
// distance.
MatchResult match(const std::vector<Point2>& dets, const std::vector<Point2>& gts,
                  double t);
MatchResult match(const DetectionSet& dets, const std::vector<Point2>& gts, double t);

// Dense Hungarian solver on a square cost matrix (row-major, n x n). Returns
// the column assigned to each row.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n);

enum class MetricStatus {
  kDefined,
  // Denominator is zero but the frame is trivially perfect (no ground truth,
  // no detections); value is 1 by convention.
  kVacuous,
  // Denominator is zero and no sensible value exists; value is absent.
  kUndefined,
};

std::string to_string(MetricStatus s);

struct Metric {
  std::optional<double> value;
  MetricStatus status = MetricStatus::kUndefined;

  static Metric defined(double v) { return {v, MetricStatus::kDefined}; }
  static Metric vacuous() { return {1.0, MetricStatus::kVacuous}; }
  static Metric undefined() { return {std::nullopt, MetricStatus::kUndefined}; }
  double value_or(double v) const { return value.value_or(v); }
};

Metric moda(const MatchResult& mr);
Metric modp(const MatchResult& mr, double t);
struct Prf {
  Metric precision;
  Metric recall;
  Metric f1;
};
Prf prf(const MatchResult& mr);

struct MetricReport {
  Metric moda;
  Metric modp;
  Metric precision;
  Metric recall;
  Metric f1;
  double t_cells = 0.0;
  double t_m = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int frames = 0;
};

MetricReport report_from(const MatchResult& mr, double t_cells, double cell_size_m,
                         int frames = 1);
// Micro-average: pools counts and matched distances, then computes once.
MetricReport aggregate(const std::vector<MatchResult>& frames, double t_cells,
                       double cell_size_m);

struct RankResult {
  // ranks[d][m]: rank of method m on dataset d; 1 = highest score, ties share
  // the average of their positions.
  std::vector<std::vector<double>> ranks;
  std::vector<double> avg_rank;
};

// scores[d][m]: score of method m on dataset d.
RankResult rank_methods(const std::vector<std::vector<double>>& scores);

// Distance thresholds used by the public multi-view benchmarks, in metres.
struct ThresholdPreset {
  std::string name;
  double t_m;
};
const std::vector<ThresholdPreset>& threshold_presets();
std::optional<double> threshold_preset(const std::string& name);

struct EvalSettings {
  double threshold = kDefaultClassificationThreshold;
  // <= 0 means t / 2.
  double nms_radius_cells = 0.0;
  double t_cells = 4.0;
  double nms_radius() const { return nms_radius_cells > 0 ? nms_radius_cells : t_cells / 2; }
};

// Ground truth restricted to people whose cell lies inside the union of the
// given masks.
std::vector<Point2> visible_gt_cells(const std::vector<Point2>& people_world,
                                     const GroundGrid& grid,
                                     const std::vector<const FovMask*>& masks);

struct FrameResult {
  int frame = 0;
  std::vector<int> views;
  MatchResult match;
};

struct ReportContext {
  std::string config_hash;
  std::uint64_t dataset_seed = 0;
  std::string protocol;  // view subset protocol description
  EvalSettings settings;
  double cell_size_m = 0.0;
};

// CSV with one row per frame plus a final "all" row holding the aggregate.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<FrameResult>& frames,
                       const MetricReport& total, const ReportContext& ctx);
// Key/value summary text.
void write_summary(const std::filesystem::path& path, const MetricReport& total,
                   const ReportContext& ctx);
std::string format_metric(const Metric& m);

}  // namespace viewfuse

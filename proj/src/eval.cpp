#include "viewfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "viewfuse/dataset_io.hpp"
#include "viewfuse/error.hpp"

namespace viewfuse {

DetectionSet extract_detections(const Array2& map, double threshold,
                                double nms_radius_cells) {
  const int rows = map.rows;
  const int cols = map.cols;
  std::vector<Detection> cand;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = map.at(r, c);
      if (!(v >= threshold)) continue;
      bool peak = true;
      for (int dr = -1; dr <= 1 && peak; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
          const double n = map.at(rr, cc);
          // Earlier neighbours must be strictly lower so a plateau keeps
          // exactly one cell.
          const bool earlier = dr < 0 || (dr == 0 && dc < 0);
          if (earlier ? !(v > n) : !(v >= n)) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      double sw = 0.0, sx = 0.0, sy = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
          const double w = std::max(0.0, map.at(rr, cc));
          sw += w;
          sx += w * cc;
          sy += w * rr;
        }
      }
      cand.push_back({sx / sw, sy / sw, v});
    }
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  DetectionSet out;
  for (const auto& d : cand) {
    bool keep = true;
    for (const auto& k : out.points) {
      if (std::hypot(d.x - k.x, d.y - k.y) < nms_radius_cells) {
        keep = false;
        break;
      }
    }
    if (keep) out.points.push_back(d);
  }
  return out;
}

std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  if (n == 0) return {};
  if (static_cast<int>(cost.size()) != n * n) {
    throw ShapeError("solve_assignment: cost matrix must be n x n");
  }
  // Shortest augmenting path with potentials, 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

MatchResult match(const std::vector<Point2>& dets, const std::vector<Point2>& gts,
                  double t) {
  if (!(t > 0.0)) throw ConfigError("match: distance threshold must be > 0");
  const int nd = static_cast<int>(dets.size());
  const int ng = static_cast<int>(gts.size());
  MatchResult mr;
  if (nd == 0 || ng == 0) {
    mr.fp = nd;
    mr.fn = ng;
    return mr;
  }
  // Forbidden pairs and dummy slots cost more than any feasible total of real
  // distances, so the optimum first maximises the match count.
  const int n = std::max(nd, ng);
  const double big = (std::min(nd, ng) + 1) * t;
  std::vector<double> cost(static_cast<std::size_t>(n) * n, big);
  for (int i = 0; i < nd; ++i) {
    for (int j = 0; j < ng; ++j) {
      const double d = std::hypot(dets[i].x - gts[j].x, dets[i].y - gts[j].y);
      if (d < t) cost[static_cast<std::size_t>(i) * n + j] = d;
    }
  }
  const auto assign = solve_assignment(cost, n);
  for (int i = 0; i < nd; ++i) {
    const int j = assign[i];
    if (j >= ng) continue;
    const double d = std::hypot(dets[i].x - gts[j].x, dets[i].y - gts[j].y);
    if (d < t) {
      ++mr.tp;
      mr.matched_distances.push_back(d);
    }
  }
  mr.fp = nd - mr.tp;
  mr.fn = ng - mr.tp;
  return mr;
}

MatchResult match(const DetectionSet& dets, const std::vector<Point2>& gts, double t) {
  std::vector<Point2> pts;
  pts.reserve(dets.points.size());
  for (const auto& d : dets.points) pts.push_back({d.x, d.y});
  return match(pts, gts, t);
}

std::string to_string(MetricStatus s) {
  switch (s) {
    case MetricStatus::kDefined: return "defined";
    case MetricStatus::kVacuous: return "vacuous";
    case MetricStatus::kUndefined: return "undefined";
  }
  return "?";
}

Metric moda(const MatchResult& mr) {
  const int denom = mr.tp + mr.fn;
  if (denom == 0) return mr.fp == 0 ? Metric::vacuous() : Metric::undefined();
  return Metric::defined(1.0 - static_cast<double>(mr.fp + mr.fn) / denom);
}

Metric modp(const MatchResult& mr, double t) {
  if (mr.tp == 0 || mr.matched_distances.empty()) return Metric::undefined();
  double s = 0.0;
  for (double d : mr.matched_distances) s += 1.0 - d / t;
  return Metric::defined(s / static_cast<double>(mr.matched_distances.size()));
}

Prf prf(const MatchResult& mr) {
  Prf out;
  if (mr.tp + mr.fp == 0) {
    out.precision = mr.fn == 0 ? Metric::vacuous() : Metric::undefined();
  } else {
    out.precision = Metric::defined(static_cast<double>(mr.tp) / (mr.tp + mr.fp));
  }
  if (mr.tp + mr.fn == 0) {
    out.recall = mr.fp == 0 ? Metric::vacuous() : Metric::undefined();
  } else {
    out.recall = Metric::defined(static_cast<double>(mr.tp) / (mr.tp + mr.fn));
  }
  if (mr.tp == 0) {
    out.f1 = (mr.fp == 0 && mr.fn == 0) ? Metric::vacuous() : Metric::defined(0.0);
  } else {
    const double p = *out.precision.value;
    const double r = *out.recall.value;
    out.f1 = Metric::defined(2.0 * p * r / (p + r));
  }
  return out;
}

MetricReport report_from(const MatchResult& mr, double t_cells, double cell_size_m,
                         int frames) {
  MetricReport r;
  r.moda = moda(mr);
  r.modp = modp(mr, t_cells);
  const Prf p = prf(mr);
  r.precision = p.precision;
  r.recall = p.recall;
  r.f1 = p.f1;
  r.t_cells = t_cells;
  r.t_m = t_cells * cell_size_m;
  r.tp = mr.tp;
  r.fp = mr.fp;
  r.fn = mr.fn;
  r.frames = frames;
  return r;
}

MetricReport aggregate(const std::vector<MatchResult>& frames, double t_cells,
                       double cell_size_m) {
  if (frames.empty()) throw ConfigError("aggregate: no frames");
  MatchResult total;
  for (const auto& f : frames) {
    total.tp += f.tp;
    total.fp += f.fp;
    total.fn += f.fn;
    total.matched_distances.insert(total.matched_distances.end(),
                                   f.matched_distances.begin(),
                                   f.matched_distances.end());
  }
  return report_from(total, t_cells, cell_size_m, static_cast<int>(frames.size()));
}

RankResult rank_methods(const std::vector<std::vector<double>>& scores) {
  if (scores.empty() || scores.front().empty()) throw ConfigError("rank_methods: empty input");
  const std::size_t m = scores.front().size();
  RankResult out;
  out.avg_rank.assign(m, 0.0);
  for (const auto& row : scores) {
    if (row.size() != m) throw ShapeError("rank_methods: ragged score table");
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    std::vector<double> ranks(m, 0.0);
    for (std::size_t i = 0; i < m;) {
      std::size_t j = i;
      while (j + 1 < m && row[idx[j + 1]] == row[idx[i]]) ++j;
      const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = shared;
      i = j + 1;
    }
    for (std::size_t k = 0; k < m; ++k) out.avg_rank[k] += ranks[k];
    out.ranks.push_back(std::move(ranks));
  }
  for (auto& a : out.avg_rank) a /= static_cast<double>(scores.size());
  return out;
}

const std::vector<ThresholdPreset>& threshold_presets() {
  static const std::vector<ThresholdPreset> presets{
      {"cvcs", 1.0}, {"citystreet", 2.0}, {"wildtrack", 0.5}, {"multiviewx", 0.5}};
  return presets;
}

std::optional<double> threshold_preset(const std::string& name) {
  for (const auto& p : threshold_presets()) {
    if (p.name == name) return p.t_m;
  }
  return std::nullopt;
}

std::vector<Point2> visible_gt_cells(const std::vector<Point2>& people_world,
                                     const GroundGrid& grid,
                                     const std::vector<const FovMask*>& masks) {
  std::vector<Point2> out;
  for (const auto& p : people_world) {
    const Point2 c = grid.world_to_cell(p);
    if (!grid.contains_cell(c)) continue;
    const int col = static_cast<int>(std::lround(c.x));
    const int row = static_cast<int>(std::lround(c.y));
    for (const FovMask* m : masks) {
      if (m->at(row, col)) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

std::string format_metric(const Metric& m) {
  return m.value ? format_real(*m.value) : "undefined";
}

namespace {

std::string views_str(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

void write_row(std::ostream& os, const std::string& frame, const std::string& views,
               const MetricReport& r) {
  os << frame << ',' << views << ',' << r.tp << ',' << r.fp << ',' << r.fn << ','
     << format_metric(r.moda) << ',' << format_metric(r.modp) << ','
     << format_metric(r.precision) << ',' << format_metric(r.recall) << ','
     << format_metric(r.f1) << ',' << to_string(r.moda.status) << ','
     << to_string(r.modp.status) << '\n';
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<FrameResult>& frames,
                       const MetricReport& total, const ReportContext& ctx) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "# config_hash=" << ctx.config_hash << '\n';
  os << "frame,views,tp,fp,fn,moda,modp,precision,recall,f1,moda_status,modp_status\n";
  for (const auto& f : frames) {
    write_row(os, std::to_string(f.frame), views_str(f.views),
              report_from(f.match, ctx.settings.t_cells, ctx.cell_size_m));
  }
  write_row(os, "all", "", total);
  if (!os) throw IoError("write failed: " + path.string());
}

void write_summary(const std::filesystem::path& path, const MetricReport& total,
                   const ReportContext& ctx) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "config_hash = " << ctx.config_hash << '\n'
     << "dataset_seed = " << ctx.dataset_seed << '\n'
     << "protocol = " << ctx.protocol << '\n'
     << "classification_threshold = " << format_real(ctx.settings.threshold) << '\n'
     << "nms_radius_cells = " << format_real(ctx.settings.nms_radius()) << '\n'
     << "t_cells = " << format_real(total.t_cells) << '\n'
     << "t_m = " << format_real(total.t_m) << '\n'
     << "frames = " << total.frames << '\n'
     << "tp = " << total.tp << '\n'
     << "fp = " << total.fp << '\n'
     << "fn = " << total.fn << '\n'
     << "moda = " << format_metric(total.moda) << '\n'
     << "modp = " << format_metric(total.modp) << '\n'
     << "precision = " << format_metric(total.precision) << '\n'
     << "recall = " << format_metric(total.recall) << '\n'
     << "f1 = " << format_metric(total.f1) << '\n'
     << "moda_status = " << to_string(total.moda.status) << '\n'
     << "modp_status = " << to_string(total.modp.status) << '\n'
     << "precision_status = " << to_string(total.precision.status) << '\n'
     << "recall_status = " << to_string(total.recall.status) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace viewfuse

// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance [--only N]... [--seeds K] [--workers W]
//
// Exit status is 0 when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "viewfuse/config.hpp"
#include "viewfuse/eval.hpp"
#include "viewfuse/gradsuite.hpp"
#include "viewfuse/log.hpp"
#include "viewfuse/model.hpp"
#include "viewfuse/parallel.hpp"
#include "viewfuse/scene.hpp"
#include "viewfuse/training.hpp"

namespace fs = std::filesystem;
using namespace viewfuse;

namespace {

struct Options {
  int seeds = 5;
  int workers = 1;
  fs::path config_dir = VIEWFUSE_CONFIG_DIR;
  std::string cli = VIEWFUSE_CLI_PATH;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- 1: gradient suite --------------------------------------------------------

Outcome gradient_suite(const Options&) {
  Outcome o{true, ""};
  double worst_time = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto t0 = Clock::now();
    const auto entries = run_gradient_suite(seed, true);
    const double dt = seconds_since(t0);
    worst_time = std::max(worst_time, dt);
    double op_worst = 0.0, model_worst = 0.0;
    for (const auto& e : entries) {
      (e.model_level ? model_worst : op_worst) =
          std::max(e.model_level ? model_worst : op_worst, e.report.max_rel_error);
      if (!e.report.pass) {
        o.pass = false;
        std::printf("  seed %llu: %s failed, max rel %.3e (tol %.0e), worst %s[%zu] a=%.6e n=%.6e\n",
                    static_cast<unsigned long long>(seed), e.name.c_str(),
                    e.report.max_rel_error, e.tolerance, e.report.worst_leaf.c_str(),
                    e.report.worst_index, e.report.worst_analytic, e.report.worst_numeric);
      }
    }
    std::printf("  seed %llu: %zu checks, worst op rel %.2e, worst model rel %.2e, %.1f s\n",
                static_cast<unsigned long long>(seed), entries.size(), op_worst, model_worst, dt);
  }
  if (worst_time >= 120.0) o.pass = false;
  o.detail = "3 seeded suites, slowest " + fmt("%.1f", worst_time) + " s (limit 120 s)";
  return o;
}

// ---- 2: weight normalization invariants ----------------------------------------

Outcome normalization_invariants(const Options&) {
  Rng rng(20240601);
  int violations = 0;
  double worst_oracle = 0.0;
  std::size_t cells_checked = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const int n = uniform_int(rng, 1, 6);
    const int h = uniform_int(rng, 1, 9), w = uniform_int(rng, 1, 9);
    const std::size_t cells = static_cast<std::size_t>(h) * w;
    // Every fourth instance uses unit raw weights; sigma spans 1e-9 .. 1e-1.
    const bool unit = inst % 4 == 0;
    const double sigma = std::pow(10.0, uniform(rng, -9.0, -1.0));
    std::vector<std::vector<double>> raw(n, std::vector<double>(cells));
    std::vector<std::vector<double>> mask(n, std::vector<double>(cells));
    for (int i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < cells; ++c) {
        mask[i][c] = uniform01(rng) < 0.6 ? 1.0 : 0.0;
        if (unit) {
          raw[i][c] = 1.0;
        } else {
          const double u = uniform01(rng);
          // Exact zeros, values near sigma, and ordinary magnitudes.
          raw[i][c] = u < 0.2 ? 0.0 : u < 0.4 ? sigma * uniform(rng, 0.0, 10.0)
                                               : std::pow(10.0, uniform(rng, -4.0, 1.0));
        }
      }
    }
    std::vector<Tensor> raw_t, mask_t;
    for (int i = 0; i < n; ++i) {
      raw_t.push_back(Tensor::from({1, h, w}, raw[i]));
      mask_t.push_back(Tensor::from({1, h, w}, mask[i]));
    }
    const WeightMaps wm = normalize_weights(raw_t, mask_t, sigma);
    for (std::size_t c = 0; c < cells; ++c) {
      ++cells_checked;
      double s_raw = 0.0, s_w = 0.0;
      int covering = 0;
      for (int i = 0; i < n; ++i) {
        s_raw += raw[i][c] * mask[i][c];
        covering += mask[i][c] > 0;
      }
      bool bad = false;
      for (int i = 0; i < n; ++i) {
        const double wv = wm.normalized[i].values()[c];
        if (!std::isfinite(wv)) bad = true;
        if (mask[i][c] == 0.0 && wv != 0.0) bad = true;  // exactly zero off-mask
        const double oracle = raw[i][c] * mask[i][c] / (s_raw + sigma);
        worst_oracle = std::max(worst_oracle, std::abs(wv - oracle) / std::max(oracle, 1e-300));
        if (std::abs(wv - oracle) > 1e-12 * std::max(oracle, 1e-300)) bad = true;
        s_w += wv;
      }
      if (covering == 0 || s_raw == 0.0) {
        if (s_w != 0.0) bad = true;  // zero coverage: finite zeros
      } else {
        if (!(s_w > 0.0 && s_w <= 1.0)) bad = true;
        if (s_raw >= 1e3 * sigma && s_w < 1.0 - 1e-3) bad = true;
        if (unit) {
          const double expect = covering / (covering + sigma);
          if (std::abs(s_w - expect) > 1e-12) bad = true;
        }
      }
      if (bad) ++violations;
    }
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = "1000 instances, " + std::to_string(cells_checked) + " cells, " +
             std::to_string(violations) + " violations, worst rel deviation from scalar oracle " +
             fmt("%.1e", worst_oracle);
  return o;
}

// ---- 3: matching and metric oracle ---------------------------------------------

// Exhaustive search over all one-to-one assignments: most matches first,
// then least total distance.
std::pair<int, double> brute_force_match(const std::vector<Point2>& d,
                                         const std::vector<Point2>& g, double t) {
  const int n = static_cast<int>(d.size()), m = static_cast<int>(g.size());
  const int k = std::max(n, m);
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  int best_count = 0;
  double best_sum = 0.0;
  do {
    int count = 0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const int j = perm[i];
      if (j >= m) continue;
      const double dist = std::hypot(d[i].x - g[j].x, d[i].y - g[j].y);
      if (dist < t) {
        ++count;
        sum += dist;
      }
    }
    if (count > best_count || (count == best_count && sum < best_sum)) {
      best_count = count;
      best_sum = sum;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_count, best_sum};
}

Outcome metric_oracle(const Options&) {
  Rng rng(777);
  int mismatches = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const int n = uniform_int(rng, 0, 6), m = uniform_int(rng, 0, 6);
    const double t = uniform(rng, 0.5, 4.0);
    std::vector<Point2> d(n), g(m);
    for (auto& p : d) p = {uniform(rng, 0, 8), uniform(rng, 0, 8)};
    for (auto& p : g) p = {uniform(rng, 0, 8), uniform(rng, 0, 8)};
    const MatchResult mr = match(d, g, t);
    const auto [count, sum] = brute_force_match(d, g, t);
    const double got = std::accumulate(mr.matched_distances.begin(), mr.matched_distances.end(), 0.0);
    const bool ok = mr.tp == count && mr.fp == n - count && mr.fn == m - count &&
                    std::abs(got - sum) <= 1e-9 &&
                    std::all_of(mr.matched_distances.begin(), mr.matched_distances.end(),
                                [&](double x) { return x < t; });
    if (!ok) {
      ++mismatches;
      std::printf("  instance %d: match tp %d sum %.12g, brute force %d sum %.12g\n", inst, mr.tp,
                  got, count, sum);
    }
  }

  // Hand cases. Ten GT points 10 cells apart; eight hit exactly, one far miss.
  std::vector<Point2> gts, dets;
  for (int i = 0; i < 10; ++i) gts.push_back({10.0 * i, 0.0});
  for (int i = 0; i < 8; ++i) dets.push_back(gts[i]);
  dets.push_back({500.0, 500.0});
  const MatchResult a = match(dets, gts, 4.0);
  const Prf pa = prf(a);
  const bool moda_ok = a.tp == 8 && a.fp == 1 && a.fn == 2 && moda(a).value &&
                       std::abs(*moda(a).value - 0.700) < 1e-12;
  const double p = 8.0 / 9.0, r = 0.8;
  const bool prf_ok = std::abs(pa.precision.value_or(-1) - p) < 1e-12 &&
                      std::abs(pa.recall.value_or(-1) - r) < 1e-12 &&
                      std::abs(pa.f1.value_or(-1) - 2 * p * r / (p + r)) < 1e-12;
  // Matched distances {0, t/2}.
  const double t = 2.0;
  const MatchResult b = match(std::vector<Point2>{{0, 0}, {20 + t / 2, 0}},
                              std::vector<Point2>{{0, 0}, {20, 0}}, t);
  const bool modp_ok = b.tp == 2 && modp(b, t).value && std::abs(*modp(b, t).value - 0.75) < 1e-12;

  Outcome o;
  o.pass = mismatches == 0 && moda_ok && prf_ok && modp_ok;
  o.detail = "500 random instances, " + std::to_string(mismatches) + " mismatches; MODA " +
             fmt("%.3f", moda(a).value_or(NAN)) + " (0.700), MODP " +
             fmt("%.3f", modp(b, t).value_or(NAN)) + " (0.75), P/R/F1 " +
             (prf_ok ? "ok" : "wrong");
  return o;
}

// ---- 4: rank reproduction ------------------------------------------------------

Outcome rank_reproduction(const Options&) {
  // F1 columns, methods in table order: MVDet, SHOT, MVDeTr, 3DROM, ours.
  const std::vector<std::vector<double>> f1 = {{60.9, 67.0, 61.0, 55.1, 68.4},
                                               {68.4, 71.8, 75.2, 79.2, 76.0}};
  const RankResult r = rank_methods(f1);
  const std::vector<double> cvcs{4, 2, 3, 5, 1}, city{5, 4, 3, 1, 2};
  const std::vector<double> avg{4.5, 3, 3, 3, 1.5};
  const bool ok = r.ranks[0] == cvcs && r.ranks[1] == city && r.avg_rank == avg;
  auto list = [](const std::vector<double>& v) {
    std::string s = "{";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt("%g", v[i]);
    return s + "}";
  };
  return {ok, "ranks " + list(r.ranks[0]) + " / " + list(r.ranks[1]) + ", avg rank of ours " +
                  fmt("%g", r.avg_rank[4])};
}

// ---- shared experiment plumbing -------------------------------------------------

ExperimentConfig load(const Options& opt, const std::string& name, std::uint64_t seed) {
  ExperimentConfig cfg = load_experiment(opt.config_dir / name);
  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

struct TrainedModel {
  Dataset ds;
  DataSplit split;
  ParamSet params;
  std::vector<LossRecord> log;
  MetricReport val;
};

TrainedModel train_experiment(const ExperimentConfig& cfg, int workers) {
  TrainedModel m;
  m.ds = generate_dataset(cfg.scene, cfg.dataset.total(), cfg.dataset_seed(), workers);
  m.split = split_frames(cfg.dataset.total(), cfg.dataset.val_frames);
  Trainer trainer(m.ds, m.split, cfg.model, cfg.train, cfg.eval.settings, workers);
  m.params = trainer.train(init_model_params(cfg.model, cfg.init_seed()));
  m.log = trainer.log();
  m.val = evaluate_model(m.ds, m.split.val, m.params, cfg.model, trainer.geometry(),
                         cfg.eval.settings, 0, 1, derive_seed(cfg.seed, 6), workers)
              .total;
  return m;
}

bool same_log(const std::vector<LossRecord>& a, const std::vector<LossRecord>& b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](const LossRecord& x, const LossRecord& y) {
           return x.stage == y.stage && x.step == y.step && x.loss_view == y.loss_view &&
                  x.loss_scene == y.loss_scene && x.loss_total == y.loss_total && x.lr == y.lr;
         });
}

// ---- 5: toy overfit -------------------------------------------------------------

Outcome toy_overfit(const Options& opt) {
  const ExperimentConfig cfg = load(opt, "toy.json", 1);
  const auto t0 = Clock::now();
  const TrainedModel a = train_experiment(cfg, opt.workers);
  const double dt = seconds_since(t0);
  std::printf("  run 1 (%d workers): MODA %.4f F1 %.4f P %.4f R %.4f, %.0f s\n", opt.workers,
              a.val.moda.value_or(NAN), a.val.f1.value_or(NAN), a.val.precision.value_or(NAN),
              a.val.recall.value_or(NAN), dt);
  // A second run with a different worker count must reproduce the first.
  const int other = opt.workers == 1 ? 2 : 1;
  const TrainedModel b = train_experiment(cfg, other);
  const bool deterministic = same_log(a.log, b.log) && a.params == b.params &&
                             a.val.tp == b.val.tp && a.val.fp == b.val.fp && a.val.fn == b.val.fn;
  std::printf("  run 2 (%d workers): %s\n", other,
              deterministic ? "bit-identical loss log, parameters and counts" : "DIFFERS");
  const double moda_v = a.val.moda.value_or(-1e9), f1_v = a.val.f1.value_or(-1e9);
  Outcome o;
  o.pass = moda_v >= 0.85 && f1_v >= 0.90 && deterministic && dt < 1800.0;
  o.detail = "val MODA " + fmt("%.4f", moda_v) + " (>= 0.85), F1 " + fmt("%.4f", f1_v) +
             " (>= 0.90) at t = " + fmt("%g", a.val.t_cells) + " cells, " + fmt("%.0f", dt) +
             " s, " + (deterministic ? "deterministic" : "NOT deterministic");
  return o;
}

// ---- 6: fusion ablation -------------------------------------------------------------

Outcome ablation(const Options& opt) {
  const std::vector<FusionMode> modes{FusionMode::kSupervisedWeighted,
                                      FusionMode::kUnsupervisedWeighted,
                                      FusionMode::kMaskedAverage};
  std::vector<std::vector<double>> f1(modes.size());
  for (int s = 1; s <= opt.seeds; ++s) {
    std::string line = "  seed " + std::to_string(s) + ":";
    for (std::size_t m = 0; m < modes.size(); ++m) {
      ExperimentConfig cfg = load(opt, "ablation.json", s);
      cfg.model.fusion_mode = modes[m];
      const TrainedModel r = train_experiment(cfg, opt.workers);
      f1[m].push_back(r.val.f1.value_or(0.0));
      line += " " + to_string(modes[m]) + " F1 " + fmt("%.4f", f1[m].back());
    }
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  }
  const double sup = median(f1[0]), unsup = median(f1[1]), avg = median(f1[2]);
  Outcome o;
  o.pass = sup >= unsup && sup - avg >= 0.02;
  o.detail = "median F1 over " + std::to_string(opt.seeds) + " seeds: supervised " +
             fmt("%.4f", sup) + ", unsupervised " + fmt("%.4f", unsup) + ", masked average " +
             fmt("%.4f", avg) + " (need sup >= unsup and sup - avg >= 0.02; gap " +
             fmt("%+.4f", sup - avg) + ")";
  return o;
}

// ---- 7: variable view count -----------------------------------------------------

Outcome view_counts(const Options& opt) {
  std::vector<int> counts;
  std::vector<std::vector<double>> precision, f1;
  for (int s = 1; s <= opt.seeds; ++s) {
    const ExperimentConfig cfg = load(opt, "viewcount.json", s);
    counts = cfg.eval.view_counts;
    precision.resize(counts.size());
    f1.resize(counts.size());
    const TrainedModel r = train_experiment(cfg, opt.workers);
    const SceneGeometry geom = SceneGeometry::build(r.ds.model_cameras, r.ds.scene.grid, cfg.model);
    std::string line = "  seed " + std::to_string(s) + ":";
    for (std::size_t c = 0; c < counts.size(); ++c) {
      const MetricReport rep = evaluate_model(r.ds, r.split.val, r.params, cfg.model, geom,
                                              cfg.eval.settings, counts[c], cfg.eval.resamples,
                                              derive_seed(cfg.seed, 6), opt.workers)
                                   .total;
      precision[c].push_back(rep.precision.value_or(0.0));
      f1[c].push_back(rep.f1.value_or(0.0));
      line += " k=" + std::to_string(counts[c]) + " P " + fmt("%.4f", precision[c].back()) +
              " F1 " + fmt("%.4f", f1[c].back());
    }
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  }
  std::vector<double> mp, mf;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    mp.push_back(median(precision[c]));
    mf.push_back(median(f1[c]));
  }
  const bool monotone = std::is_sorted(mp.begin(), mp.end());
  const double spread = *std::max_element(mf.begin(), mf.end()) - *std::min_element(mf.begin(), mf.end());
  std::string detail = "median precision";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    detail += " " + std::to_string(counts[c]) + ":" + fmt("%.4f", mp[c]);
  }
  detail += monotone ? " (non-decreasing)" : " (DECREASES)";
  detail += ", median F1 spread " + fmt("%.4f", spread) + " (<= 0.10)";
  return {monotone && spread <= 0.10, detail};
}

// ---- 8: adaptation direction ------------------------------------------------------

Outcome adaptation(const Options& opt) {
  std::vector<double> ft, ftda;
  for (int s = 1; s <= opt.seeds; ++s) {
    const ExperimentConfig cfg = load(opt, "adapt.json", s);
    const AdaptExperiment& ax = *cfg.adapt;
    const TrainedModel src = train_experiment(cfg, opt.workers);
    const Dataset target =
        generate_dataset(ax.target_scene, ax.target_train_frames + ax.target_test_frames,
                         cfg.target_dataset_seed(), opt.workers);
    const DataSplit ts = split_frames(static_cast<int>(target.frames.size()), ax.target_test_frames);
    const auto [labeled, unlabeled] = split_labeled(ts.train, ax.adapt.target_label_fraction);
    const SceneGeometry geom = SceneGeometry::build(target.model_cameras, target.scene.grid, cfg.model);
    auto target_moda = [&](const ParamSet& p) {
      return evaluate_model(target, ts.val, p, cfg.model, geom, cfg.eval.settings, 0, 1,
                            derive_seed(cfg.seed, 6), opt.workers)
          .total.moda.value_or(-1e9);
    };
    AdaptConfig plain = ax.adapt;
    plain.adversarial_loss_weight = 0.0;
    const double before = target_moda(src.params);
    const double m_ft = target_moda(
        adapt(src.ds, src.split.train, target, labeled, unlabeled, src.params, cfg.model, cfg.train,
              plain)
            .params);
    const double m_da = target_moda(
        adapt(src.ds, src.split.train, target, labeled, unlabeled, src.params, cfg.model, cfg.train,
              ax.adapt)
            .params);
    ft.push_back(m_ft);
    ftda.push_back(m_da);
    std::printf("  seed %d: target MODA source-only %.4f, ft %.4f, ft+da %.4f\n", s, before, m_ft,
                m_da);
    std::fflush(stdout);
  }
  const double a = median(ft), b = median(ftda);
  return {b >= a, "median target MODA over " + std::to_string(opt.seeds) + " seeds: ft " +
                      fmt("%.4f", a) + ", ft+da " + fmt("%.4f", b) + " (need ft+da >= ft)"};
}

// ---- 9: determinism of the command-line tool -------------------------------------

bool files_equal(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::equal(std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>(),
                    std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>());
}

// Every regular file under a exists under b with identical bytes, and vice versa.
bool trees_equal(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::set<fs::path> ra, rb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) ra.insert(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) rb.insert(fs::relative(e.path(), b));
  }
  files = ra.size();
  if (ra != rb) return false;
  return std::all_of(ra.begin(), ra.end(), [&](const fs::path& p) { return files_equal(a / p, b / p); });
}

int run(const std::string& cmd) {
  std::printf("  $ %s\n", cmd.c_str());
  std::fflush(stdout);
  return std::system((cmd + " > /dev/null").c_str());
}

Outcome determinism(const Options& opt) {
  const fs::path root = fs::temp_directory_path() / ("viewfuse_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  // A shortened toy experiment keeps the check fast.
  ExperimentConfig cfg = load(opt, "toy.json", 11);
  cfg.dataset.train_frames = 16;
  cfg.dataset.val_frames = 4;
  cfg.train.epochs_stage1 = 1;
  cfg.train.epochs_stage2 = 1;
  cfg.train.epochs_stage3 = 1;
  const fs::path conf = root / "config.json";
  std::ofstream(conf) << serialize(cfg);
  const std::string base = opt.cli + " --config " + conf.string();

  bool ok = true;
  for (const char* d : {"sim_a", "sim_b", "train_a", "train_b"}) fs::create_directories(root / d);
  ok &= run(base + " --workers 1 --out " + (root / "sim_a").string() + " simulate") == 0;
  ok &= run(base + " --workers 3 --out " + (root / "sim_b").string() + " simulate") == 0;
  ok &= run(base + " --workers 1 --out " + (root / "train_a").string() + " train") == 0;
  ok &= run(base + " --workers 3 --out " + (root / "train_b").string() + " train") == 0;
  if (!ok) return {false, "command-line tool failed"};
  std::size_t sim_files = 0;
  const bool sim_same = trees_equal(root / "sim_a", root / "sim_b", sim_files);
  const bool log_same = files_equal(root / "train_a" / "loss.csv", root / "train_b" / "loss.csv");
  const bool ckpt_same =
      files_equal(root / "train_a" / "checkpoint.vwf", root / "train_b" / "checkpoint.vwf");
  std::error_code ec;
  fs::remove_all(root, ec);
  return {sim_same && log_same && ckpt_same,
          std::string("simulate: ") + std::to_string(sim_files) + " files " +
              (sim_same ? "byte-identical" : "DIFFER") + "; train: loss.csv " +
              (log_same ? "identical" : "DIFFERS") + ", checkpoint " +
              (ckpt_same ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Options opt;
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--seeds", opt.seeds, "Seeds for the median-based criteria")->check(CLI::PositiveNumber);
  app.add_option("--workers", opt.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config-dir", opt.config_dir, "Directory with the experiment configs");
  app.add_option("--cli", opt.cli, "Path of the viewfuse executable");
  CLI11_PARSE(app, argc, argv);
  set_log_quiet(true);

  const std::vector<std::pair<const char*, std::function<Outcome(const Options&)>>> criteria = {
      {"gradient suite", gradient_suite},
      {"weight normalization invariants", normalization_invariants},
      {"matching and metric oracle", metric_oracle},
      {"rank reproduction", rank_reproduction},
      {"toy overfit", toy_overfit},
      {"fusion ablation directions", ablation},
      {"variable view count", view_counts},
      {"adaptation direction", adaptation},
      {"determinism", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    std::printf("criterion %d (%s)\n", id, criteria[i].first);
    std::fflush(stdout);
    Outcome o;
    try {
      o = criteria[i].second(opt);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}

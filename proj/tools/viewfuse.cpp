// viewfuse command-line driver: simulate, train, eval, adapt, gradcheck, render.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "viewfuse/archive.hpp"
#include "viewfuse/config.hpp"
#include "viewfuse/dataset_io.hpp"
#include "viewfuse/error.hpp"
#include "viewfuse/eval.hpp"
#include "viewfuse/gradsuite.hpp"
#include "viewfuse/log.hpp"
#include "viewfuse/model.hpp"
#include "viewfuse/parallel.hpp"
#include "viewfuse/training.hpp"

namespace fs = std::filesystem;
using namespace viewfuse;

namespace {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kIo = 3,
  kDivergence = 4,
  kCheckpoint = 5,
  kGradcheckFailed = 6,
};

// Stream offsets of derive_seed(seed, k) used only by the driver.
constexpr std::uint64_t kEvalStream = 6;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = 0;
};

// Without --config (allowed for gradcheck only) the defaults are used unvalidated.
ExperimentConfig load_config(const Globals& g, bool required = true) {
  ExperimentConfig cfg;
  if (!g.config.empty()) {
    cfg = load_experiment(g.config);
  } else if (required) {
    throw ConfigError("--config is required for this command");
  }
  if (g.seed) cfg.set_seed(*g.seed);
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (!g.config.empty()) cfg.validate();
  return cfg;
}

int workers_of(const Globals& g) { return g.workers > 0 ? g.workers : default_workers(); }

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path out = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

// config.json and run.txt let every output be regenerated from the directory.
void write_provenance(const fs::path& out, const ExperimentConfig& cfg,
                      const std::string& command) {
  // Written without output_dir so runs into different directories compare equal.
  auto j = to_json(cfg);
  j.erase("output_dir");
  write_text(out / "config.json", j.dump(2) + "\n");
  std::ostringstream run;
  run << "command = " << command << "\n"
      << "config_hash = " << config_hash(cfg) << "\n"
      << "seed = " << cfg.seed << "\n";
  write_text(out / "run.txt", run.str());
}

Dataset source_dataset(const ExperimentConfig& cfg, int workers) {
  if (!cfg.dataset.path.empty()) return load_external_dataset(cfg.dataset.path);
  return generate_dataset(cfg.scene, cfg.dataset.total(), cfg.dataset_seed(), workers);
}

DataSplit source_split(const ExperimentConfig& cfg, const Dataset& ds) {
  const int n = static_cast<int>(ds.frames.size());
  if (n <= cfg.dataset.val_frames) {
    throw ConfigError("dataset has " + std::to_string(n) + " frames, not more than val_frames = " +
                      std::to_string(cfg.dataset.val_frames));
  }
  return split_frames(n, cfg.dataset.val_frames);
}

ReportContext context_for(const ExperimentConfig& cfg, const Dataset& ds,
                          const std::string& protocol) {
  ReportContext ctx;
  ctx.config_hash = config_hash(cfg);
  ctx.dataset_seed = ds.seed;
  ctx.protocol = protocol;
  ctx.settings = cfg.eval.settings;
  ctx.cell_size_m = ds.scene.grid.cell_size_m;
  return ctx;
}

std::string metric_row(const MetricReport& r) {
  std::ostringstream s;
  s << r.frames << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << format_metric(r.moda)
    << ',' << format_metric(r.modp) << ',' << format_metric(r.precision) << ','
    << format_metric(r.recall) << ',' << format_metric(r.f1);
  return s.str();
}
constexpr const char* kMetricHeader = "frames,tp,fp,fn,moda,modp,precision,recall,f1";

std::string protocol_for(int k, int n_views, int resamples) {
  if (k == 0 || k == n_views) return "all " + std::to_string(n_views) + " views";
  return std::to_string(resamples) + " random subsets of " + std::to_string(k) + " of " +
         std::to_string(n_views) + " views per frame; GT limited to the union of their masks";
}

std::string short_metric(const Metric& m) {
  if (!m.value) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *m.value);
  return buf;
}

void print_report(const std::string& label, const MetricReport& r) {
  std::printf("%-12s MODA %s  MODP %s  P %s  R %s  F1 %s  (tp %d fp %d fn %d)\n", label.c_str(),
              short_metric(r.moda).c_str(), short_metric(r.modp).c_str(),
              short_metric(r.precision).c_str(), short_metric(r.recall).c_str(),
              short_metric(r.f1).c_str(), r.tp, r.fp, r.fn);
}

// ---- simulate ---------------------------------------------------------------

int cmd_simulate(const Globals& g, std::optional<int> frames) {
  ExperimentConfig cfg = load_config(g);
  if (!cfg.dataset.path.empty()) throw ConfigError("simulate: dataset.path is set; nothing to simulate");
  const int n = frames.value_or(cfg.dataset.total());
  if (n <= 0) throw ConfigError("simulate: --frames must be positive");
  const fs::path out = prepare_out(cfg);
  const Dataset ds = generate_dataset(cfg.scene, n, cfg.dataset_seed(), workers_of(g));
  export_dataset(ds, out / "dataset");
  if (cfg.adapt && cfg.adapt->target_path.empty()) {
    const int nt = cfg.adapt->target_train_frames + cfg.adapt->target_test_frames;
    const Dataset target =
        generate_dataset(cfg.adapt->target_scene, nt, cfg.target_dataset_seed(), workers_of(g));
    export_dataset(target, out / "target_dataset");
  }
  write_provenance(out, cfg, "simulate");
  std::printf("wrote %d frames to %s\n", n, (out / "dataset").string().c_str());
  return kOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Globals& g) {
  ExperimentConfig cfg = load_config(g);
  const fs::path out = prepare_out(cfg);
  const int workers = workers_of(g);
  const std::string hash = config_hash(cfg);
  const Dataset ds = source_dataset(cfg, workers);
  const DataSplit split = source_split(cfg, ds);

  Trainer trainer(ds, split, cfg.model, cfg.train, cfg.eval.settings, workers);
  ParamSet params = init_model_params(cfg.model, cfg.init_seed());
  write_provenance(out, cfg, "train");
  for (int s : cfg.train.stages) {
    if (s == 1) params = trainer.stage1_pretrain(std::move(params));
    if (s == 2) {
      if (cfg.model.effective_lambda() <= 0.0) {
        log_info("stage 2 skipped: fusion mode puts no loss on single-view predictions");
        continue;
      }
      params = trainer.stage2_train_single_view(std::move(params));
    }
    if (s == 3) params = trainer.stage3_train_joint(std::move(params));
    save_checkpoint(out / ("checkpoint_stage" + std::to_string(s) + ".vwf"), params, cfg.model,
                    hash);
    write_loss_csv(out / "loss.csv", trainer.log(), hash);
  }
  save_checkpoint(out / "checkpoint.vwf", params, cfg.model, hash);
  write_loss_csv(out / "loss.csv", trainer.log(), hash);

  {
    std::ostringstream v;
    v << "# config_hash=" << hash << "\nstage,epoch," << kMetricHeader << "\n";
    for (const auto& rec : trainer.validations()) {
      v << rec.stage << ',' << rec.epoch << ',' << metric_row(rec.report) << "\n";
    }
    write_text(out / "validation.csv", v.str());
  }

  const EvalResult res =
      evaluate_model(ds, split.val, params, cfg.model, trainer.geometry(), cfg.eval.settings, 0, 1,
                     derive_seed(cfg.seed, kEvalStream), workers);
  const auto ctx =
      context_for(cfg, ds, protocol_for(0, static_cast<int>(ds.model_cameras.size()), 1));
  write_metrics_csv(out / "val_metrics.csv", res.frames, res.total, ctx);
  write_summary(out / "val_summary.txt", res.total, ctx);
  print_report("validation", res.total);
  if (trainer.best_epoch()) {
    std::printf("best stage-3 epoch %d (F1 %.4f)\n", *trainer.best_epoch(), trainer.best_val_f1());
  }
  return kOk;
}

// ---- eval -------------------------------------------------------------------

std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const int k = std::stoi(item, &used);
      if (used != item.size() || k < 0) throw std::invalid_argument(item);
      out.push_back(k);
    } catch (const std::exception&) {
      throw ConfigError("--view-counts: bad entry '" + item + "'");
    }
  }
  return out;
}

std::vector<int> frames_for(const std::string& which, const DataSplit& split) {
  if (which == "val") return split.val;
  if (which == "train") return split.train;
  std::vector<int> all = split.train;
  all.insert(all.end(), split.val.begin(), split.val.end());
  std::sort(all.begin(), all.end());
  return all;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& counts_text,
             const std::string& which) {
  ExperimentConfig cfg = load_config(g);
  if (!counts_text.empty()) cfg.eval.view_counts = parse_counts(counts_text);
  const int workers = workers_of(g);
  const Dataset ds = source_dataset(cfg, workers);
  const int n_views = static_cast<int>(ds.model_cameras.size());
  for (int k : cfg.eval.view_counts) {
    if (k > n_views) {
      throw ConfigError("view count " + std::to_string(k) + " exceeds the " +
                        std::to_string(n_views) + " available views");
    }
  }
  const fs::path out = prepare_out(cfg);
  const ParamSet params = load_checkpoint(checkpoint, cfg.model);
  const DataSplit split = source_split(cfg, ds);
  const std::vector<int> frames = frames_for(which, split);
  const SceneGeometry geometry = SceneGeometry::build(ds.model_cameras, ds.scene.grid, cfg.model);
  const std::string hash = config_hash(cfg);
  write_provenance(out, cfg, "eval");

  std::vector<int> counts = cfg.eval.view_counts;
  if (counts.empty()) counts.push_back(0);
  std::ostringstream sweep;
  sweep << "# config_hash=" << hash << "\nviews," << kMetricHeader << "\n";
  for (int k : counts) {
    const int resamples = (k == 0 || k == n_views) ? 1 : cfg.eval.resamples;
    const EvalResult res = evaluate_model(ds, frames, params, cfg.model, geometry,
                                          cfg.eval.settings, k, resamples,
                                          derive_seed(cfg.seed, kEvalStream), workers);
    const std::string tag = k == 0 ? "all" : std::to_string(k);
    const auto ctx = context_for(cfg, ds, protocol_for(k, n_views, resamples));
    write_metrics_csv(out / ("metrics_views_" + tag + ".csv"), res.frames, res.total, ctx);
    write_summary(out / ("summary_views_" + tag + ".txt"), res.total, ctx);
    sweep << (k == 0 ? n_views : k) << ',' << metric_row(res.total) << "\n";
    print_report(tag + " views", res.total);
  }
  write_text(out / "sweep.csv", sweep.str());
  return kOk;
}

// ---- adapt ------------------------------------------------------------------

int cmd_adapt(const Globals& g, const std::string& checkpoint, const std::string& target_dir) {
  ExperimentConfig cfg = load_config(g);
  if (!cfg.adapt) throw ConfigError("adapt: configuration has no \"adapt\" section");
  const AdaptExperiment& ax = *cfg.adapt;
  const int workers = workers_of(g);
  const fs::path out = prepare_out(cfg);
  const std::string hash = config_hash(cfg);

  const Dataset source = source_dataset(cfg, workers);
  const DataSplit src_split = source_split(cfg, source);
  std::string tpath = target_dir.empty() ? ax.target_path : target_dir;
  Dataset target;
  if (!tpath.empty()) {
    target = load_external_dataset(tpath);
  } else {
    target = generate_dataset(ax.target_scene, ax.target_train_frames + ax.target_test_frames,
                              cfg.target_dataset_seed(), workers);
  }
  const int nt = static_cast<int>(target.frames.size());
  if (nt <= ax.target_test_frames) {
    throw ConfigError("target dataset has " + std::to_string(nt) +
                      " frames, not more than target_test_frames");
  }
  const DataSplit tsplit = split_frames(nt, ax.target_test_frames);
  const auto [labeled, unlabeled] = split_labeled(tsplit.train, ax.adapt.target_label_fraction);

  ParamSet params = load_checkpoint(checkpoint, cfg.model);
  const SceneGeometry tgeom = SceneGeometry::build(target.model_cameras, target.scene.grid, cfg.model);
  write_provenance(out, cfg, "adapt");
  auto evaluate = [&](const ParamSet& p) {
    return evaluate_model(target, tsplit.val, p, cfg.model, tgeom, cfg.eval.settings, 0, 1,
                          derive_seed(cfg.seed, kEvalStream), workers);
  };
  const EvalResult before = evaluate(params);
  AdaptResult res = adapt(source, src_split.train, target, labeled, unlabeled, std::move(params),
                          cfg.model, cfg.train, ax.adapt);
  const EvalResult after = evaluate(res.params);

  save_checkpoint(out / "checkpoint_adapted.vwf", res.params, cfg.model, hash);
  write_loss_csv(out / "adapt_loss.csv", res.log, hash);
  const auto ctx = context_for(
      cfg, target, protocol_for(0, static_cast<int>(target.model_cameras.size()), 1));
  write_metrics_csv(out / "target_before.csv", before.frames, before.total, ctx);
  write_metrics_csv(out / "target_after.csv", after.frames, after.total, ctx);
  std::ostringstream ba;
  ba << "# config_hash=" << hash << "\nphase," << kMetricHeader << "\n"
     << "before," << metric_row(before.total) << "\n"
     << "after," << metric_row(after.total) << "\n";
  write_text(out / "before_after.csv", ba.str());
  std::ostringstream acc;
  acc << "# config_hash=" << hash << "\nepoch,discriminator_accuracy\n";
  for (std::size_t e = 0; e < res.disc_accuracy.size(); ++e) {
    acc << e << ',' << format_real(res.disc_accuracy[e]) << "\n";
  }
  write_text(out / "discriminator.csv", acc.str());
  std::printf("target labeled frames %zu, unlabeled %zu, test %zu\n", labeled.size(),
              unlabeled.size(), tsplit.val.size());
  print_report("before", before.total);
  print_report("after", after.total);
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const Globals& g) {
  ExperimentConfig cfg = load_config(g, false);
  const fs::path out = prepare_out(cfg);
  const auto entries = run_gradient_suite(cfg.seed, true);
  std::ostringstream csv;
  csv << "# config_hash=" << config_hash(cfg) << "\n"
      << "name,level,tolerance,max_rel_error,coords_checked,kinks_skipped,below_floor,pass\n";
  bool ok = true;
  for (const auto& e : entries) {
    const auto& r = e.report;
    ok = ok && r.pass;
    csv << e.name << ',' << (e.model_level ? "model" : "op") << ',' << format_real(e.tolerance)
        << ',' << format_real(r.max_rel_error) << ',' << r.coords_checked << ','
        << r.kinks_skipped << ',' << r.below_floor << ',' << (r.pass ? "pass" : "fail") << "\n";
    std::printf("%-40s %s  max_rel %.2e  (tol %.0e, %zu coords)\n", e.name.c_str(),
                r.pass ? "PASS" : "FAIL", r.max_rel_error, e.tolerance, r.coords_checked);
    if (!r.pass && !r.worst_leaf.empty()) {
      std::printf("    worst %s[%zu]: analytic %.6e numeric %.6e\n", r.worst_leaf.c_str(),
                  r.worst_index, r.worst_analytic, r.worst_numeric);
    }
  }
  write_text(out / "gradcheck.csv", csv.str());
  std::printf("gradient suite: %s\n", ok ? "PASS" : "FAIL");
  return ok ? kOk : kGradcheckFailed;
}

// ---- render -----------------------------------------------------------------

// Heatmap scale shared by every panel: value v maps to gray round(clamp(v,0,1)*255).
Image to_image(int height, int width, std::span<const double> v) {
  Image img;
  img.width = width;
  img.height = height;
  img.data.assign(v.begin(), v.end());
  return img;
}

std::string file_stem(std::string name) {
  for (char& c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) c = '_';
  }
  return name;
}

// Each [H,W] array becomes one PGM; [C,H,W] arrays one PGM per channel.
int render_archive(const Archive& ar, const fs::path& out) {
  int written = 0;
  for (const auto& a : ar.arrays) {
    int channels = 1, h = 0, w = 0;
    if (a.shape.size() == 2) {
      h = a.shape[0];
      w = a.shape[1];
    } else if (a.shape.size() == 3) {
      channels = a.shape[0];
      h = a.shape[1];
      w = a.shape[2];
    } else {
      log_warning("render: skipping '" + a.name + "' (not a 2-D or 3-D array)");
      continue;
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
      const std::string stem =
          file_stem(a.name) + (channels > 1 ? "_c" + std::to_string(c) : std::string());
      std::span<const double> v(a.values.data() + c * plane, plane);
      write_pgm(out / (stem + ".pgm"), to_image(h, w, v));
      ++written;
    }
  }
  return written;
}

int cmd_render(const Globals& g, const std::string& input, const std::string& checkpoint,
               int frame) {
  if (!input.empty()) {
    const Archive ar = read_archive(input);
    const fs::path out = g.out.empty() ? fs::path("out") : fs::path(g.out);
    fs::create_directories(out);
    const int n = render_archive(ar, out);
    std::printf("wrote %d heatmaps to %s\n", n, out.string().c_str());
    return kOk;
  }
  if (checkpoint.empty()) throw ConfigError("render: give --input or --checkpoint");
  ExperimentConfig cfg = load_config(g);
  const fs::path out = prepare_out(cfg);
  const int workers = workers_of(g);
  const Dataset ds = source_dataset(cfg, workers);
  if (frame < 0 || frame >= static_cast<int>(ds.frames.size())) {
    throw ConfigError("render: --frame " + std::to_string(frame) + " out of range");
  }
  const ParamSet params = load_checkpoint(checkpoint, cfg.model);
  const SceneGeometry geometry = SceneGeometry::build(ds.model_cameras, ds.scene.grid, cfg.model);
  const MultiViewFrame& f = ds.frames[frame];
  std::vector<int> views(ds.model_cameras.size());
  for (std::size_t i = 0; i < views.size(); ++i) views[i] = static_cast<int>(i);
  ParamLeaves leaves(params, false);
  const ForwardOutput fo = forward(f, views, leaves, cfg.model, geometry);

  Archive ar;
  ar.meta = {{"kind", "forward_output"},
             {"config_hash", config_hash(cfg)},
             {"frame", frame}};
  auto put = [&](const std::string& name, const Tensor& t) {
    const auto v = t.values();
    ar.arrays.push_back({name, t.shape(), std::vector<double>(v.begin(), v.end())});
  };
  for (std::size_t i = 0; i < fo.views.size(); ++i) {
    const std::string cam = "view" + std::to_string(fo.views[i]);
    put(cam + "_V", fo.view_preds[i]);
    put(cam + "_W", fo.weight_maps[i]);
    put(cam + "_W_raw", fo.weight_maps_raw[i]);
    const auto gt = f.view_gts[fo.views[i]];
    ar.arrays.push_back({cam + "_V_gt", {gt.rows, gt.cols}, gt.data});
  }
  put("scene_V", fo.scene_pred);
  ar.arrays.push_back({"scene_V_gt", {f.scene_gt.rows, f.scene_gt.cols}, f.scene_gt.data});
  write_archive(out / "forward.vwf", ar);
  const int n = render_archive(ar, out);
  std::printf("wrote forward.vwf and %d heatmaps to %s\n", n, out.string().c_str());
  return kOk;
}

void print_error(const char* kind, int code, const std::string& message) {
  nlohmann::json j = {{"error", kind}, {"exit_code", code}, {"message", message}};
  std::fprintf(stderr, "%s\n", j.dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"viewfuse: multi-view people detection with view-wise weighted fusion"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment configuration (JSON with comments)");
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--out", g.out, "Override the output directory");
  app.add_option("--workers", g.workers, "Worker threads (default: available cores)")
      ->check(CLI::NonNegativeNumber);

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  std::optional<int> sim_frames;
  sim->add_option("--frames", sim_frames, "Frame count (default: train + val frames)");

  auto* train = app.add_subcommand("train", "Run the staged training");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, sweeping view counts");
  std::string eval_ckpt, eval_counts, eval_split = "val";
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--view-counts", eval_counts, "Comma-separated view counts, e.g. 3,5,7");
  eval->add_option("--split", eval_split, "Frames to evaluate")
      ->check(CLI::IsMember({"val", "train", "all"}));

  auto* ad = app.add_subcommand("adapt", "Adapt a checkpoint to a target scene");
  std::string ad_ckpt, ad_target;
  ad->add_option("--checkpoint", ad_ckpt, "Source-trained checkpoint")->required();
  ad->add_option("--target", ad_target, "Target dataset directory (default: simulate)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");

  auto* rd = app.add_subcommand("render", "Write 8-bit PGM heatmaps");
  std::string rd_input, rd_ckpt;
  int rd_frame = 0;
  rd->add_option("--input", rd_input, "Map archive to render");
  rd->add_option("--checkpoint", rd_ckpt, "Checkpoint to run on --frame");
  rd->add_option("--frame", rd_frame, "Dataset frame index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", kUsage, e.what());
    return kUsage;
  }

  try {
    if (*sim) return cmd_simulate(g, sim_frames);
    if (*train) return cmd_train(g);
    if (*eval) return cmd_eval(g, eval_ckpt, eval_counts, eval_split);
    if (*ad) return cmd_adapt(g, ad_ckpt, ad_target);
    if (*gc) return cmd_gradcheck(g);
    if (*rd) return cmd_render(g, rd_input, rd_ckpt, rd_frame);
  } catch (const ConfigError& e) {
    print_error("config", kUsage, e.what());
    return kUsage;
  } catch (const IoError& e) {
    print_error("io", kIo, e.what());
    return kIo;
  } catch (const DivergenceError& e) {
    print_error("divergence", kDivergence, e.what());
    return kDivergence;
  } catch (const CheckpointMismatch& e) {
    print_error("checkpoint_mismatch", kCheckpoint, e.what());
    return kCheckpoint;
  } catch (const std::filesystem::filesystem_error& e) {
    print_error("io", kIo, e.what());
    return kIo;
  } catch (const std::exception& e) {
    print_error("internal", kOther, e.what());
    return kOther;
  }
  return kOther;
}

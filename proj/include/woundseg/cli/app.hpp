#pragma once

// The woundseg command line: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "woundseg/cli/config.hpp"
#include "woundseg/core/error.hpp"
#include "woundseg/core/image_io.hpp"
#include "woundseg/core/manifest.hpp"
#include "woundseg/core/parallel.hpp"
#include "woundseg/metrics.hpp"
#include "woundseg/morphology.hpp"
#include "woundseg/phantom.hpp"
#include "woundseg/select.hpp"
#include "woundseg/trainer.hpp"
#include "woundseg/unet.hpp"
#include "woundseg/viz.hpp"

namespace woundseg::cli {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;
  std::string manifest;
  std::string split;
  std::string checkpoint;
  std::optional<double> threshold;
  std::string pred_dir;
  std::optional<int> k;
  std::vector<std::string> inputs;
  bool regions = false;
  bool quiet = false;
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("no ") + what + " given");
  if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

struct Context {
  config::RunConfig cfg;
  Options opt;
  fs::path out;

  void log(const std::string& line) const {
    if (!opt.quiet) std::cout << line << std::endl;
  }
};

inline Context make_context(const Options& opt, bool needs_out = true) {
  Context ctx;
  ctx.opt = opt;
  if (!opt.config.empty()) {
    require_file(opt.config, "config file");
    ctx.cfg = config::load_config(opt.config);
  }
  for (const auto& o : opt.overrides) config::apply_override(ctx.cfg, o);
  if (opt.seed) ctx.cfg.seed = *opt.seed;
  if (opt.threads) ctx.cfg.threads = *opt.threads;
  if (opt.threshold) ctx.cfg.eval.threshold = *opt.threshold;
  if (opt.k) ctx.cfg.select.k = *opt.k;
  if (!opt.manifest.empty()) ctx.cfg.paths.manifest = opt.manifest;
  if (!opt.checkpoint.empty()) ctx.cfg.paths.checkpoint = opt.checkpoint;
  config::validate(ctx.cfg);
  if (needs_out) {
    if (opt.out.empty()) throw ConfigError("--out is required");
    ctx.out = opt.out;
    fs::create_directories(ctx.out);
    config::save_config(ctx.out / "config.yaml", ctx.cfg);
  }
  return ctx;
}

inline DatasetManifest open_manifest(const Context& ctx) {
  const fs::path p = ctx.cfg.paths.manifest;
  require_file(p, "manifest");
  return load_manifest(p);
}

inline std::optional<Split> split_choice(const std::string& flag, std::optional<Split> fallback) {
  if (flag.empty()) return fallback;
  if (flag == "all") return std::nullopt;
  return parse_split(flag);
}

struct LabeledFrame {
  FrameRef ref;
  Frame frame;
  BinaryMask gt;
};

inline std::vector<LabeledFrame> load_frames(const DatasetManifest& m, std::optional<Split> split,
                                             bool need_masks = true) {
  std::vector<LabeledFrame> out;
  for (const auto& ref : frames_in_split(m, split)) {
    if (ref.mask.empty()) {
      if (need_masks) throw ValueError("frame " + ref.id + " has no mask");
      Frame f = load_frame(ref.image);
      BinaryMask empty(f.width(), f.height());
      out.push_back({ref, std::move(f), std::move(empty)});
      continue;
    }
    auto pair = load_pair(ref.image, ref.mask);
    out.push_back({ref, std::move(pair.frame), std::move(pair.mask)});
  }
  return out;
}

// Predicted masks, from a checkpoint or a directory of <frame stem>.png files.
inline std::vector<BinaryMask> predictions(const Context& ctx, const std::vector<LabeledFrame>& frames) {
  std::vector<BinaryMask> preds(frames.size());
  if (!ctx.opt.pred_dir.empty()) {
    const fs::path dir = ctx.opt.pred_dir;
    if (!fs::is_directory(dir)) throw IoError("prediction directory not found: " + dir.string());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      preds[i] = load_mask(dir / (frame_file_stem(frames[i].ref.id) + ".png"));
      require_same_shape(frames[i].gt, preds[i], "prediction");
    }
    return preds;
  }
  const fs::path ck = ctx.cfg.paths.checkpoint;
  if (ck.empty()) throw ConfigError("either --checkpoint or --pred-dir is required");
  require_file(ck, "checkpoint");
  const auto model = train::load_model<float>(ck);
  parallel_for(frames.size(), ctx.cfg.threads, [&](std::size_t i) {
    preds[i] = train::predict_frame(model, frames[i].frame, ctx.cfg.eval.threshold);
  });
  return preds;
}

}  // namespace detail

// ---- subcommands ----------------------------------------------------------------------

inline void cmd_phantom_gen(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto ds = config::dataset_spec(ctx.cfg);
  const auto gen = phantom::generate_dataset(ds, ctx.out, ctx.cfg.threads);
  ctx.log("wrote " + gen.manifest_path.string());
  ctx.log(format_counts_table(validate_manifest(gen.manifest)));
}

inline void cmd_split(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto m = detail::open_manifest(ctx);
  auto parted = partition_by_patient(m, ctx.cfg.splits, config::stage_seed(ctx.cfg, config::Stage::split));
  parted = rebase_manifest(std::move(parted), ctx.out);
  save_manifest(ctx.out / "manifest.json", parted);
  const auto table = format_counts_table(validate_manifest(parted));
  detail::write_text(ctx.out / "split_counts.txt", table);
  ctx.log(table);
}

inline void cmd_select(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto m = detail::open_manifest(ctx);
  const auto split = detail::split_choice(opt.split, ctx.cfg.select.split);
  const auto refs = frames_in_split(m, split);
  std::vector<Frame> frames(refs.size());
  parallel_for(refs.size(), ctx.cfg.threads, [&](std::size_t i) { frames[i] = load_frame(refs[i].image); });
  const auto k = static_cast<std::size_t>(ctx.cfg.select.k);
  if (k > frames.size())
    throw ValueError("select: k = " + std::to_string(k) + " exceeds the " + std::to_string(frames.size()) +
                     " available frames");
  const auto emb = select::embed_frames(frames, ctx.cfg.select.dims);
  const auto chosen = select::k_center_select(emb.embeddings, k);
  nlohmann::ordered_json ids = nlohmann::ordered_json::array();
  for (std::size_t idx : chosen) {
    ids.push_back(refs[idx].id);
    ctx.log(refs[idx].id);
  }
  detail::write_text(ctx.out / "selected.json", ids.dump(2) + "\n");
}

inline void cmd_train(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto m = detail::open_manifest(ctx);
  const auto tc = config::trainer_config(ctx.cfg);
  const auto train_set = train::load_samples(m, Split::train, tc.input_width, tc.input_height);
  const auto val_set = train::load_samples(m, Split::val, tc.input_width, tc.input_height);
  auto params = unet::build<float>(ctx.cfg.model, config::stage_seed(ctx.cfg, config::Stage::model_init));
  char buf[160];
  const auto result = train::train_on_samples<float>(
      std::move(params), train_set, val_set, tc, ctx.cfg.augment, [&](const train::EpochRecord& r) {
        std::snprintf(buf, sizeof buf, "epoch %3d  loss %.5f  val_dice %.4f  lr %.1e", r.epoch, r.train_loss,
                      r.val_dice, r.lr);
        ctx.log(buf);
      });
  train::ModelInfo info{ctx.cfg.model, tc.norm, result.stats, tc.input_width, tc.input_height, tc.threshold};
  train::save_model(ctx.out / "checkpoint_best.bin", result.best, info);
  detail::write_text(ctx.out / "history.csv", train::history_csv(result.history));
  if (result.best_epoch >= 0) {
    std::snprintf(buf, sizeof buf, "best val_dice %.4f at epoch %d%s", result.best_val_dice, result.best_epoch,
                  result.stopped_early ? " (early stop)" : "");
    ctx.log(buf);
  } else {
    ctx.log("no epochs run; saved initial weights");
  }
}

inline void cmd_eval(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto m = detail::open_manifest(ctx);
  const auto split = detail::split_choice(opt.split, ctx.cfg.eval.split);
  const auto frames = detail::load_frames(m, split);
  if (frames.empty()) throw ValueError("eval: no frames in the selected split");
  const auto preds = detail::predictions(ctx, frames);
  fs::create_directories(ctx.out / "predictions");
  std::vector<metrics::FrameMetrics> per_frame;
  std::string csv = metrics::per_frame_csv_header();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    save_mask_png(ctx.out / "predictions" / (frame_file_stem(frames[i].ref.id) + ".png"), preds[i]);
    per_frame.push_back(metrics::evaluate(preds[i], frames[i].gt));
    csv += metrics::per_frame_csv_row(frames[i].ref.id, per_frame.back());
  }
  const auto agg = metrics::aggregate(per_frame);
  detail::write_text(ctx.out / "per_frame_metrics.csv", csv);
  detail::write_text(ctx.out / "aggregate_metrics.csv", metrics::aggregate_csv(agg));
  ctx.log(metrics::format_table(agg));
}

inline void cmd_overlay(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto m = detail::open_manifest(ctx);
  const auto split = detail::split_choice(opt.split, ctx.cfg.eval.split);
  const auto frames = detail::load_frames(m, split);
  const auto preds = detail::predictions(ctx, frames);
  fs::create_directories(ctx.out / "overlays");
  if (opt.regions) fs::create_directories(ctx.out / "regions");
  const morphology::ScaleOptions so{ctx.cfg.intensity.partial_layer};
  parallel_for(frames.size(), ctx.cfg.threads, [&](std::size_t i) {
    const auto stem = frame_file_stem(frames[i].ref.id);
    save_rgba_png(ctx.out / "overlays" / (stem + ".png"),
                  viz::render_overlay(frames[i].frame, preds[i], frames[i].gt, ctx.cfg.eval.overlay_alpha));
    if (opt.regions && frames[i].gt.any())
      save_rgba_png(ctx.out / "regions" / (stem + ".png"),
                    viz::render_regions(frames[i].frame, morphology::build_regions(frames[i].gt, so),
                                        ctx.cfg.eval.overlay_alpha));
  });
  ctx.log("wrote " + std::to_string(frames.size()) + " overlays to " + (ctx.out / "overlays").string());
}

inline void cmd_intensity(const Options& opt) {
  auto ctx = detail::make_context(opt);
  const auto m = detail::open_manifest(ctx);
  const auto split = detail::split_choice(opt.split, ctx.cfg.intensity.split);
  const auto frames = detail::load_frames(m, split);
  // Region masks come from the ground truth unless predictions are supplied.
  std::vector<BinaryMask> masks;
  if (!opt.pred_dir.empty()) {
    masks = detail::predictions(ctx, frames);
  } else {
    for (const auto& f : frames) masks.push_back(f.gt);
  }
  const morphology::ScaleOptions so{ctx.cfg.intensity.partial_layer};
  std::vector<std::optional<morphology::IntensityReport>> reports(frames.size());
  parallel_for(frames.size(), ctx.cfg.threads, [&](std::size_t i) {
    if (masks[i].any()) reports[i] = morphology::intensity_ratios(frames[i].frame, morphology::build_regions(masks[i], so));
  });

  std::vector<std::string> scan_order;
  std::map<std::string, std::vector<morphology::IntensityReport>> by_scan;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!reports[i]) continue;
    const auto& key = frames[i].ref.scan_key;
    if (!by_scan.count(key)) scan_order.push_back(key);
    by_scan[key].push_back(*reports[i]);
  }
  if (scan_order.empty()) throw ValueError("intensity: no frames with a non-empty wound mask");
  std::vector<morphology::ScanIntensity> scans;
  std::string csv = morphology::intensity_csv_header();
  for (const auto& key : scan_order) {
    scans.push_back(morphology::average_scan(key, by_scan[key]));
    csv += morphology::intensity_csv_rows(scans.back());
  }
  const auto summary = morphology::summarize_scans(scans);
  detail::write_text(ctx.out / "intensity_per_scan.csv", csv);
  const auto table = morphology::intensity_summary_csv(summary);
  detail::write_text(ctx.out / "intensity_summary.csv", table);
  ctx.log(table);
}

namespace detail {

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::string report_section(const fs::path& dir) {
  std::ostringstream os;
  bool any = false;
  auto heading = [&](const std::string& title) {
    os << "\n== " << title << " (" << dir.generic_string() << ") ==\n";
    any = true;
  };
  if (fs::exists(dir / "split_counts.txt")) {
    heading("Dataset splits");
    os << read_text(dir / "split_counts.txt");
  }
  if (fs::exists(dir / "selected.json")) {
    const auto ids = nlohmann::json::parse(read_text(dir / "selected.json"));
    heading("Selected frames");
    for (std::size_t i = 0; i < ids.size(); ++i) os << "  " << i << "  " << ids[i].get<std::string>() << '\n';
  }
  if (fs::exists(dir / "history.csv")) {
    const auto rows = parse_csv(read_text(dir / "history.csv"));
    heading("Training");
    os << "  epochs run: " << (rows.size() - 1) << '\n';
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (best == 0 || std::stod(rows[i].at(2)) > std::stod(rows[best].at(2))) best = i;
    if (best) os << "  best val dice: " << rows[best].at(2) << " at epoch " << rows[best].at(0) << '\n';
  }
  if (fs::exists(dir / "aggregate_metrics.csv")) {
    const auto rows = parse_csv(read_text(dir / "aggregate_metrics.csv"));
    heading("Segmentation metrics");
    for (std::size_t i = 1; i < rows.size(); ++i)
      os << "  " << rows[i].at(0) << ": " << rows[i].at(4) << "  (n = " << rows[i].at(3) << ")\n";
  }
  if (fs::exists(dir / "intensity_summary.csv")) {
    const auto rows = parse_csv(read_text(dir / "intensity_summary.csv"));
    heading("US intensity ratio by region");
    for (const auto& r : rows) {
      if (r.at(0) != "row" && r.at(0) != "summary") continue;
      os << "  ";
      for (std::size_t c = 1; c < r.size(); ++c) {
        // Pad by code points so "±" counts as one column.
        std::size_t width = 0;
        for (unsigned char ch : r[c]) width += (ch & 0xC0) != 0x80;
        os << r[c] << std::string(width < 16 ? 16 - width : 1, ' ');
      }
      os << '\n';
    }
  }
  return any ? os.str() : std::string();
}

}  // namespace detail

inline void cmd_report(const Options& opt) {
  auto ctx = detail::make_context(opt);
  std::vector<fs::path> dirs(opt.inputs.begin(), opt.inputs.end());
  if (dirs.empty()) throw ConfigError("report: at least one --in directory is required");
  std::string text = "woundseg report\n";
  bool any = false;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw IoError("report input not found: " + d.string());
    const auto s = detail::report_section(d);
    any = any || !s.empty();
    text += s;
  }
  if (!any) throw ValueError("report: no known result files in the input directories");
  detail::write_text(ctx.out / "report.txt", text);
  ctx.log(text);
}

// ---- entry point ----------------------------------------------------------------------

inline int run_cli(int argc, char** argv) {
  CLI::App app{"woundseg: wound segmentation pipeline on B-mode ultrasound frames"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config, "YAML run configuration");
  app.add_option("--out", opt.out, "Output directory");
  app.add_option("--seed", opt.seed, "Global seed");
  app.add_option("--threads", opt.threads, "Worker threads (1 = reproducible mode)");
  app.add_option("--set", opt.overrides, "Config override section.key=value (repeatable)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_flag("--quiet", opt.quiet, "Suppress progress output");

  auto with_manifest = [&](CLI::App* sub) {
    sub->add_option("--manifest", opt.manifest, "Dataset manifest (JSON)");
  };
  auto with_split = [&](CLI::App* sub) {
    sub->add_option("--split", opt.split, "train | val | test | all");
  };
  auto with_predictions = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", opt.checkpoint, "Trained checkpoint (.bin with .json sidecar)");
    sub->add_option("--pred-dir", opt.pred_dir, "Directory of predicted masks named <frame stem>.png");
    sub->add_option("--threshold", opt.threshold, "Sigmoid threshold");
  };

  std::map<CLI::App*, std::function<void(const Options&)>> handlers;
  auto add = [&](const char* name, const char* help, std::function<void(const Options&)> fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    handlers[sub] = std::move(fn);
    return sub;
  };
  add("phantom-gen", "Generate a synthetic phantom dataset and manifest", cmd_phantom_gen);
  with_manifest(add("split", "Reassign patient-level train/val/test splits", cmd_split));
  {
    auto* sub = add("select", "Pick diverse frames for annotation (k-center on PCA embeddings)", cmd_select);
    with_manifest(sub);
    with_split(sub);
    sub->add_option("--k", opt.k, "Number of frames to select");
  }
  with_manifest(add("train", "Train the U-Net", cmd_train));
  {
    auto* sub = add("eval", "Per-frame and aggregate Dice / precision / recall", cmd_eval);
    with_manifest(sub);
    with_split(sub);
    with_predictions(sub);
  }
  {
    auto* sub = add("overlay", "Render TP/FP/FN overlays", cmd_overlay);
    with_manifest(sub);
    with_split(sub);
    with_predictions(sub);
    sub->add_flag("--regions", opt.regions, "Also render the four wound regions");
  }
  {
    auto* sub = add("intensity", "Regional intensity ratios per scan", cmd_intensity);
    with_manifest(sub);
    with_split(sub);
    sub->add_option("--pred-dir", opt.pred_dir, "Use predicted masks instead of ground truth");
  }
  add("report", "Bundle result CSVs into a text summary", cmd_report)
      ->add_option("--in", opt.inputs, "Result directory (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    for (auto& [sub, fn] : handlers)
      if (sub->parsed()) fn(opt);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "woundseg: error: " << msg << '\n';
    return 1;
  }
  return 0;
}

}  // namespace woundseg::cli

/**
 * @file cli.hpp
 * @brief Command-line front end: train, infer, eval, gradcheck, synth.
 *
 * Exit codes: 0 success, 1 verification failure (gradcheck, divergence),
 * 2 configuration or validation error, 3 IO or format error.
 */
#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odformer/checkpoint.hpp"
#include "odformer/config.hpp"
#include "odformer/gradcheck.hpp"
#include "odformer/manifest.hpp"
#include "odformer/metrics.hpp"
#include "odformer/train.hpp"

namespace odf::cli {

enum Exit : int { kOk = 0, kVerify = 1, kConfig = 2, kIo = 3 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string metric_line(const Metrics& m) {
  return "IoU " + format_percent(m.iou) + "  Fsc " + format_percent(m.fsc) + "  Acc " + format_percent(m.acc);
}

/// Writes `<base>.md` style siblings: markdown to `path`, CSV next to it.
inline void write_report(const std::string& path, const std::vector<ReportRow>& rows) {
  detail::write_file(path, markdown_table(rows));
  detail::write_file(std::filesystem::path(path).replace_extension(".csv").string(), csv_table(rows));
}

struct TrainArgs {
  std::string manifest, config, out;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

inline int cmd_train(const TrainArgs& a, Streams io) {
  ModelConfig cfg = load_config(a.config);
  if (a.steps) cfg.steps = *a.steps;
  if (a.lr) cfg.lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (cfg.lr == 0.0) io.err << "warning: lr is 0, parameters will not change\n";
  const auto samples = load_manifest(a.manifest);
  const auto train_set = select_split(samples, Split::train);
  const auto val_set = select_split(samples, Split::val);
  if (train_set.empty()) throw ConfigError("manifest: no train samples");
  if (val_set.empty()) throw ConfigError("manifest: no val samples");
  for (const auto& leak : split_leaks(parse_manifest(detail::read_file(a.manifest), a.manifest)))
    io.err << "warning: participant " << leak << " appears in both splits\n";

  Model model(cfg);
  io.out << "model: " << model.parameter_count() << " parameters, " << train_set.size() << " train / "
         << val_set.size() << " val samples, " << cfg.steps << " steps\n";
  const TrainResult result = train(model, train_set, val_set, cfg, [&](const EvalRecord& e) {
    io.out << "step " << e.step << "  val " << metric_line(e.foreground) << "\n";
  });
  save_checkpoint(a.out, result.best);
  detail::write_file(a.out + ".loss.csv", loss_log_csv(result.losses));
  const EvalRecord& last = result.evals.back();
  write_report(a.out + ".val.md", {{"ODFormer", last.foreground}});
  io.out << "best val IoU " << format_percent(result.best_iou) << " at step " << result.best_step << "\n";
  io.out << "final val " << metric_line(last.foreground) << "\n";
  io.out << "checkpoint: " << a.out << "\n";
  return kOk;
}

inline int cmd_infer(const std::string& ckpt, const std::string& image, const std::string& out, Streams io) {
  Model model = load_model(ckpt);
  const Tensor img = read_image(image);
  const Tensor x = reshape(standardize(img), {1, 3, img.dim(1), img.dim(2)});
  model.check_input(x);
  const Mask mask = predict(model, x).front();
  write_mask(out, mask);
  std::size_t fg = 0;
  for (auto id : mask.ids) fg += id;
  io.out << "wrote " << out << " (" << mask.width << "x" << mask.height << ", " << fg << " ONH pixels)\n";
  return kOk;
}

inline int cmd_eval(const std::string& ckpt, const std::string& manifest, const std::string& split,
                    const std::string& report, Streams io) {
  if (split != "train" && split != "val") throw ConfigError("--split: must be train or val, got " + split);
  const Split which = parse_split(split, "--split");
  Model model = load_model(ckpt);
  const auto samples = select_split(load_manifest(manifest), which);
  if (samples.empty()) throw ConfigError("manifest: no " + split + " samples");
  const ConfusionCounts counts = evaluate(model, preprocess_all(samples, model.config()));
  const Metrics m = metrics(counts, kForegroundClass);
  if (!report.empty()) write_report(report, {{"ODFormer", m}});
  io.out << split << " (" << samples.size() << " samples) " << metric_line(m) << "\n";
  return kOk;
}

inline int cmd_gradcheck(double tol, double eps, std::uint64_t seed, Streams io) {
  if (!(tol > 0.0)) throw ConfigError("--tol: must be positive");
  if (!(eps > 0.0)) throw ConfigError("--eps: must be positive");
  const auto reports = run_gradcheck(seed, tol, eps);
  const GradReport* worst = nullptr;
  for (const auto& r : reports) {
    char line[160];
    std::snprintf(line, sizeof line, "%-24s max rel err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_error,
                  r.tolerance, r.passed() ? "ok" : "FAIL");
    io.out << line;
    if (!r.passed() && (!worst || r.max_rel_error / r.tolerance > worst->max_rel_error / worst->tolerance))
      worst = &r;
  }
  if (worst) {
    io.err << "gradcheck failed; worst op: " << worst->name << " (" << fmt("%.3e", worst->max_rel_error) << ")\n";
    return kVerify;
  }
  io.out << "all " << reports.size() << " cases passed\n";
  return kOk;
}

/// Seed of sample `i` in a corpus generated with `seed`.
inline std::uint64_t synth_sample_seed(std::uint64_t seed, std::size_t i) {
  return seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i) + 1;
}

inline int cmd_synth(std::size_t count, std::size_t size, const std::string& dir, std::uint64_t seed, Streams io) {
  if (count == 0) throw ConfigError("--count: must be positive");
  if (size < 32) throw ConfigError("--size: must be at least 32");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir + ": " + ec.message());
  const std::size_t n_train = count * 4 / 5;
  std::string manifest;
  for (std::size_t i = 0; i < count; ++i) {
    FundusSample s = synth_fundus(synth_sample_seed(seed, i), size);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu", i);
    ManifestRecord r{std::string(name) + ".ppm", std::string(name) + ".pgm", i < n_train ? Split::train : Split::val,
                     name, ""};
    write_image((std::filesystem::path(dir) / r.image).string(), s.image);
    write_mask((std::filesystem::path(dir) / r.mask).string(), s.mask);
    manifest += format_manifest_line(r) + "\n";
  }
  const std::string path = (std::filesystem::path(dir) / "manifest.jsonl").string();
  detail::write_file(path, manifest);
  io.out << "wrote " << count << " samples (" << n_train << " train, " << count - n_train << " val) to " << path
         << "\n";
  return kOk;
}

/// Entry point; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, Streams io) {
  CLI::App app{"ODFormer optic-nerve-head segmentation"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train on a manifest, keep the best val checkpoint");
  train_cmd->add_option("--manifest", ta.manifest, "JSONL manifest")->required();
  train_cmd->add_option("--config", ta.config, "JSON model/training config")->required();
  train_cmd->add_option("--out", ta.out, "checkpoint path")->required();
  train_cmd->add_option("--steps", ta.steps, "override steps");
  train_cmd->add_option("--lr", ta.lr, "override learning rate");
  train_cmd->add_option("--seed", ta.seed, "override seed");

  std::string ckpt, image, out, manifest, split = "val", report;
  auto* infer_cmd = app.add_subcommand("infer", "segment one PPM image into a PGM mask");
  infer_cmd->add_option("--ckpt", ckpt)->required();
  infer_cmd->add_option("--image", image)->required();
  infer_cmd->add_option("--out", out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval_cmd->add_option("--ckpt", ckpt)->required();
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--split", split, "train or val")->capture_default_str();
  eval_cmd->add_option("--report", report, "markdown report path (CSV written alongside)");

  double tol = 1e-4, eps = 1e-5;
  std::uint64_t seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op and a tiny model");
  grad_cmd->add_option("--tol", tol)->capture_default_str();
  grad_cmd->add_option("--eps", eps)->capture_default_str();
  grad_cmd->add_option("--seed", seed)->capture_default_str();

  std::size_t count = 10, size = 64;
  std::string dir;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic fundus corpus and manifest");
  synth_cmd->add_option("--count", count)->capture_default_str();
  synth_cmd->add_option("--size", size)->capture_default_str();
  synth_cmd->add_option("--out", dir, "output directory")->required();
  synth_cmd->add_option("--seed", seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, io);
    if (infer_cmd->parsed()) return cmd_infer(ckpt, image, out, io);
    if (eval_cmd->parsed()) return cmd_eval(ckpt, manifest, split, report, io);
    if (grad_cmd->parsed()) return cmd_gradcheck(tol, eps, seed, io);
    if (synth_cmd->parsed()) return cmd_synth(count, size, dir, seed, io);
  } catch (const NumericError& e) {
    io.err << "error: " << e.what() << "\n";
    return kVerify;
  } catch (const FormatError& e) {
    io.err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
    io.err << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}

}  // namespace odf::cli

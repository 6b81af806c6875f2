/**
 * @file train.hpp
 * @brief SGD training loop, evaluation and best-checkpoint retention.
 */
#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "odformer/checkpoint.hpp"
#include "odformer/loss.hpp"
#include "odformer/metrics.hpp"
#include "odformer/model.hpp"
#include "odformer/optim.hpp"
#include "odformer/sample.hpp"

namespace odf {

inline constexpr std::size_t kForegroundClass = 1;

/// Stacks (3,H,W) images of equal extents into (N,3,H,W).
inline Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const Shape& s = images.front()->shape();
  Tensor out({images.size(), s[0], s[1], s[2]});
  const std::size_t n = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ShapeError("stack_images: mixed extents in batch");
    std::copy(images[i]->data().begin(), images[i]->data().end(), out.data().begin() + i * n);
  }
  return out;
}

/// Per-pixel argmax over the class axis of (N,K,H,W) logits, one mask per
/// batch entry. Ties resolve to the lowest class id.
inline std::vector<Mask> argmax_masks(const Tensor& logits) {
  const std::size_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3), P = H * W;
  std::vector<Mask> out;
  for (std::size_t n = 0; n < N; ++n) {
    Mask m{H, W, std::vector<std::uint8_t>(P)};
    for (std::size_t p = 0; p < P; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (logits[(n * K + k) * P + p] > logits[(n * K + best) * P + p]) best = k;
      m.ids[p] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Eval-mode prediction for standardized images (N,3,H,W).
inline std::vector<Mask> predict(Model& model, const Tensor& images) {
  NoGradScope no_grad;
  return argmax_masks(model.forward(images, Mode::eval));
}

/// Confusion counts over already preprocessed samples, `batch` at a time.
inline ConfusionCounts evaluate(Model& model, const std::vector<FundusSample>& samples, std::size_t batch = 1) {
  if (batch == 0) throw ConfigError("batch: must be positive");
  ConfusionCounts acc(model.config().classes);
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    std::vector<const Tensor*> imgs;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch); ++j) imgs.push_back(&samples[j].image);
    const auto preds = predict(model, stack_images(imgs));
    for (std::size_t j = 0; j < preds.size(); ++j) update_confusion(preds[j], samples[i + j].mask, acc);
  }
  return acc;
}

inline std::vector<FundusSample> preprocess_all(const std::vector<FundusSample>& samples, const ModelConfig& cfg) {
  std::vector<FundusSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(preprocess(s, cfg.crop, cfg.input_side));
  return out;
}

struct LossRecord {
  std::size_t step;
  double loss;
  double lr;
};

struct EvalRecord {
  std::size_t step;
  ConfusionCounts counts;
  Metrics foreground;
};

struct TrainState {
  std::size_t step = 0;
  std::uint64_t seed = 0;
  Sgd optimizer;
  double best_iou = -1.0;
  std::size_t best_step = 0;
};

struct TrainResult {
  std::vector<LossRecord> losses;
  std::vector<EvalRecord> evals;
  std::vector<NamedArray> best;  // checkpoint arrays at the best val IoU
  std::size_t best_step = 0;
  double best_iou = -1.0;
};

inline std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::string out = "step,loss,lr\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.step, r.loss, r.lr);
    out += buf;
  }
  return out;
}

/// Called after each evaluation; lets callers print progress.
using EvalCallback = std::function<void(const EvalRecord&)>;

/// Fixed-step SGD on `train_raw`, evaluating `val_raw` every eval_every
/// steps and at the last step. Gradients are clipped to a global norm of
/// cfg.clip_norm before each update. Samples are preprocessed once;
/// augmentation (when enabled) is drawn per use from a seeded stream.
/// With lr = 0 the model is frozen outright: batch-norm statistics are
/// seeded from the first batch and never updated, so every evaluation sees
/// the same state.
inline TrainResult train(Model& model, const std::vector<FundusSample>& train_raw,
                         const std::vector<FundusSample>& val_raw, const ModelConfig& cfg,
                         const EvalCallback& on_eval = {}) {
  cfg.validate();
  if (train_raw.empty()) throw ConfigError("train: no training samples");
  if (val_raw.empty()) throw ConfigError("train: no validation samples");
  const auto train_set = preprocess_all(train_raw, cfg);
  const auto val_set = preprocess_all(val_raw, cfg);
  // Augmentation runs in [0,1] pixel space, before standardization.
  std::vector<FundusSample> train_unit;
  for (const auto& s : train_raw) train_unit.push_back(crop_resize(s, cfg.crop, cfg.input_side));

  TrainState state{0, cfg.seed, Sgd(model.parameter_tensors(), cfg.lr, cfg.momentum)};
  Rng order_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  Rng aug_rng(cfg.seed ^ 0x14057b7ef767814fULL);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(order_rng.uniform(0.0, static_cast<double>(i)));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  const bool frozen = cfg.lr == 0.0;
  TrainResult result;
  auto run_eval = [&](std::size_t step) {
    EvalRecord rec{step, evaluate(model, val_set, cfg.batch), {}};
    rec.foreground = metrics(rec.counts, kForegroundClass);
    const double score = std::isnan(rec.foreground.iou) ? -1.0 : rec.foreground.iou;
    if (result.best.empty() || score > state.best_iou) {
      state.best_iou = score;
      state.best_step = step;
      result.best = model_arrays(model);
    }
    if (on_eval) on_eval(rec);
    result.evals.push_back(std::move(rec));
  };

  for (state.step = 1; state.step <= cfg.steps; ++state.step) {
    std::vector<FundusSample> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::size_t idx = next_index();
      if (cfg.augment) {
        FundusSample s = augment(train_unit[idx], aug_rng);
        s.image = standardize(s.image);
        batch.push_back(std::move(s));
      } else {
        batch.push_back(train_set[idx]);
      }
    }
    std::vector<const Tensor*> imgs;
    std::vector<const Mask*> masks;
    for (const auto& s : batch) {
      imgs.push_back(&s.image);
      masks.push_back(&s.mask);
    }
    const Tensor x = stack_images(imgs);
    const auto target = stack_targets(masks);

    Mode mode = Mode::train;
    if (frozen && model.running_stats_ready()) mode = Mode::eval;
    double loss_value;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor loss = cross_entropy_loss(model.forward(x, mode), target);
      loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("training diverged: loss is " + std::to_string(loss_value) + " at step " +
                           std::to_string(state.step));
      state.optimizer.zero_grad();
      tape.backward(loss);
    }
    if (!frozen) {
      state.optimizer.clip(cfg.clip_norm);
      state.optimizer.step();
    }
    result.losses.push_back({state.step, loss_value, state.optimizer.lr()});
    if (state.step % cfg.eval_every == 0 || state.step == cfg.steps) run_eval(state.step);
  }
  result.best_step = state.best_step;
  result.best_iou = state.best_iou;
  return result;
}

}  // namespace odf

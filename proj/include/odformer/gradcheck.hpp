/**
 * @file gradcheck.hpp
 * @brief Central finite-difference verification of every differentiable op
 * and of a tiny end-to-end model.
 *
 * Each case reduces its output to a scalar with fixed random weights,
 * L = Σ w ⊙ f(x), and compares dL/dx from the tape against
 * (L(x+eps) − L(x−eps)) / 2eps per element. The relative error of one
 * element is |a − n| / max(|a|, |n|, 1e-3); the floor keeps near-zero
 * gradients from turning roundoff into large ratios.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "odformer/decoder.hpp"
#include "odformer/encoder.hpp"
#include "odformer/loss.hpp"
#include "odformer/model.hpp"
#include "odformer/msca.hpp"

namespace odf {

inline constexpr double kGradFloor = 1e-3;
inline constexpr double kLinearTolerance = 1e-6;

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;  // all checked
  GradFn fn;
  bool linear = false;  // affine in each input separately
};

struct GradReport {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

/// Max elementwise relative error over every entry of every input.
inline double max_gradient_error(const GradFn& fn, std::vector<Tensor> inputs, double eps, Rng& rng,
                                 std::size_t* checked = nullptr) {
  Tensor probe_out;
  {
    NoGradScope off;
    probe_out = fn(inputs);
  }
  Tensor weights(probe_out.shape());
  for (auto& w : weights.data()) w = rng.uniform(-1.0, 1.0);
  auto objective = [&] { return sum(mul(fn(inputs), weights)); };

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(objective());
  }
  double worst = 0.0;
  std::size_t n = 0;
  NoGradScope off;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = objective().item();
      t[i] = saved - eps;
      const double down = objective().item();
      t[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
      ++n;
    }
  }
  if (checked) *checked = n;
  return worst;
}

inline GradReport run_case(const GradCase& c, double tol, double eps, Rng& rng) {
  GradReport r;
  r.name = c.name;
  r.tolerance = c.linear ? std::min(tol, kLinearTolerance) : tol;
  r.max_rel_error = max_gradient_error(c.fn, c.inputs, eps, rng, &r.checked);
  return r;
}

/// Tiny end-to-end configuration: k=2, C=4, M=2, 16×16 input.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.atrous_branches = 3;
  c.depths = {2, 2};
  c.heads = {1, 2};
  c.channels = 4;
  c.window = 2;
  c.decoder_channels = 8;
  c.classes = 2;
  c.input_side = 16;
  c.crop = 16;
  return c;
}

/// Every case of the suite, with inputs drawn uniformly from [-1,1].
inline std::vector<GradCase> gradcheck_cases(std::uint64_t seed) {
  Rng rng(seed);
  auto rnd = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
  };
  // Values kept away from the ReLU kink so a step of eps never crosses it.
  auto away_from_zero = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = (rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
    return t;
  };
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> in, GradFn fn, bool linear) {
    cases.push_back({std::move(name), std::move(in), std::move(fn), linear});
  };

  add_case("add", {rnd({2, 3, 4}), rnd({3, 4})}, [](const auto& x) { return add(x[0], x[1]); }, true);
  add_case("sub", {rnd({2, 3}), rnd({2, 3})}, [](const auto& x) { return sub(x[0], x[1]); }, true);
  add_case("mul", {rnd({2, 3}), rnd({2, 3})}, [](const auto& x) { return mul(x[0], x[1]); }, true);
  add_case("scale", {rnd({5})}, [](const auto& x) { return scale(x[0], -1.7); }, true);
  add_case("sum", {rnd({2, 3})}, [](const auto& x) { return sum(x[0]); }, true);
  add_case("mean", {rnd({2, 3})}, [](const auto& x) { return mean(x[0]); }, true);
  add_case("matmul", {rnd({2, 3, 4}), rnd({2, 4, 5})}, [](const auto& x) { return matmul(x[0], x[1]); }, true);
  add_case("matmul_shared", {rnd({2, 3, 4}), rnd({4, 2})}, [](const auto& x) { return matmul(x[0], x[1]); }, true);
  add_case("concat", {rnd({1, 2, 3}), rnd({1, 3, 3})}, [](const auto& x) { return concat({x[0], x[1]}, 1); }, true);
  add_case("slice", {rnd({2, 5, 3})}, [](const auto& x) { return slice(x[0], 1, 1, 3); }, true);
  add_case("reshape", {rnd({2, 6})}, [](const auto& x) { return reshape(x[0], {3, 4}); }, true);
  add_case("permute", {rnd({2, 3, 4})}, [](const auto& x) { return permute(x[0], {2, 0, 1}); }, true);
  add_case("transpose", {rnd({2, 3, 4})}, [](const auto& x) { return transpose(x[0], 0, 2); }, true);
  add_case("add_bias", {rnd({2, 3, 4}), rnd({4})}, [](const auto& x) { return add_bias(x[0], x[1]); }, true);
  add_case("linear", {rnd({3, 4}), rnd({4, 2}), rnd({2})},
           [](const auto& x) { return linear(x[0], LinearParams{x[1], x[2]}); }, true);

  auto conv_case = [&](std::string name, Shape in, Shape w, Pair stride, Pair dil, Pair pad) {
    add_case(std::move(name), {rnd(in), rnd(w), rnd({w[0]})},
             [=](const auto& x) { return conv2d(x[0], Conv2dParams{x[1], x[2], stride, dil, pad}); }, true);
  };
  conv_case("conv2d", {1, 2, 5, 5}, {2, 2, 3, 3}, {1, 1}, {1, 1}, {1, 1});
  conv_case("conv2d_strided", {2, 2, 8, 8}, {3, 2, 5, 5}, {4, 4}, {1, 1}, {2, 2});
  conv_case("conv2d_dilated", {1, 2, 7, 7}, {2, 2, 3, 3}, {1, 1}, {2, 2}, {2, 2});
  conv_case("conv2d_pointwise", {2, 3, 4, 4}, {2, 3, 1, 1}, {1, 1}, {1, 1}, {0, 0});
  add_case("separable_conv", {rnd({1, 2, 6, 6}), rnd({2, 2, 1, 7}), rnd({2}), rnd({2, 2, 7, 1}), rnd({2})},
           [](const auto& x) {
             SeparablePair sp{{x[1], x[2], {1, 1}, {1, 1}, {0, 3}}, {x[3], x[4], {1, 1}, {1, 1}, {3, 0}}};
             return separable_conv(x[0], sp);
           },
           true);
  add_case("bilinear_resize_up", {rnd({1, 2, 2, 3})}, [](const auto& x) { return bilinear_resize(x[0], 4, 6); }, true);
  add_case("bilinear_resize_down", {rnd({1, 1, 8, 8})}, [](const auto& x) { return bilinear_resize(x[0], 3, 5); },
           true);
  add_case("window_partition", {rnd({2, 3, 4, 4})}, [](const auto& x) { return window_partition(x[0], 2); }, true);
  add_case("window_merge", {rnd({8, 4, 3})}, [](const auto& x) { return window_merge(x[0], 2, 4, 4); }, true);

  add_case("layernorm_channels", {rnd({2, 3, 2, 2}), rnd({3}), rnd({3})},
           [](const auto& x) { return layernorm(x[0], LayerNormParams{x[1], x[2], 1e-5}, 1); }, false);
  add_case("layernorm_tokens", {rnd({2, 3, 4}), rnd({4}), rnd({4})},
           [](const auto& x) { return layernorm(x[0], LayerNormParams{x[1], x[2], 1e-5}, -1); }, false);
  add_case("batchnorm_train", {rnd({2, 3, 2, 2}), rnd({3}), rnd({3})},
           [](const auto& x) {
             BatchNormParams p;
             p.gamma = x[1];
             p.beta = x[2];
             p.running_mean = Tensor::zeros({3});
             p.running_var = Tensor::ones({3});
             return batchnorm(x[0], p, Mode::train);
           },
           false);
  {
    Tensor rm = rnd({3}), rv(Shape{3});
    for (auto& v : rv.data()) v = rng.uniform(0.5, 2.0);
    add_case("batchnorm_eval", {rnd({2, 3, 2, 2}), rnd({3}), rnd({3})},
             [rm, rv](const auto& x) {
               BatchNormParams p;
               p.gamma = x[1];
               p.beta = x[2];
               p.running_mean = rm;
               p.running_var = rv;
               p.stats_ready = true;
               return batchnorm(x[0], p, Mode::eval);
             },
             true);
  }
  add_case("relu", {away_from_zero({3, 4})}, [](const auto& x) { return relu(x[0]); }, false);
  add_case("sigmoid", {rnd({3, 4})}, [](const auto& x) { return sigmoid(x[0]); }, false);
  add_case("gelu", {rnd({3, 4})}, [](const auto& x) { return gelu(x[0]); }, false);
  add_case("softmax", {rnd({2, 5, 3})}, [](const auto& x) { return softmax(x[0], 1); }, false);
  {
    std::vector<std::uint8_t> target{0, 1, 1, 0, 1, 0, 0, 1};
    add_case("cross_entropy", {rnd({2, 2, 2, 2})}, [target](const auto& x) { return cross_entropy_loss(x[0], target); },
             false);
  }

  // Attention pieces at window M=2 (T=4 tokens), width 4, 2 heads.
  Rng init(seed + 1);
  BlockParams block = make_block(init, 4, 2, 2);
  for (auto& v : block.ln1.gamma.data()) v = rng.uniform(0.5, 1.5);
  for (auto& v : block.ln2.beta.data()) v = rng.uniform(-0.5, 0.5);
  add_case("attention_core", {rnd({2, 2, 4, 3}), rnd({2, 2, 4, 3}), rnd({2, 2, 4, 3}), rnd({2, 2, 4, 4})},
           [](const auto& x) { return attention_core(x[0], x[1], x[2], x[3]); }, false);
  add_case("relative_position_bias", {rnd({3, 4, 4}), block.bias_conv.weight, block.bias_conv.bias},
           [block](const auto& x) {
             BlockParams p = block;
             p.bias_conv.weight = x[1];
             p.bias_conv.bias = x[2];
             return relative_position_bias(x[0], p);
           },
           false);
  add_case("windowed_mhsa", {rnd({2, 4, 4}), block.wq, block.wk, block.wv},
           [block](const auto& x) {
             BlockParams p = block;
             p.wq = x[1];
             p.wk = x[2];
             p.wv = x[3];
             return windowed_mhsa(x[0], p);
           },
           false);
  {
    std::vector<Tensor> in{rnd({2, 4, 4})};
    NamedTensors named;
    collect(named, "block", block);
    for (auto& nt : named) in.push_back(nt.tensor);
    add_case("odformer_block", in, [block](const auto& x) { return odformer_block(x[0], block); }, false);
  }

  // Front end and decoder pieces.
  {
    MscaParams ms = make_msca(init, 3, 2);
    std::vector<Tensor> in{rnd({1, 3, 8, 8})};
    NamedTensors named;
    collect(named, "msca", ms);
    for (auto& nt : named) in.push_back(nt.tensor);
    add_case("msca", in, [ms](const auto& x) { return msca_forward(x[0], ms); }, false);
  }
  {
    LbfrParams lp = make_lbfr(init, 4);
    std::vector<Tensor> in{rnd({1, 4, 6, 6})};
    NamedTensors named;
    collect(named, "lbfr", lp);
    for (auto& nt : named) in.push_back(nt.tensor);
    add_case("lbfr", in,
             [lp](const auto& x) {
               LbfrParams p = lp;
               return lbfr(x[0], p, Mode::train);
             },
             false);
  }
  add_case("pyramid_fuse", {rnd({1, 2, 8, 8}), rnd({1, 2, 4, 4}), rnd({1, 2, 2, 2})},
           [](const auto& x) { return pyramid_fuse(x)[0]; }, true);
  {
    Conv2dParams head = make_conv(init, 2, 4, 3, 3, {1, 1}, {1, 1}, {1, 1});
    add_case("seg_head", {rnd({1, 2, 4, 4}), rnd({1, 2, 2, 2}), head.weight, head.bias},
             [head](const auto& x) {
               Conv2dParams h = head;
               h.weight = x[2];
               h.bias = x[3];
               return seg_head({x[0], x[1]}, h, 16, 16);
             },
             true);
  }

  // End-to-end tiny model in training mode, through the loss.
  {
    auto model = std::make_shared<Model>(tiny_config());
    std::vector<Tensor> in{rnd({1, 3, 16, 16})};
    for (auto& t : model->parameter_tensors()) in.push_back(t);
    std::vector<std::uint8_t> target(256);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i / 16 >= 5 && i / 16 < 11 && i % 16 >= 4) ? 1 : 0;
    add_case("model_end_to_end", in,
             [model, target](const auto& x) {
               Tensor logits = model->forward(x[0], Mode::train);
               return concat({reshape(logits, {logits.size()}), cross_entropy_loss(logits, target)}, 0);
             },
             false);
  }
  return cases;
}

inline std::vector<GradReport> run_gradcheck(std::uint64_t seed, double tol, double eps) {
  Rng weights(seed ^ 0xa0761d6478bd642fULL);
  std::vector<GradReport> out;
  for (const auto& c : gradcheck_cases(seed)) out.push_back(run_case(c, tol, eps, weights));
  return out;
}

}  // namespace odf

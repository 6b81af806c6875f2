/**
 * @file encoder.hpp
 * @brief Hierarchical windowed-attention encoder.
 *
 * Stage i runs `depth` blocks over non-overlapping M_i×M_i token windows and
 * stages after the first begin with a stride-2 3×3 convolution that doubles
 * the channel count. Each block is
 *
 *   X  = LN(F)
 *   B_r = sigmoid(conv3x3(X viewed as a d×M×M grid)), one M²×M² map per head
 *   H_r = softmax(Q_r K_rᵀ / sqrt(d/N_h) + B_r) V_r
 *   F_M = concat_r(H_r) + X
 *   F_S = MLP(LN(F_M)) + F_M
 *
 * The relative position bias is added to the logits, inside the softmax.
 * When M_i does not tile a stage, the map is zero-padded at the bottom and
 * right before partitioning and cropped back after merging.
 */
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "odformer/nn.hpp"
#include "odformer/ops.hpp"
#include "odformer/params.hpp"

namespace odf {

struct StageConfig {
  std::size_t depth = 2;   // number of blocks (2·n_i)
  std::size_t heads = 1;   // N_h
  std::size_t window = 4;  // M
};

struct BlockParams {
  LayerNormParams ln1;
  LayerNormParams ln2;
  Tensor wq, wk, wv;  // (d, d)
  Conv2dParams bias_conv;  // 3×3, d -> heads·M²
  LinearParams mlp_in;     // d -> 4d
  LinearParams mlp_out;    // 4d -> d
  std::size_t heads = 1;
  std::size_t window = 1;

  std::size_t width() const { return wq.dim(0); }
};

struct StageParams {
  std::optional<Conv2dParams> downsample;  // absent for the first stage
  LayerNormParams downsample_ln;
  std::vector<BlockParams> blocks;
  std::size_t window = 1;  // effective window M_i
  std::size_t heads = 1;
};

struct EncoderParams {
  std::vector<StageParams> stages;
};

struct EncoderOutput {
  std::vector<Tensor> pyramid;  // level i: (N, 2^i·C, H/2^(i+2), W/2^(i+2)), zero-based i
};

/// Receives every attention probability tensor (windows, heads, M², M²).
struct AttentionProbe {
  std::vector<Tensor> maps;
};

inline constexpr std::size_t kMlpRatio = 4;

inline BlockParams make_block(Rng& rng, std::size_t width, std::size_t heads, std::size_t window) {
  if (heads == 0 || width % heads != 0)
    throw ConfigError("encoder: width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  BlockParams b;
  b.ln1 = make_layernorm(width);
  b.ln2 = make_layernorm(width);
  const double bound = std::sqrt(3.0 / static_cast<double>(width));
  b.wq = rng.uniform_tensor({width, width}, bound);
  b.wk = rng.uniform_tensor({width, width}, bound);
  b.wv = rng.uniform_tensor({width, width}, bound);
  b.bias_conv = make_conv(rng, heads * window * window, width, 3, 3, {1, 1}, {1, 1}, {1, 1});
  for (auto& v : b.bias_conv.weight.data()) v *= 0.1;
  b.mlp_in = make_linear(rng, width, kMlpRatio * width);
  b.mlp_out = make_linear(rng, kMlpRatio * width, width);
  b.heads = heads;
  b.window = window;
  return b;
}

/// Builds all stages for a stem output of `channels` × side_h × side_w.
/// Effective window per stage is min(M, H_i, W_i).
inline EncoderParams make_encoder(Rng& rng, const std::vector<StageConfig>& stages, std::size_t channels,
                                  std::size_t side_h, std::size_t side_w) {
  if (stages.empty()) throw ConfigError("encoder: at least one stage required");
  EncoderParams enc;
  std::size_t width = channels, h = side_h, w = side_w;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& cfg = stages[i];
    const std::string where = "encoder stage " + std::to_string(i + 1) + ": ";
    if (cfg.depth == 0 || cfg.depth % 2 != 0)
      throw ConfigError(where + "depth must be even and positive, got " + std::to_string(cfg.depth));
    if (cfg.window == 0) throw ConfigError(where + "window must be positive");
    StageParams st;
    if (i > 0) {
      if (h % 2 != 0 || w % 2 != 0)
        throw ConfigError(where + "extents " + std::to_string(h) + "x" + std::to_string(w) + " cannot be halved");
      st.downsample = make_conv(rng, 2 * width, width, 3, 3, {2, 2}, {1, 1}, {1, 1});
      width *= 2;
      h /= 2;
      w /= 2;
      st.downsample_ln = make_layernorm(width);
    }
    st.window = std::min({cfg.window, h, w});
    if (width % cfg.heads != 0 || cfg.heads == 0)
      throw ConfigError(where + "width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(cfg.heads));
    st.heads = cfg.heads;
    for (std::size_t j = 0; j < cfg.depth; ++j) st.blocks.push_back(make_block(rng, width, cfg.heads, st.window));
    enc.stages.push_back(std::move(st));
  }
  return enc;
}

namespace detail {
inline std::size_t window_side(std::size_t tokens) {
  const auto M = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (M * M != tokens) throw ShapeError("token count " + std::to_string(tokens) + " is not a perfect square");
  return M;
}
}  // namespace detail

/// (windows, M², d) -> (windows, heads, M², M²). Row i is the query at
/// window position i (row-major); column j the key.
inline Tensor relative_position_bias(const Tensor& xw, const BlockParams& p) {
  if (xw.rank() != 3) throw ShapeError("relative_position_bias: tokens must be rank 3, got " + to_string(xw.shape()));
  const std::size_t nw = xw.dim(0), T = xw.dim(1), d = xw.dim(2);
  const std::size_t M = detail::window_side(T);
  if (p.bias_conv.out_channels() != p.heads * T)
    throw ShapeError("relative_position_bias: bias conv emits " + std::to_string(p.bias_conv.out_channels()) +
                     " channels, need heads*M^2 = " + std::to_string(p.heads * T));
  Tensor grid = reshape(transpose(xw, 1, 2), {nw, d, M, M});
  Tensor maps = sigmoid(conv2d(grid, p.bias_conv));  // (nw, heads*T, M, M)
  return transpose(reshape(maps, {nw, p.heads, T, T}), 2, 3);
}

/// softmax(q kᵀ / sqrt(dh) + bias) v over (windows, heads, T, dh) operands.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                             AttentionProbe* probe = nullptr) {
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(q.rank() - 1)));
  Tensor logits = scale(matmul(q, transpose(k, -2, -1)), inv_scale);
  if (bias.defined()) logits = add(logits, bias);
  Tensor attn = softmax(logits, -1);
  if (probe) probe->maps.push_back(attn);
  return matmul(attn, v);
}

namespace detail {
// (nw, T, d) -> (nw, heads, T, d/heads)
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t nw = x.dim(0), T = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {nw, T, heads, d / heads}), {0, 2, 1, 3});
}
inline Tensor merge_heads(const Tensor& x) {
  const std::size_t nw = x.dim(0), h = x.dim(1), T = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {nw, T, h * dh});
}
}  // namespace detail

/// Multi-head attention on already-normalized window tokens, with the
/// residual on those same tokens.
inline Tensor windowed_mhsa(const Tensor& xw, const BlockParams& p, AttentionProbe* probe = nullptr) {
  if (xw.rank() != 3) throw ShapeError("windowed_mhsa: tokens must be rank 3, got " + to_string(xw.shape()));
  const std::size_t d = xw.dim(2);
  if (p.heads == 0 || d % p.heads != 0)
    throw ShapeError("windowed_mhsa: width " + std::to_string(d) + " not divisible by heads " +
                     std::to_string(p.heads));
  Tensor q = detail::split_heads(matmul(xw, p.wq), p.heads);
  Tensor k = detail::split_heads(matmul(xw, p.wk), p.heads);
  Tensor v = detail::split_heads(matmul(xw, p.wv), p.heads);
  Tensor bias = relative_position_bias(xw, p);
  return add(detail::merge_heads(attention_core(q, k, v, bias, probe)), xw);
}

inline Tensor mlp(const Tensor& x, const BlockParams& p) { return linear(gelu(linear(x, p.mlp_in)), p.mlp_out); }

inline Tensor odformer_block(const Tensor& tokens, const BlockParams& p, AttentionProbe* probe = nullptr) {
  Tensor fm = windowed_mhsa(layernorm(tokens, p.ln1, -1), p, probe);
  return add(mlp(layernorm(fm, p.ln2, -1), p), fm);
}

/// LN(conv3x3 stride 2) halving extents and doubling channels.
inline Tensor downsample(const Tensor& x, const Conv2dParams& conv, const LayerNormParams& ln) {
  if (x.rank() != 4) throw ShapeError("downsample: input must be NCHW, got " + to_string(x.shape()));
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw ShapeError("downsample: odd extents in " + to_string(x.shape()));
  return layernorm(conv2d(x, conv), ln, 1);
}

namespace detail {
inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

// Zero rows below and zero columns right of an NCHW map.
inline Tensor pad_bottom_right(const Tensor& x, std::size_t h, std::size_t w) {
  Tensor out = x;
  const std::size_t N = x.dim(0), C = x.dim(1);
  if (h > x.dim(2)) out = concat({out, Tensor({N, C, h - x.dim(2), x.dim(3)})}, 2);
  if (w > x.dim(3)) out = concat({out, Tensor({N, C, h, w - x.dim(3)})}, 3);
  return out;
}
}  // namespace detail

inline Tensor encoder_stage(const Tensor& x, const StageParams& st, std::size_t stage_index,
                            AttentionProbe* probe = nullptr) {
  Tensor feat = st.downsample ? downsample(x, *st.downsample, st.downsample_ln) : x;
  const std::size_t N = feat.dim(0), H = feat.dim(2), W = feat.dim(3);
  if (H < st.window || W < st.window)
    throw ShapeError("encoder stage " + std::to_string(stage_index + 1) + ": extents " + std::to_string(H) + "x" +
                     std::to_string(W) + " smaller than window " + std::to_string(st.window));
  const std::size_t Hp = detail::round_up(H, st.window), Wp = detail::round_up(W, st.window);
  Tensor tokens = window_partition(detail::pad_bottom_right(feat, Hp, Wp), st.window);
  for (const auto& block : st.blocks) tokens = odformer_block(tokens, block, probe);
  Tensor merged = window_merge(tokens, N, Hp, Wp);
  if (Hp != H) merged = slice(merged, 2, 0, H);
  if (Wp != W) merged = slice(merged, 3, 0, W);
  return merged;
}

inline EncoderOutput encoder_forward(const Tensor& stem, const EncoderParams& p, AttentionProbe* probe = nullptr) {
  EncoderOutput out;
  Tensor x = stem;
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    if (i > 0 && (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0))
      throw ShapeError("encoder stage " + std::to_string(i + 1) + ": cannot halve extents of " + to_string(x.shape()));
    x = encoder_stage(x, p.stages[i], i, probe);
    out.pyramid.push_back(x);
  }
  return out;
}

inline void collect(NamedTensors& out, const std::string& prefix, const BlockParams& b) {
  collect(out, prefix + ".ln1", b.ln1);
  out.push_back({prefix + ".attn.wq", b.wq});
  out.push_back({prefix + ".attn.wk", b.wk});
  out.push_back({prefix + ".attn.wv", b.wv});
  collect(out, prefix + ".attn.bias_conv", b.bias_conv);
  collect(out, prefix + ".ln2", b.ln2);
  collect(out, prefix + ".mlp.fc1", b.mlp_in);
  collect(out, prefix + ".mlp.fc2", b.mlp_out);
}

inline void collect(NamedTensors& out, const std::string& prefix, const EncoderParams& p) {
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const auto& st = p.stages[i];
    const std::string sp = prefix + ".stage" + std::to_string(i + 1);
    if (st.downsample) {
      collect(out, sp + ".downsample", *st.downsample);
      collect(out, sp + ".downsample_ln", st.downsample_ln);
    }
    for (std::size_t j = 0; j < st.blocks.size(); ++j) collect(out, sp + ".block" + std::to_string(j + 1), st.blocks[j]);
  }
}

}  // namespace odf

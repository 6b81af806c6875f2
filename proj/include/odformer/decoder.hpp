/**
 * @file decoder.hpp
 * @brief Pyramid decoder with lightweight bidirectional feature recalibration.
 *
 * Each encoder level is projected to a shared width C_D by a 1×1 conv, then
 * recalibrated:
 *
 *   A = k_v ⊛ (k_u ⊛ E)                      (1×L then L×1, same padding)
 *   R = conv1x1(ReLU(BN(conv1x1(A)))) + E    (squeeze to C_D/4, expand back)
 *
 * and fused top-down, D_k = R_k, D_i = R_i + resize(D_{i+1}). The head
 * resizes every D_i to the level-1 grid, concatenates, applies a 3×3 conv to
 * K classes and bilinearly upsamples to the image size.
 */
#pragma once

#include <string>
#include <vector>

#include "odformer/encoder.hpp"
#include "odformer/nn.hpp"
#include "odformer/params.hpp"

namespace odf {

inline constexpr std::size_t kSeparableLength = 7;

struct LbfrParams {
  SeparablePair separable;
  Conv2dParams squeeze;  // C_D -> C_D/4
  BatchNormParams bn;
  Conv2dParams expand;   // C_D/4 -> C_D
};

struct DecoderParams {
  std::vector<Conv2dParams> lateral;  // 2^i·C -> C_D, 1×1
  std::vector<LbfrParams> lbfr;
  Conv2dParams head;                  // 3×3, k·C_D -> K

  std::size_t levels() const { return lateral.size(); }
  std::size_t classes() const { return head.out_channels(); }
};

inline SeparablePair make_separable(Rng& rng, std::size_t c_in, std::size_t c_out, std::size_t length) {
  SeparablePair sp;
  sp.horizontal = make_conv(rng, c_out, c_in, 1, length, {1, 1}, {1, 1}, {0, length / 2});
  sp.vertical = make_conv(rng, c_out, c_out, length, 1, {1, 1}, {1, 1}, {length / 2, 0});
  return sp;
}

inline LbfrParams make_lbfr(Rng& rng, std::size_t channels) {
  if (channels < 4 || channels % 4 != 0)
    throw ConfigError("lbfr: decoder width must be a positive multiple of 4, got " + std::to_string(channels));
  LbfrParams p;
  p.separable = make_separable(rng, channels, channels, kSeparableLength);
  p.squeeze = make_conv(rng, channels / 4, channels, 1, 1);
  p.bn = make_batchnorm(channels / 4);
  p.expand = make_conv(rng, channels, channels / 4, 1, 1);
  return p;
}

/// `level_channels[i]` is the encoder width at level i.
inline DecoderParams make_decoder(Rng& rng, const std::vector<std::size_t>& level_channels,
                                  std::size_t decoder_channels, std::size_t classes) {
  if (classes < 2) throw ConfigError("decoder: need at least 2 classes, got " + std::to_string(classes));
  if (level_channels.empty()) throw ConfigError("decoder: empty pyramid");
  DecoderParams p;
  for (auto c : level_channels) {
    p.lateral.push_back(make_conv(rng, decoder_channels, c, 1, 1));
    p.lbfr.push_back(make_lbfr(rng, decoder_channels));
  }
  p.head = make_conv(rng, classes, level_channels.size() * decoder_channels, 3, 3, {1, 1}, {1, 1}, {1, 1});
  return p;
}

inline Tensor lbfr(const Tensor& fe, LbfrParams& p, Mode mode) {
  Tensor attn = separable_conv(fe, p.separable);
  Tensor squeezed = relu(batchnorm(conv2d(attn, p.squeeze), p.bn, mode));
  return add(conv2d(squeezed, p.expand), fe);
}

inline std::vector<Tensor> pyramid_fuse(const std::vector<Tensor>& recalibrated) {
  if (recalibrated.empty()) throw ShapeError("pyramid_fuse: empty pyramid");
  std::vector<Tensor> fused(recalibrated.size());
  fused.back() = recalibrated.back();
  for (std::size_t i = recalibrated.size() - 1; i-- > 0;) {
    const Tensor& r = recalibrated[i];
    const Tensor& up = fused[i + 1];
    if (r.dim(2) != 2 * up.dim(2) || r.dim(3) != 2 * up.dim(3))
      throw ShapeError("pyramid_fuse: level " + std::to_string(i + 1) + " " + to_string(r.shape()) +
                       " is not twice level " + std::to_string(i + 2) + " " + to_string(up.shape()));
    fused[i] = add(r, bilinear_resize(up, r.dim(2), r.dim(3)));
  }
  return fused;
}

/// Logits (N, K, out_h, out_w) from the fused pyramid.
inline Tensor seg_head(const std::vector<Tensor>& fused, const Conv2dParams& head, std::size_t out_h,
                       std::size_t out_w) {
  if (head.out_channels() < 2) throw ConfigError("seg_head: need at least 2 classes");
  if (fused.empty()) throw ShapeError("seg_head: empty pyramid");
  if (out_h % 4 != 0 || out_w % 4 != 0)
    throw ShapeError("seg_head: output extents must be divisible by 4");
  const std::size_t gh = out_h / 4, gw = out_w / 4;
  std::vector<Tensor> grid;
  grid.reserve(fused.size());
  for (const auto& f : fused)
    grid.push_back(f.dim(2) == gh && f.dim(3) == gw ? f : bilinear_resize(f, gh, gw));
  Tensor logits = conv2d(grid.size() == 1 ? grid.front() : concat(grid, 1), head);
  return bilinear_resize(logits, out_h, out_w);
}

inline Tensor decoder_forward(const EncoderOutput& enc, DecoderParams& p, std::size_t out_h, std::size_t out_w,
                              Mode mode) {
  if (enc.pyramid.size() != p.levels())
    throw ShapeError("decoder: pyramid has " + std::to_string(enc.pyramid.size()) + " levels, decoder expects " +
                     std::to_string(p.levels()));
  std::vector<Tensor> recalibrated;
  recalibrated.reserve(p.levels());
  for (std::size_t i = 0; i < p.levels(); ++i)
    recalibrated.push_back(lbfr(conv2d(enc.pyramid[i], p.lateral[i]), p.lbfr[i], mode));
  return seg_head(pyramid_fuse(recalibrated), p.head, out_h, out_w);
}

inline void collect(NamedTensors& out, const std::string& prefix, const LbfrParams& p) {
  collect(out, prefix + ".separable", p.separable);
  collect(out, prefix + ".squeeze", p.squeeze);
  collect(out, prefix + ".bn", p.bn);
  collect(out, prefix + ".expand", p.expand);
}

inline void collect(NamedTensors& out, const std::string& prefix, const DecoderParams& p) {
  for (std::size_t i = 0; i < p.levels(); ++i) {
    collect(out, prefix + ".lateral" + std::to_string(i + 1), p.lateral[i]);
    collect(out, prefix + ".lbfr" + std::to_string(i + 1), p.lbfr[i]);
  }
  collect(out, prefix + ".head", p.head);
}

/// Weight counts (no biases) of the recalibrator's spatial stage and the
/// three dense alternatives with the same 7×7 receptive field, at width C.
struct SpatialStrategyCounts {
  std::size_t separable_pair;    // 1×7 + 7×1
  std::size_t three_3x3;         // 3×3 ∘ 3×3 ∘ 3×3
  std::size_t conv3x3_then_5x5;  // 3×3 ∘ 5×5
  std::size_t single_7x7;
};

inline SpatialStrategyCounts spatial_strategy_counts(std::size_t channels) {
  const std::size_t cc = channels * channels;
  return {2 * kSeparableLength * cc, 27 * cc, (9 + 25) * cc, 49 * cc};
}

}  // namespace odf

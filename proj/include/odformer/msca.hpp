/**
 * @file msca.hpp
 * @brief Multi-scale context aggregator: the image front end.
 *
 * m parallel 3×3 atrous convolutions (dilation d = 1..m, stride 1, same
 * padding) each map RGB to C channels; their concatenation is fused by a 5×5
 * stride-4 convolution back to C channels and layer-normalized over channels.
 * Output extents are a quarter of the input.
 */
#pragma once

#include <string>
#include <vector>

#include "odformer/nn.hpp"
#include "odformer/params.hpp"

namespace odf {

struct MscaParams {
  std::vector<Conv2dParams> branches;  // branch d-1 has dilation d
  Conv2dParams fuse;
  LayerNormParams ln;

  std::size_t channels() const { return fuse.out_channels(); }
};

inline constexpr std::size_t kMaxAtrousBranches = 8;

inline MscaParams make_msca(Rng& rng, std::size_t branches, std::size_t channels,
                            std::size_t in_channels = 3) {
  if (branches < 1 || branches > kMaxAtrousBranches)
    throw ConfigError("msca: branch count m must be in [1,8], got " + std::to_string(branches));
  if (channels == 0 || in_channels == 0) throw ConfigError("msca: channel counts must be positive");
  MscaParams p;
  for (std::size_t d = 1; d <= branches; ++d)
    p.branches.push_back(make_conv(rng, channels, in_channels, 3, 3, {1, 1}, {d, d}, {d, d}));
  p.fuse = make_conv(rng, channels, branches * channels, 5, 5, {4, 4}, {1, 1}, {2, 2});
  p.ln = make_layernorm(channels);
  return p;
}

/// Convolution weights and biases of the branches and the fuse layer.
/// The layer-norm affine (2·C scalars) is not included.
inline std::size_t msca_param_count(const MscaParams& p) {
  if (p.branches.empty() || p.channels() == 0) throw ConfigError("msca: empty configuration");
  std::size_t n = p.fuse.param_count();
  for (const auto& b : p.branches) n += b.param_count();
  return n;
}

/// Closed-form count for (m, C, input channels) without building tensors.
inline std::size_t msca_param_count(std::size_t branches, std::size_t channels, std::size_t in_channels = 3) {
  if (branches == 0 || channels == 0 || in_channels == 0)
    throw ConfigError("msca: branch and channel counts must be positive");
  return branches * (9 * in_channels * channels + channels) + 25 * branches * channels * channels + channels;
}

inline Tensor msca_forward(const Tensor& image, const MscaParams& p) {
  if (image.rank() != 4) throw ShapeError("msca: image must be NCHW, got " + to_string(image.shape()));
  const std::size_t H = image.dim(2), W = image.dim(3);
  if (H < 5 || W < 5) throw ShapeError("msca: image extents must be at least 5, got " + to_string(image.shape()));
  if (H % 4 != 0 || W % 4 != 0)
    throw ShapeError("msca: image extents must be divisible by 4, got " + to_string(image.shape()));
  std::vector<Tensor> scales;
  scales.reserve(p.branches.size());
  for (const auto& branch : p.branches) scales.push_back(conv2d(image, branch));
  Tensor stacked = scales.size() == 1 ? scales.front() : concat(scales, 1);
  return layernorm(conv2d(stacked, p.fuse), p.ln, 1);
}

inline void collect(NamedTensors& out, const std::string& prefix, const MscaParams& p) {
  for (std::size_t i = 0; i < p.branches.size(); ++i)
    collect(out, prefix + ".branch" + std::to_string(i + 1), p.branches[i]);
  collect(out, prefix + ".fuse", p.fuse);
  collect(out, prefix + ".ln", p.ln);
}

}  // namespace odf

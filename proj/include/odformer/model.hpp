/**
 * @file model.hpp
 * @brief Model configuration and the assembled segmentation network.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odformer/decoder.hpp"
#include "odformer/encoder.hpp"
#include "odformer/msca.hpp"
#include "odformer/params.hpp"

namespace odf {

struct ModelConfig {
  // Architecture.
  std::size_t atrous_branches = 3;  // m
  std::vector<std::size_t> depths{2, 2, 2, 2};
  std::vector<std::size_t> heads{2, 2, 4, 4};
  std::size_t channels = 16;          // C^I
  std::size_t window = 4;             // M
  std::size_t decoder_channels = 32;  // C^D
  std::size_t classes = 2;            // K
  // Data.
  std::size_t input_side = 64;
  std::size_t crop = 64;
  bool augment = true;
  // Optimization.
  std::uint64_t seed = 0;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t steps = 300;
  std::size_t eval_every = 25;
  std::size_t batch = 2;
  double clip_norm = 5.0;  // global gradient-norm cap, 0 disables

  std::size_t stages() const { return depths.size(); }

  std::vector<StageConfig> stage_configs() const {
    std::vector<StageConfig> out;
    for (std::size_t i = 0; i < depths.size(); ++i) out.push_back({depths[i], heads[i], window});
    return out;
  }

  /// Input extents must be multiples of this.
  std::size_t side_multiple() const { return std::size_t{4} << (stages() - 1); }

  /// Throws ConfigError naming the first offending field.
  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
    if (atrous_branches < 1 || atrous_branches > kMaxAtrousBranches) fail("m", "must be in [1,8]");
    if (depths.empty()) fail("depths", "need at least one stage");
    if (heads.size() != depths.size()) fail("heads", "need one entry per stage (k = " + std::to_string(depths.size()) + ")");
    if (channels == 0) fail("channels", "must be positive");
    if (window == 0) fail("window", "must be positive");
    if (decoder_channels < 4 || decoder_channels % 4 != 0) fail("decoder_channels", "must be a positive multiple of 4");
    if (classes < 2) fail("classes", "must be at least 2");
    for (std::size_t i = 0; i < depths.size(); ++i) {
      if (depths[i] == 0 || depths[i] % 2 != 0) fail("depths", "stage " + std::to_string(i + 1) + " depth must be even and positive");
      const std::size_t width = channels << i;
      if (heads[i] == 0 || width % heads[i] != 0)
        fail("heads", "stage " + std::to_string(i + 1) + " heads must divide width " + std::to_string(width));
    }
    if (input_side == 0 || input_side % side_multiple() != 0)
      fail("input_side", "must be a positive multiple of " + std::to_string(side_multiple()));
    if (crop == 0) fail("crop", "must be positive");
    if (!(lr >= 0.0)) fail("lr", "must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must be in [0,1)");
    if (steps == 0) fail("steps", "must be positive");
    if (eval_every == 0) fail("eval_every", "must be positive");
    if (batch == 0) fail("batch", "must be positive");
    if (!(clip_norm >= 0.0)) fail("clip_norm", "must be non-negative");
  }

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig full() {
    ModelConfig c;
    c.depths = {2, 2, 6, 2};
    c.heads = {3, 6, 12, 24};
    c.channels = 96;
    c.window = 7;
    c.decoder_channels = 512;
    c.input_side = 512;
    c.crop = 512;
    c.steps = 160000;
    c.eval_every = 16000;
    c.batch = 2;
    return c;
  }
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t stem = cfg_.input_side / 4;
    msca = make_msca(rng, cfg_.atrous_branches, cfg_.channels);
    encoder = make_encoder(rng, cfg_.stage_configs(), cfg_.channels, stem, stem);
    std::vector<std::size_t> widths;
    for (std::size_t i = 0; i < cfg_.stages(); ++i) widths.push_back(cfg_.channels << i);
    decoder = make_decoder(rng, widths, cfg_.decoder_channels, cfg_.classes);
  }

  const ModelConfig& config() const { return cfg_; }

  void check_input(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != 3)
      throw ShapeError("model input must be (N,3,H,W), got " + to_string(image.shape()));
    const std::size_t mult = cfg_.side_multiple();
    if (image.dim(2) % mult != 0 || image.dim(3) % mult != 0)
      throw ShapeError("model input extents " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                       " must be multiples of " + std::to_string(mult));
  }

  EncoderOutput encode(const Tensor& image, AttentionProbe* probe = nullptr) const {
    check_input(image);
    return encoder_forward(msca_forward(image, msca), encoder, probe);
  }

  /// Logits (N, K, H, W).
  Tensor forward(const Tensor& image, Mode mode, AttentionProbe* probe = nullptr) {
    EncoderOutput enc = encode(image, probe);
    return decoder_forward(enc, decoder, image.dim(2), image.dim(3), mode);
  }

  NamedTensors parameters() const {
    NamedTensors out;
    collect(out, "msca", msca);
    collect(out, "encoder", encoder);
    collect(out, "decoder", decoder);
    return out;
  }

  std::vector<Tensor> parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& nt : parameters()) out.push_back(nt.tensor);
    return out;
  }

  /// Non-trainable state: batch-norm running statistics.
  NamedTensors buffers() const {
    NamedTensors out;
    for (std::size_t i = 0; i < decoder.lbfr.size(); ++i) {
      const std::string p = "decoder.lbfr" + std::to_string(i + 1) + ".bn";
      out.push_back({p + ".running_mean", decoder.lbfr[i].bn.running_mean});
      out.push_back({p + ".running_var", decoder.lbfr[i].bn.running_var});
    }
    return out;
  }

  bool running_stats_ready() const {
    for (const auto& l : decoder.lbfr)
      if (!l.bn.stats_ready) return false;
    return true;
  }

  void mark_running_stats_ready() {
    for (auto& l : decoder.lbfr) l.bn.stats_ready = true;
  }

  std::size_t parameter_count() const { return count(parameters()); }

  MscaParams msca;
  EncoderParams encoder;
  DecoderParams decoder;

 private:
  ModelConfig cfg_;
};

}  // namespace odf

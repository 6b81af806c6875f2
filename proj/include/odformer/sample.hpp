/**
 * @file sample.hpp
 * @brief Fundus samples, preprocessing, augmentation and a synthetic
 * fundus generator for hermetic runs.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "odformer/netpbm.hpp"
#include "odformer/nn.hpp"
#include "odformer/params.hpp"

namespace odf {

enum class Split { train, val };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

struct FundusSample {
  Tensor image;  // (3, H, W)
  Mask mask;
  std::string id;
  Split split = Split::train;
  std::string participant;  // optional

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
};

inline void check_sample(const FundusSample& s) {
  if (!s.image.defined() || s.image.rank() != 3 || s.image.dim(0) != 3)
    throw ShapeError("sample " + s.id + ": image must be (3,H,W)");
  if (s.mask.height != s.height() || s.mask.width != s.width())
    throw ShapeError("sample " + s.id + ": image " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                     " vs mask " + std::to_string(s.mask.height) + "x" + std::to_string(s.mask.width));
}

/// Centre square crop of side `crop`, then image bilinear / mask
/// nearest-neighbour resize to `side`×`side`. Values stay in [0,1].
inline FundusSample crop_resize(const FundusSample& s, std::size_t crop, std::size_t side) {
  check_sample(s);
  const std::size_t H = s.height(), W = s.width();
  if (crop == 0 || crop > std::min(H, W))
    throw ShapeError("sample " + s.id + ": crop " + std::to_string(crop) + " exceeds image " + std::to_string(H) + "x" +
                     std::to_string(W));
  const std::size_t y0 = (H - crop) / 2, x0 = (W - crop) / 2;
  Tensor cropped({1, 3, crop, crop});
  Mask cm{crop, crop, std::vector<std::uint8_t>(crop * crop)};
  for (std::size_t y = 0; y < crop; ++y)
    for (std::size_t x = 0; x < crop; ++x) {
      for (std::size_t c = 0; c < 3; ++c) cropped[(c * crop + y) * crop + x] = s.image[(c * H + y0 + y) * W + x0 + x];
      cm.at(y, x) = s.mask.at(y0 + y, x0 + x);
    }
  FundusSample out = s;
  if (crop == side) {
    out.image = reshape(cropped, {3, side, side});
    out.mask = std::move(cm);
    return out;
  }
  NoGradScope no_grad;
  out.image = reshape(bilinear_resize(cropped, side, side), {3, side, side});
  out.mask = Mask{side, side, std::vector<std::uint8_t>(side * side)};
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t sy = std::min(crop - 1, (2 * y + 1) * crop / (2 * side));
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t sx = std::min(crop - 1, (2 * x + 1) * crop / (2 * side));
      out.mask.at(y, x) = cm.at(sy, sx);
    }
  }
  return out;
}

inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.5;

inline Tensor standardize(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = (image[i] - kPixelMean) / kPixelStd;
  return out;
}

/// crop_resize followed by per-channel standardization.
inline FundusSample preprocess(const FundusSample& s, std::size_t crop, std::size_t side) {
  FundusSample out = crop_resize(s, crop, side);
  out.image = standardize(out.image);
  return out;
}

struct AugmentParams {
  bool flip = false;
  bool photometric = false;
  double brightness = 0.0;  // additive, in [0,1] pixel units
  double contrast = 1.0;    // multiplicative
};

/// Each transform fires with probability 0.5.
inline AugmentParams draw_augment(Rng& rng) {
  AugmentParams a;
  a.flip = rng.uniform(0.0, 1.0) < 0.5;
  a.photometric = rng.uniform(0.0, 1.0) < 0.5;
  const double brightness = rng.uniform(-32.0 / 255.0, 32.0 / 255.0);
  const double contrast = rng.uniform(0.5, 1.5);
  if (a.photometric) {
    a.brightness = brightness;
    a.contrast = contrast;
  }
  return a;
}

/// Flip acts jointly on image and mask; photometric distortion touches the
/// image only and clamps to [0,1] after each step.
inline FundusSample apply_augment(const FundusSample& s, const AugmentParams& a) {
  check_sample(s);
  FundusSample out = s;
  const std::size_t H = s.height(), W = s.width();
  out.image = s.image.detach();
  if (a.flip) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) out.image[(c * H + y) * W + x] = s.image[(c * H + y) * W + (W - 1 - x)];
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out.mask.at(y, x) = s.mask.at(y, W - 1 - x);
  }
  if (a.photometric) {
    for (auto& v : out.image.data()) {
      v = std::clamp(v + a.brightness, 0.0, 1.0);
      v = std::clamp(v * a.contrast, 0.0, 1.0);
    }
  }
  return out;
}

inline FundusSample augment(const FundusSample& s, Rng& rng) { return apply_augment(s, draw_augment(rng)); }

/// Geometry of a generated sample, exposed for containment checks.
struct SynthGeometry {
  double fov_cx, fov_cy, fov_radius;
  double disc_cx, disc_cy, semi_a, semi_b, tilt;
};

namespace detail {

inline bool inside_ellipse(double x, double y, const SynthGeometry& g) {
  const double dx = x - g.disc_cx, dy = y - g.disc_cy;
  const double c = std::cos(g.tilt), s = std::sin(g.tilt);
  const double u = (dx * c + dy * s) / g.semi_a;
  const double v = (-dx * s + dy * c) / g.semi_b;
  return u * u + v * v <= 1.0;
}

}  // namespace detail

inline SynthGeometry synth_geometry(std::uint64_t seed, std::size_t side) {
  Rng rng(seed);
  const double S = static_cast<double>(side);
  SynthGeometry g{};
  g.fov_cx = S / 2.0;
  g.fov_cy = S / 2.0;
  g.fov_radius = 0.47 * S;
  g.semi_a = rng.uniform(0.08, 0.20) * S;
  g.semi_b = rng.uniform(0.08, 0.20) * S;
  g.tilt = rng.uniform(0.0, std::numbers::pi);
  const double reach = g.fov_radius - std::max(g.semi_a, g.semi_b) - 1.0;
  const double rho = reach * std::sqrt(rng.uniform(0.0, 1.0));
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  g.disc_cx = g.fov_cx + rho * std::cos(phi);
  g.disc_cy = g.fov_cy + rho * std::sin(phi);
  return g;
}

/// Deterministic synthetic fundus photograph: reddish textured retina inside
/// a circular field of view, a bright tilted elliptical disc (the mask) and
/// 3–6 dark vessels radiating from the disc centre.
inline FundusSample synth_fundus(std::uint64_t seed, std::size_t side) {
  if (side < 32) throw ConfigError("synth: side must be at least 32, got " + std::to_string(side));
  const SynthGeometry g = synth_geometry(seed, side);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double S = static_cast<double>(side);

  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i) {
    const double freq = rng.uniform(2.0, 9.0) * 2.0 * std::numbers::pi / S;
    const double ang = rng.uniform(0.0, std::numbers::pi);
    waves.push_back({freq * std::cos(ang), freq * std::sin(ang), rng.uniform(0.0, 2.0 * std::numbers::pi),
                     rng.uniform(0.015, 0.04)});
  }

  // Vessel polylines.
  struct Segment {
    double x0, y0, x1, y1, radius;
  };
  std::vector<Segment> vessels;
  const int n_vessels = 3 + static_cast<int>(rng.uniform(0.0, 4.0));
  for (int v = 0; v < n_vessels; ++v) {
    double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double x = g.disc_cx, y = g.disc_cy;
    const double step = g.fov_radius / 5.0;
    const double radius = std::max(0.6, S / 160.0) * rng.uniform(0.8, 1.4);
    for (int k = 0; k < 8; ++k) {
      ang += rng.uniform(-0.35, 0.35);
      const double nx = x + step * std::cos(ang), ny = y + step * std::sin(ang);
      vessels.push_back({x, y, nx, ny, radius});
      x = nx;
      y = ny;
    }
  }
  auto vessel_distance = [&](double px, double py) {
    double best = 1e30;
    for (const auto& s : vessels) {
      const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
      const double t = std::clamp(((px - s.x0) * vx + (py - s.y0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
      const double dx = px - (s.x0 + t * vx), dy = py - (s.y0 + t * vy);
      best = std::min(best, std::sqrt(dx * dx + dy * dy) - s.radius);
    }
    return best;
  };

  FundusSample out;
  out.id = "synth_" + std::to_string(seed);
  out.image = Tensor({3, side, side});
  out.mask = Mask{side, side, std::vector<std::uint8_t>(side * side, 0)};
  const std::size_t plane = side * side;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double r = std::hypot(px - g.fov_cx, py - g.fov_cy) / g.fov_radius;
      double rgb[3] = {0.0, 0.0, 0.0};
      if (r <= 1.0) {
        double tex = 0.0;
        for (const auto& w : waves) tex += w.amp * std::sin(w.kx * px + w.ky * py + w.phase);
        const double shade = 1.0 - 0.35 * r * r;
        rgb[0] = 0.62 * shade + tex;
        rgb[1] = 0.24 * shade + 0.5 * tex;
        rgb[2] = 0.10 * shade + 0.25 * tex;
        if (detail::inside_ellipse(px, py, g)) {
          out.mask.at(y, x) = 1;
          rgb[0] = 0.97;
          rgb[1] = 0.86 + 0.5 * tex;
          rgb[2] = 0.52 + 0.5 * tex;
        }
        const double d = vessel_distance(px, py);
        if (d < 0.5) {
          const double a = std::clamp(0.5 - d, 0.0, 1.0) * 0.75;
          rgb[0] = (1.0 - a) * rgb[0] + a * 0.32;
          rgb[1] = (1.0 - a) * rgb[1] + a * 0.05;
          rgb[2] = (1.0 - a) * rgb[2] + a * 0.05;
        }
      }
      for (std::size_t c = 0; c < 3; ++c) out.image[c * plane + y * side + x] = std::clamp(rgb[c], 0.0, 1.0);
    }
  return out;
}

}  // namespace odf

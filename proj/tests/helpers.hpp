#pragma once

// Random instance generators shared across test files.

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/losses.hpp"
#include "wsol/pseudolabels.hpp"

namespace testgen {

inline wsol::GrayMap random_map(wsol::Rng& rng, int w, int h, double lo = -1.0,
                                double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (double& x : v) x = rng.uniform(lo, hi);
  return wsol::GrayMap(w, h, std::move(v));
}

// Values quantized to 256 levels inside a random affine range.
inline wsol::GrayMap random_quantized_map(wsol::Rng& rng, int w, int h) {
  const double lo = rng.uniform(-2.0, 2.0);
  const double span = rng.uniform(0.1, 3.0);
  std::vector<double> v(static_cast<std::size_t>(w) * h);
  for (double& x : v)
    x = lo + span * static_cast<double>(rng.uniform_below(256)) / 255.0;
  return wsol::GrayMap(w, h, std::move(v));
}

inline wsol::BinaryMask random_mask(wsol::Rng& rng, int w, int h, double density) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
  for (auto& b : bits) b = rng.uniform01() < density;
  return wsol::BinaryMask(w, h, std::move(bits));
}

inline wsol::Image random_image(wsol::Rng& rng, int w, int h, int c = 3) {
  std::vector<double> v(static_cast<std::size_t>(w) * h * c);
  for (double& x : v) x = rng.uniform01();
  return wsol::Image(w, h, c, std::move(v));
}

inline wsol::MapLogits random_logits(wsol::Rng& rng, int w, int h, double scale = 3.0) {
  wsol::MapLogits z(w, h);
  for (std::size_t i = 0; i < z.fg().size(); ++i) {
    z.fg()[i] = rng.uniform(-scale, scale);
    z.bg()[i] = rng.uniform(-scale, scale);
  }
  return z;
}

// Roughly a quarter each FG and BG, rest UNKNOWN; always at least one label.
inline wsol::PseudoLabelMask random_pseudo_mask(wsol::Rng& rng, int w, int h) {
  std::vector<wsol::PixelLabel> labels(static_cast<std::size_t>(w) * h,
                                       wsol::PixelLabel::kUnknown);
  for (auto& l : labels) {
    const double u = rng.uniform01();
    if (u < 0.25) l = wsol::PixelLabel::kForeground;
    else if (u < 0.5) l = wsol::PixelLabel::kBackground;
  }
  labels[0] = wsol::PixelLabel::kForeground;
  return wsol::PseudoLabelMask(w, h, std::move(labels));
}

inline wsol::LocalizationMap random_locmap(wsol::Rng& rng, int w, int h) {
  return wsol::softmax_map(random_logits(rng, w, h));
}

}  // namespace testgen

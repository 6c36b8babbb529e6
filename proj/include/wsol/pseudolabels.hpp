#pragma once

// Stochastic pixel-wise pseudo-labels. Foreground pixels are drawn from the
// strongest activations inside a proposal box (multinomial, weight
// proportional to activation); background pixels are drawn uniformly from the
// weakest activations outside every pool box. Resampled at every step.

#include <algorithm>
#include <optional>
#include <vector>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"

namespace wsol {

enum class PixelLabel : std::uint8_t { kUnknown = 0, kBackground = 1, kForeground = 2 };

struct Pixel {
  int x, y;
  bool operator==(const Pixel&) const = default;
};

struct SamplingConfig {
  // Candidate pool sizes. Absolute when > 0, otherwise the fraction below is
  // applied to the region area (box interior for FG, box-union exterior for
  // BG), with a minimum of one candidate.
  int n_plus = 0;
  int n_minus = 0;
  double fg_pool_fraction = 0.3;
  double bg_pool_fraction = 0.3;
  int samples_per_side = 10;

  int fg_pool_size(std::int64_t box_area) const {
    const std::int64_t want =
        n_plus > 0 ? n_plus
                   : std::max<std::int64_t>(
                         1, std::llround(fg_pool_fraction * static_cast<double>(box_area)));
    return static_cast<int>(std::clamp<std::int64_t>(want, 1, box_area));
  }

  int bg_pool_size(std::int64_t exterior_area) const {
    const std::int64_t want =
        n_minus > 0
            ? n_minus
            : std::max<std::int64_t>(
                  1, std::llround(bg_pool_fraction * static_cast<double>(exterior_area)));
    return static_cast<int>(std::clamp<std::int64_t>(want, 1, exterior_area));
  }
};

namespace detail {

struct Candidate {
  double value;
  std::int64_t index;
};

inline void sort_desc(std::vector<Candidate>& c) {
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.index < b.index;
  });
}

inline void sort_asc(std::vector<Candidate>& c) {
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.value != b.value) return a.value < b.value;
    return a.index < b.index;
  });
}

inline Pixel to_pixel(std::int64_t index, int width) {
  return Pixel{static_cast<int>(index % width), static_cast<int>(index / width)};
}

}  // namespace detail

/// Draws `samples_per_side` distinct pixels from the top-n+ activations inside
/// the box, multinomially with probability proportional to activation.
/// Weights are shifted only when the candidate minimum is not strictly
/// positive (attention values can be <= 0), so already-positive activations
/// stay exactly proportional. Clipping handles boxes smaller than the
/// requested pool or sample count.
inline std::vector<Pixel> sample_foreground(const GrayMap& e, const Box& box,
                                            const SamplingConfig& cfg, Rng& rng) {
  check(box.within(e.width(), e.height()), errc::out_of_bounds,
        "sample_foreground: box outside map");
  std::vector<detail::Candidate> cand;
  cand.reserve(static_cast<std::size_t>(box.area()));
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x)
      cand.push_back({e.at(x, y), static_cast<std::int64_t>(y) * e.width() + x});
  detail::sort_desc(cand);
  cand.resize(static_cast<std::size_t>(cfg.fg_pool_size(box.area())));

  double min_v = cand.back().value;
  for (const auto& c : cand) min_v = std::min(min_v, c.value);
  const double shift = min_v > 0.0 ? 0.0 : -min_v + 1e-8;

  std::vector<double> weight(cand.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    weight[i] = cand[i].value + shift;
    total += weight[i];
  }

  const std::size_t draws =
      std::min<std::size_t>(cand.size(), static_cast<std::size_t>(cfg.samples_per_side));
  std::vector<Pixel> out;
  out.reserve(draws);
  for (std::size_t n = 0; n < draws; ++n) {
    const double r = rng.uniform01() * total;
    double cum = 0.0;
    std::size_t pick = cand.size();
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (weight[i] <= 0.0) continue;
      cum += weight[i];
      pick = i;
      if (cum > r) break;
    }
    check(pick < cand.size(), errc::invalid_argument, "foreground pool exhausted");
    out.push_back(detail::to_pixel(cand[pick].index, e.width()));
    total -= weight[pick];
    weight[pick] = 0.0;
  }
  return out;
}

/// Draws `samples_per_side` distinct pixels uniformly from the low-n-
/// activations outside every box. Returns nullopt when the boxes cover the
/// whole domain (no background exists); callers skip background supervision
/// for that step.
inline std::optional<std::vector<Pixel>> sample_background(const GrayMap& e,
                                                           const std::vector<Box>& all_boxes,
                                                           const SamplingConfig& cfg,
                                                           Rng& rng) {
  const int w = e.width(), h = e.height();
  for (const Box& b : all_boxes)
    check(b.within(w, h), errc::out_of_bounds, "sample_background: box outside map");

  std::vector<std::uint8_t> inside(static_cast<std::size_t>(w) * h, 0);
  for (const Box& b : all_boxes)
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) inside[static_cast<std::size_t>(y) * w + x] = 1;

  std::vector<detail::Candidate> cand;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t idx = static_cast<std::int64_t>(y) * w + x;
      if (!inside[static_cast<std::size_t>(idx)]) cand.push_back({e.at(x, y), idx});
    }
  if (cand.empty()) return std::nullopt;

  detail::sort_asc(cand);
  cand.resize(
      static_cast<std::size_t>(cfg.bg_pool_size(static_cast<std::int64_t>(cand.size()))));

  std::vector<std::size_t> pool(cand.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  const std::size_t draws =
      std::min<std::size_t>(pool.size(), static_cast<std::size_t>(cfg.samples_per_side));
  std::vector<Pixel> out;
  out.reserve(draws);
  for (std::size_t n = 0; n < draws; ++n) {
    const std::size_t j = n + static_cast<std::size_t>(rng.uniform_below(pool.size() - n));
    std::swap(pool[n], pool[j]);
    out.push_back(detail::to_pixel(cand[pool[n]].index, w));
  }
  return out;
}

// Partial per-pixel supervision: FG / BG at sampled locations, UNKNOWN
// elsewhere. Always holds at least one labeled pixel.
class PseudoLabelMask {
 public:
  PseudoLabelMask(int width, int height, std::vector<PixelLabel> labels)
      : width_(width), height_(height), labels_(std::move(labels)) {
    check(width_ > 0 && height_ > 0, errc::invalid_argument, "empty mask");
    check(labels_.size() == static_cast<std::size_t>(width_) * height_,
          errc::invalid_argument, "label length mismatch");
    std::int64_t labeled = 0;
    for (PixelLabel l : labels_) labeled += l != PixelLabel::kUnknown;
    check(labeled > 0, errc::all_unknown, "pseudo-label mask has no labeled pixels");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  PixelLabel at(int x, int y) const {
    return labels_[static_cast<std::size_t>(y) * width_ + x];
  }
  std::span<const PixelLabel> labels() const { return labels_; }
  std::int64_t labeled_count() const {
    std::int64_t n = 0;
    for (PixelLabel l : labels_) n += l != PixelLabel::kUnknown;
    return n;
  }

 private:
  int width_, height_;
  std::vector<PixelLabel> labels_;
};

inline PseudoLabelMask build_pseudo_mask(const std::vector<Pixel>& fg,
                                         const std::vector<Pixel>& bg, int width,
                                         int height) {
  std::vector<PixelLabel> labels(static_cast<std::size_t>(width) * height,
                                 PixelLabel::kUnknown);
  for (const Pixel& p : fg) {
    check(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height, errc::out_of_bounds,
          "foreground pixel outside mask");
    labels[static_cast<std::size_t>(p.y) * width + p.x] = PixelLabel::kForeground;
  }
  for (const Pixel& p : bg) {
    check(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height, errc::out_of_bounds,
          "background pixel outside mask");
    PixelLabel& slot = labels[static_cast<std::size_t>(p.y) * width + p.x];
    check(slot != PixelLabel::kForeground, errc::overlap,
          "pixel labeled both foreground and background");
    slot = PixelLabel::kBackground;
  }
  return PseudoLabelMask(width, height, std::move(labels));
}

/// Inspection export: FG=255, BG=0, UNKNOWN=128.
inline void save_pseudo_mask_pgm(const PseudoLabelMask& mask,
                                 const std::filesystem::path& p) {
  std::vector<double> data(mask.labels().size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    switch (mask.labels()[i]) {
      case PixelLabel::kForeground: data[i] = 1.0; break;
      case PixelLabel::kBackground: data[i] = 0.0; break;
      case PixelLabel::kUnknown: data[i] = 128.0 / 255.0; break;
    }
  }
  save_pgm(Image(mask.width(), mask.height(), 1, std::move(data)), p);
}

}  // namespace wsol

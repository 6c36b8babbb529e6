#pragma once

// The localization objective. A two-channel map S = (S0, S1) is produced by a
// per-pixel softmax over free logits; the loss combines partial cross-entropy
// against a sparse pseudo-label mask with a pairwise affinity regularizer
//
//   R(S, X) = sum_r  S_r^T W (1 - S_r),   r in {background, foreground},
//
// where W is a truncated Gaussian kernel over pixel proximity and color
// similarity. Both terms come with analytic gradients with respect to the
// logits.

#include <cmath>
#include <vector>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/pseudolabels.hpp"

namespace wsol {

// Unconstrained per-pixel logits; the softmax pre-image of a LocalizationMap.
class MapLogits {
 public:
  MapLogits(int width, int height)
      : width_(width),
        height_(height),
        bg_(static_cast<std::size_t>(width) * height, 0.0),
        fg_(static_cast<std::size_t>(width) * height, 0.0) {
    check(width_ > 0 && height_ > 0, errc::invalid_argument, "empty logits");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::vector<double>& bg() { return bg_; }
  std::vector<double>& fg() { return fg_; }
  const std::vector<double>& bg() const { return bg_; }
  const std::vector<double>& fg() const { return fg_; }

 private:
  int width_, height_;
  std::vector<double> bg_, fg_;
};

// Softmax-normalized two-channel map; per pixel S0 + S1 = 1.
class LocalizationMap {
 public:
  LocalizationMap(int width, int height, std::vector<double> bg, std::vector<double> fg)
      : width_(width), height_(height), bg_(std::move(bg)), fg_(std::move(fg)) {
    check(width_ > 0 && height_ > 0, errc::invalid_argument, "empty map");
    const std::size_t n = static_cast<std::size_t>(width_) * height_;
    check(bg_.size() == n && fg_.size() == n, errc::invalid_argument,
          "channel length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      check(bg_[i] >= 0.0 && bg_[i] <= 1.0 && fg_[i] >= 0.0 && fg_[i] <= 1.0,
            errc::invalid_argument, "map probability outside [0,1]");
      check(std::abs(bg_[i] + fg_[i] - 1.0) <= 1e-6, errc::invalid_argument,
            "map channels do not sum to 1");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double bg_at(int x, int y) const { return bg_[static_cast<std::size_t>(y) * width_ + x]; }
  double fg_at(int x, int y) const { return fg_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<double>& bg() const { return bg_; }
  const std::vector<double>& fg() const { return fg_; }

  /// Builds the map from a foreground channel; backgrounds are complements.
  static LocalizationMap from_foreground(const GrayMap& fg_map) {
    std::vector<double> fg(fg_map.values().begin(), fg_map.values().end());
    std::vector<double> bg(fg.size());
    for (std::size_t i = 0; i < fg.size(); ++i) {
      check(fg[i] >= 0.0 && fg[i] <= 1.0, errc::invalid_argument,
            "foreground channel outside [0,1]");
      bg[i] = 1.0 - fg[i];
    }
    return LocalizationMap(fg_map.width(), fg_map.height(), std::move(bg), std::move(fg));
  }

  /// Min-max normalizes an arbitrary score map into a foreground channel;
  /// constant maps become all-0.5.
  static LocalizationMap from_scores(const GrayMap& scores) {
    double mn = scores.values()[0], mx = scores.values()[0];
    for (double v : scores.values()) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    std::vector<double> fg(scores.values().size());
    for (std::size_t i = 0; i < fg.size(); ++i)
      fg[i] = mx > mn ? (scores.values()[i] - mn) / (mx - mn) : 0.5;
    std::vector<double> bg(fg.size());
    for (std::size_t i = 0; i < fg.size(); ++i) bg[i] = 1.0 - fg[i];
    return LocalizationMap(scores.width(), scores.height(), std::move(bg), std::move(fg));
  }

 private:
  int width_, height_;
  std::vector<double> bg_, fg_;
};

inline LocalizationMap softmax_map(const MapLogits& logits) {
  const std::size_t n = logits.bg().size();
  std::vector<double> bg(n), fg(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double zb = logits.bg()[i], zf = logits.fg()[i];
    const double m = std::max(zb, zf);
    const double eb = std::exp(zb - m), ef = std::exp(zf - m);
    const double sum = eb + ef;
    bg[i] = eb / sum;
    fg[i] = ef / sum;
  }
  return LocalizationMap(logits.width(), logits.height(), std::move(bg), std::move(fg));
}

struct AffinityParams {
  double sigma_spatial = 2.0;  // pixels
  double sigma_color = 0.1;    // intensity units in [0,1]
  int radius = 5;              // Chebyshev truncation of W
};

// W materialized as an undirected pair list (i < j). Entries beyond the
// Chebyshev radius are zero; the diagonal is zero. Built once per image and
// reused across optimization steps.
class PairwiseAffinity {
 public:
  struct Pair {
    std::int32_t i, j;
    double weight;
  };

  static PairwiseAffinity build(const Image& img, const AffinityParams& p) {
    check(p.sigma_spatial > 0.0 && p.sigma_color > 0.0 && p.radius >= 1,
          errc::invalid_argument, "bad affinity parameters");
    const int w = img.width(), h = img.height(), c = img.channels();

    // Spatial factor depends only on the offset; hoist it out of the pixel loop.
    struct Offset {
      int dx, dy;
      double spatial;
    };
    std::vector<Offset> offsets;
    for (int dy = 0; dy <= p.radius; ++dy) {
      for (int dx = dy == 0 ? 1 : -p.radius; dx <= p.radius; ++dx) {
        const double d2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
        offsets.push_back(
            {dx, dy, std::exp(-d2 / (2.0 * p.sigma_spatial * p.sigma_spatial))});
      }
    }

    PairwiseAffinity out;
    out.width_ = w;
    out.height_ = h;
    const double inv2sc = 1.0 / (2.0 * p.sigma_color * p.sigma_color);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::int32_t i = static_cast<std::int32_t>(y) * w + x;
        for (const Offset& o : offsets) {
          const int nx = x + o.dx, ny = y + o.dy;
          if (nx < 0 || nx >= w || ny >= h) continue;
          const std::int32_t j = static_cast<std::int32_t>(ny) * w + nx;
          double color2 = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            const double d = img.at(x, y, ch) - img.at(nx, ny, ch);
            color2 += d * d;
          }
          out.pairs_.push_back({i, j, o.spatial * std::exp(-color2 * inv2sc)});
        }
      }
    }
    return out;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<Pair>& pairs() const { return pairs_; }

  // Sum of W over ordered pixel pairs (i != j); each stored pair counts twice.
  double total_weight() const {
    double t = 0.0;
    for (const Pair& p : pairs_) t += p.weight;
    return 2.0 * t;
  }

 private:
  int width_ = 0, height_ = 0;
  std::vector<Pair> pairs_;
};

struct LossResult {
  double loss;
  MapLogits grad;  // gradient with respect to the map logits
};

/// Partial cross-entropy over labeled pixels only. Probabilities are clamped
/// to [1e-12, 1] inside the log; the gradient is softmax-minus-onehot at
/// labeled pixels and zero at UNKNOWN ones.
inline LossResult partial_ce(const PseudoLabelMask& y, const LocalizationMap& s) {
  check(y.width() == s.width() && y.height() == s.height(), errc::dimension_mismatch,
        "pseudo-labels and map differ in size");
  LossResult r{0.0, MapLogits(s.width(), s.height())};
  std::int64_t labeled = 0;
  const std::size_t n = s.bg().size();
  for (std::size_t i = 0; i < n; ++i) {
    const PixelLabel l = y.labels()[i];
    if (l == PixelLabel::kUnknown) continue;
    ++labeled;
    const double sb = s.bg()[i], sf = s.fg()[i];
    if (l == PixelLabel::kForeground) {
      r.loss += -std::log(std::max(sf, 1e-12));
      r.grad.fg()[i] = sf - 1.0;
      r.grad.bg()[i] = sb;
    } else {
      r.loss += -std::log(std::max(sb, 1e-12));
      r.grad.fg()[i] = sf;
      r.grad.bg()[i] = sb - 1.0;
    }
  }
  check(labeled > 0, errc::all_unknown, "no labeled pixels");
  return r;
}

/// The pairwise regularizer against a prebuilt affinity. With two
/// complementary channels both r-terms of the channel sum are equal, so the
/// foreground channel is evaluated once and doubled; the identity
/// dR/dS_r = W (1 - 2 S_r) then chains through the per-pixel softmax
/// Jacobian.
inline LossResult crf_loss(const LocalizationMap& s, const PairwiseAffinity& affinity) {
  check(s.width() == affinity.width() && s.height() == affinity.height(),
        errc::dimension_mismatch, "map and affinity differ in size");
  const std::vector<double>& fg = s.fg();
  std::vector<double> acc(fg.size(), 0.0);  // sum_j W_kj (1 - 2 S1_j)
  double loss = 0.0;
  for (const PairwiseAffinity::Pair& p : affinity.pairs()) {
    const double si = fg[static_cast<std::size_t>(p.i)];
    const double sj = fg[static_cast<std::size_t>(p.j)];
    loss += p.weight * (si + sj - 2.0 * si * sj);
    acc[static_cast<std::size_t>(p.i)] += p.weight * (1.0 - 2.0 * sj);
    acc[static_cast<std::size_t>(p.j)] += p.weight * (1.0 - 2.0 * si);
  }
  LossResult r{2.0 * loss, MapLogits(s.width(), s.height())};
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const double g = 2.0 * s.fg()[i] * s.bg()[i] * acc[i];
    r.grad.fg()[i] = g;
    r.grad.bg()[i] = -g;
  }
  return r;
}

inline LossResult crf_loss(const LocalizationMap& s, const Image& img,
                           const AffinityParams& params) {
  check(s.width() == img.width() && s.height() == img.height(), errc::dimension_mismatch,
        "map and image differ in size");
  return crf_loss(s, PairwiseAffinity::build(img, params));
}

/// lambda1 * partial CE + lambda2 * CRF, gradients summed. Components with a
/// zero weight are not evaluated.
inline LossResult total_loss(const PseudoLabelMask& y, const LocalizationMap& s,
                             const PairwiseAffinity& affinity, double lambda1,
                             double lambda2) {
  LossResult r{0.0, MapLogits(s.width(), s.height())};
  if (lambda1 != 0.0) {
    const LossResult ce = partial_ce(y, s);
    r.loss += lambda1 * ce.loss;
    for (std::size_t i = 0; i < r.grad.fg().size(); ++i) {
      r.grad.fg()[i] += lambda1 * ce.grad.fg()[i];
      r.grad.bg()[i] += lambda1 * ce.grad.bg()[i];
    }
  }
  if (lambda2 != 0.0) {
    const LossResult crf = crf_loss(s, affinity);
    r.loss += lambda2 * crf.loss;
    for (std::size_t i = 0; i < r.grad.fg().size(); ++i) {
      r.grad.fg()[i] += lambda2 * crf.grad.fg()[i];
      r.grad.bg()[i] += lambda2 * crf.grad.bg()[i];
    }
  }
  return r;
}

inline LossResult total_loss(const PseudoLabelMask& y, const LocalizationMap& s,
                             const Image& img, double lambda1, double lambda2,
                             const AffinityParams& params) {
  if (lambda2 == 0.0) {
    LossResult r{0.0, MapLogits(s.width(), s.height())};
    if (lambda1 != 0.0) {
      const LossResult ce = partial_ce(y, s);
      r.loss = lambda1 * ce.loss;
      for (std::size_t i = 0; i < r.grad.fg().size(); ++i) {
        r.grad.fg()[i] = lambda1 * ce.grad.fg()[i];
        r.grad.bg()[i] = lambda1 * ce.grad.bg()[i];
      }
    }
    return r;
  }
  return total_loss(y, s, PairwiseAffinity::build(img, params), lambda1, lambda2);
}

}  // namespace wsol

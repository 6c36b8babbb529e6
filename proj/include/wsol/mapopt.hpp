#pragma once

// Per-image localization-map optimization. Plain gradient descent on free map
// logits: at every step a proposal is drawn uniformly from the pool, fresh
// foreground/background pseudo-labels are sampled from it, and one step is
// taken on the combined partial-CE + CRF objective. Replaces a trained
// decoder network at desk scale while exercising the identical losses and
// sampling protocol.

#include <optional>
#include <vector>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/losses.hpp"
#include "wsol/proposals.hpp"
#include "wsol/pseudolabels.hpp"

namespace wsol {

struct OptConfig {
  int steps = 500;
  double learning_rate = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 2e-9;
  SamplingConfig sampling{};
  AffinityParams affinity{};
  std::uint64_t seed = 0;
};

struct OptTrace {
  struct Step {
    int proposal_index;
    double loss;
  };
  std::vector<Step> steps;
};

struct OptResult {
  LocalizationMap map;
  OptTrace trace;
};

/// Fully deterministic given cfg.seed. Logits start at zero (the uniform
/// map). When the pool boxes cover the whole image a step proceeds with
/// foreground-only supervision instead of stalling.
inline OptResult optimize_map(const Image& img, const AttentionStack& stack,
                              const ProposalPool& pool, const OptConfig& cfg) {
  check(!pool.empty(), errc::empty_pool, "cannot optimize without proposals");
  check(cfg.steps >= 1, errc::invalid_argument, "steps must be >= 1");
  check(cfg.learning_rate >= 0.0, errc::invalid_argument, "negative learning rate");
  check(stack.width() == img.width() && stack.height() == img.height(),
        errc::dimension_mismatch, "attention stack does not match image resolution");
  for (const ScoredBox& sb : pool.entries) {
    check(sb.map_index >= 0 && sb.map_index < stack.size(), errc::out_of_bounds,
          "proposal references a missing attention map");
    check(sb.box.within(img.width(), img.height()), errc::out_of_bounds,
          "proposal box outside image");
  }

  std::vector<Box> all_boxes;
  all_boxes.reserve(pool.size());
  for (const ScoredBox& sb : pool.entries) all_boxes.push_back(sb.box);

  std::optional<PairwiseAffinity> affinity;
  if (cfg.lambda2 != 0.0) affinity = PairwiseAffinity::build(img, cfg.affinity);

  Rng rng(cfg.seed);
  MapLogits logits(img.width(), img.height());
  OptTrace trace;
  trace.steps.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t pick = select_random_proposal_index(pool, rng);
    const ScoredBox& sb = pool.entries[pick];
    const GrayMap& e = stack.map(sb.map_index);

    const std::vector<Pixel> fg = sample_foreground(e, sb.box, cfg.sampling, rng);
    const std::optional<std::vector<Pixel>> bg =
        sample_background(e, all_boxes, cfg.sampling, rng);
    const PseudoLabelMask y = build_pseudo_mask(fg, bg ? *bg : std::vector<Pixel>{},
                                                img.width(), img.height());

    const LocalizationMap s = softmax_map(logits);
    const LossResult r = affinity
                             ? total_loss(y, s, *affinity, cfg.lambda1, cfg.lambda2)
                             : total_loss(y, s, img, cfg.lambda1, cfg.lambda2, cfg.affinity);

    for (std::size_t i = 0; i < logits.fg().size(); ++i) {
      logits.fg()[i] -= cfg.learning_rate * r.grad.fg()[i];
      logits.bg()[i] -= cfg.learning_rate * r.grad.bg()[i];
    }
    trace.steps.push_back({static_cast<int>(pick), r.loss});
  }

  return OptResult{softmax_map(logits), std::move(trace)};
}

inline BinaryMask binarize_map(const LocalizationMap& s, double tau) {
  check(tau >= 0.0 && tau <= 1.0, errc::invalid_argument, "tau outside [0,1]");
  std::vector<std::uint8_t> bits(s.fg().size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = s.fg()[i] > tau;
  return BinaryMask(s.width(), s.height(), std::move(bits));
}

inline void save_trace(const OptTrace& trace, const std::filesystem::path& p) {
  nlohmann::json steps = nlohmann::json::array();
  for (const OptTrace::Step& s : trace.steps)
    steps.push_back({{"proposal", s.proposal_index}, {"loss", s.loss}});
  atomic_write_file(p, nlohmann::json{{"steps", steps}}.dump());
}

}  // namespace wsol

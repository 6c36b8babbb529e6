#pragma once

// Discriminative proposal harvesting: every attention map is Otsu-binarized,
// its connected components become candidate boxes, each box is scored by how
// well the true class survives when everything outside the box is blurred
// away, and the top-K boxes across all maps form the proposal pool.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/scorer.hpp"

namespace wsol {

// Components smaller than this never reach the scorer; single-pixel noise
// produces degenerate boxes.
inline constexpr std::size_t kMinComponentPixels = 4;

class AttentionStack {
 public:
  explicit AttentionStack(std::vector<GrayMap> maps) : maps_(std::move(maps)) {
    check(!maps_.empty(), errc::invalid_argument, "attention stack is empty");
    for (const GrayMap& m : maps_)
      check(m.width() == maps_[0].width() && m.height() == maps_[0].height(),
            errc::dimension_mismatch, "attention maps have mixed dimensions");
  }

  int size() const { return static_cast<int>(maps_.size()); }
  int width() const { return maps_[0].width(); }
  int height() const { return maps_[0].height(); }
  const GrayMap& map(int i) const { return maps_.at(static_cast<std::size_t>(i)); }
  const std::vector<GrayMap>& maps() const { return maps_; }

 private:
  std::vector<GrayMap> maps_;
};

struct ScoredBox {
  Box box;
  int map_index;  // which attention map produced the box
  double score;   // posterior of the true class under the perturbed image
};

struct ProposalPool {
  std::vector<ScoredBox> entries;  // sorted: score desc, box area desc, map_index asc

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

struct HarvestStats {
  int maps_skipped = 0;  // constant maps (no Otsu separation)
  int boxes_scored = 0;
};

/// Runs the full proposal-generation pass for one image. Deterministic:
/// the same inputs always yield the same pool. Constant maps are skipped;
/// an all-degenerate stack yields an empty pool and the caller decides the
/// fallback.
inline ProposalPool harvest_proposals(const Image& img, int label,
                                      const AttentionStack& stack, const Scorer& scorer,
                                      int top_k, double blur_sigma,
                                      const std::string& image_id = {},
                                      HarvestStats* stats = nullptr) {
  check(top_k >= 1, errc::invalid_argument, "top_k must be >= 1");
  check(stack.width() == img.width() && stack.height() == img.height(),
        errc::dimension_mismatch, "attention stack does not match image resolution");
  check(label >= 0 && label < scorer.num_classes(), errc::label_out_of_range,
        "label outside scorer range");

  std::optional<Image> blurred;  // computed lazily, shared across boxes
  std::vector<ScoredBox> found;
  HarvestStats local;

  for (int mi = 0; mi < stack.size(); ++mi) {
    const GrayMap& e = stack.map(mi);
    const std::optional<double> t = otsu_threshold(e);
    if (!t) {
      ++local.maps_skipped;
      continue;
    }
    for (const Component& comp : connected_components(binarize(e, *t))) {
      if (comp.pixels.size() < kMinComponentPixels) continue;
      if (!blurred) blurred = gaussian_blur(img, blur_sigma);
      const Image perturbed = composite_inside_box(img, *blurred, comp.box);
      const ClassScores sc = scorer.score_box(perturbed, image_id, comp.box);
      found.push_back({comp.box, mi, sc.probabilities[static_cast<std::size_t>(label)]});
      ++local.boxes_scored;
    }
  }

  std::stable_sort(found.begin(), found.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.area() != b.box.area()) return a.box.area() > b.box.area();
    return a.map_index < b.map_index;
  });
  if (found.size() > static_cast<std::size_t>(top_k))
    found.erase(found.begin() + top_k, found.end());

  if (stats) *stats = local;
  return ProposalPool{std::move(found)};
}

inline std::size_t select_random_proposal_index(const ProposalPool& pool, Rng& rng) {
  check(!pool.empty(), errc::empty_pool, "proposal pool is empty");
  return static_cast<std::size_t>(rng.uniform_below(pool.size()));
}

/// Uniform draw over the pool; the per-step proposal choice of the training
/// protocol.
inline const ScoredBox& select_random_proposal(const ProposalPool& pool, Rng& rng) {
  return pool.entries[select_random_proposal_index(pool, rng)];
}

// ---- persistence ----

struct ImageProposals {
  std::string image_id;
  int label;
  ProposalPool pool;
};

inline void save_proposal_pools(const std::vector<ImageProposals>& all,
                                const std::filesystem::path& p) {
  nlohmann::json j = nlohmann::json::array();
  for (const ImageProposals& ip : all) {
    nlohmann::json entries = nlohmann::json::array();
    for (const ScoredBox& sb : ip.pool.entries) {
      entries.push_back({{"box", {sb.box.x0, sb.box.y0, sb.box.x1, sb.box.y1}},
                         {"map_index", sb.map_index},
                         {"score", sb.score}});
    }
    j.push_back({{"image_id", ip.image_id}, {"label", ip.label}, {"proposals", entries}});
  }
  atomic_write_file(p, j.dump());
}

inline std::vector<ImageProposals> load_proposal_pools(const std::filesystem::path& p) {
  const auto j = nlohmann::json::parse(read_text_file(p));
  check(j.is_array(), errc::io_error, "proposal file is not an array: " + p.string());
  std::vector<ImageProposals> all;
  all.reserve(j.size());
  for (const auto& e : j) {
    ImageProposals ip{e.at("image_id").get<std::string>(), e.at("label").get<int>(), {}};
    for (const auto& pe : e.at("proposals")) {
      const auto& b = pe.at("box");
      ip.pool.entries.push_back({Box(b.at(0).get<int>(), b.at(1).get<int>(),
                                     b.at(2).get<int>(), b.at(3).get<int>()),
                                 pe.at("map_index").get<int>(),
                                 pe.at("score").get<double>()});
    }
    all.push_back(std::move(ip));
  }
  return all;
}

// Raw attention stack io: float32 LE, N x H x W, with a JSON sidecar.

inline void save_attention_stack(const AttentionStack& stack,
                                 const std::filesystem::path& p) {
  std::string payload;
  payload.reserve(static_cast<std::size_t>(stack.size()) * stack.width() *
                  stack.height() * 4);
  for (const GrayMap& m : stack.maps())
    for (double v : m.values()) push_f32le(payload, v);
  atomic_write_file(p, payload);
  nlohmann::json meta{
      {"n_maps", stack.size()}, {"height", stack.height()}, {"width", stack.width()}};
  atomic_write_file(sidecar_path(p), meta.dump());
}

inline AttentionStack load_attention_stack(const std::filesystem::path& p) {
  const auto meta = nlohmann::json::parse(read_text_file(sidecar_path(p)));
  const int n = meta.at("n_maps").get<int>();
  const int h = meta.at("height").get<int>();
  const int w = meta.at("width").get<int>();
  const std::vector<unsigned char> bytes = read_binary_file(p);
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  check(bytes.size() == static_cast<std::size_t>(n) * plane * 4, errc::io_error,
        "attention payload size mismatch: " + p.string());
  std::vector<GrayMap> maps;
  maps.reserve(static_cast<std::size_t>(n));
  for (int mi = 0; mi < n; ++mi) {
    std::vector<double> values(plane);
    for (std::size_t i = 0; i < plane; ++i)
      values[i] = read_f32le(&bytes[(static_cast<std::size_t>(mi) * plane + i) * 4]);
    maps.emplace_back(w, h, std::move(values));
  }
  return AttentionStack(std::move(maps));
}

}  // namespace wsol

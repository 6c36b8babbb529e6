#pragma once

// Pipeline stages behind the CLI: dataset loading, scorer training, proposal
// harvesting, map optimization, and evaluation. Stages compose only through
// the documented file formats; every stage is idempotent and deterministic
// given its seed, and outputs are computed fully before anything is written.

#include <atomic>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/losses.hpp"
#include "wsol/mapopt.hpp"
#include "wsol/proposals.hpp"
#include "wsol/pseudolabels.hpp"
#include "wsol/scorer.hpp"
#include "wsol/synth.hpp"
#include "wsol/wsol_eval.hpp"

namespace wsol {

inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(n)); ++t)
    pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct RunConfig {
  std::string dataset_dir;      // images/, attention/, gt.jsonl
  std::string out_dir = "out";
  std::string scorer_path;      // default <out>/scorer.json
  std::string score_cache_path; // optional: score proposals from a cache instead
  std::string proposals_path;   // default <out>/proposals.json
  std::string maps_dir;         // default <out>/maps
  std::string report_path;      // default <out>/report.json
  std::string curve_csv_path;   // optional per-threshold accuracy curve

  int k = 5;
  double blur_sigma = 0.0;  // 0 = auto: 10/224 of the image's smaller side

  int scorer_epochs = 50;
  double scorer_learning_rate = 0.1;
  int scorer_downsample = 16;
  int scorer_batch_size = 32;

  OptConfig opt{};
  std::uint64_t seed = 0;
  int jobs = 1;

  std::filesystem::path scorer_file() const {
    return scorer_path.empty() ? std::filesystem::path(out_dir) / "scorer.json"
                               : std::filesystem::path(scorer_path);
  }
  std::filesystem::path proposals_file() const {
    return proposals_path.empty() ? std::filesystem::path(out_dir) / "proposals.json"
                                  : std::filesystem::path(proposals_path);
  }
  std::filesystem::path maps_directory() const {
    return maps_dir.empty() ? std::filesystem::path(out_dir) / "maps"
                            : std::filesystem::path(maps_dir);
  }
  std::filesystem::path report_file() const {
    return report_path.empty() ? std::filesystem::path(out_dir) / "report.json"
                               : std::filesystem::path(report_path);
  }
};

// ---- config file parsing (JSON object; unknown keys are rejected) ----

inline void apply_config_json(const nlohmann::json& j, RunConfig& cfg, SynthSpec& spec) {
  check(j.is_object(), errc::config_invalid, "config root must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "dataset") cfg.dataset_dir = value.get<std::string>();
      else if (key == "out") cfg.out_dir = value.get<std::string>();
      else if (key == "scorer") cfg.scorer_path = value.get<std::string>();
      else if (key == "score_cache") cfg.score_cache_path = value.get<std::string>();
      else if (key == "proposals") cfg.proposals_path = value.get<std::string>();
      else if (key == "maps") cfg.maps_dir = value.get<std::string>();
      else if (key == "report") cfg.report_path = value.get<std::string>();
      else if (key == "curve_csv") cfg.curve_csv_path = value.get<std::string>();
      else if (key == "k") cfg.k = value.get<int>();
      else if (key == "blur_sigma") cfg.blur_sigma = value.get<double>();
      else if (key == "epochs") cfg.scorer_epochs = value.get<int>();
      else if (key == "scorer_learning_rate") cfg.scorer_learning_rate = value.get<double>();
      else if (key == "downsample") cfg.scorer_downsample = value.get<int>();
      else if (key == "batch_size") cfg.scorer_batch_size = value.get<int>();
      else if (key == "steps") cfg.opt.steps = value.get<int>();
      else if (key == "learning_rate") cfg.opt.learning_rate = value.get<double>();
      else if (key == "lambda1") cfg.opt.lambda1 = value.get<double>();
      else if (key == "lambda2") cfg.opt.lambda2 = value.get<double>();
      else if (key == "sigma_spatial") cfg.opt.affinity.sigma_spatial = value.get<double>();
      else if (key == "sigma_color") cfg.opt.affinity.sigma_color = value.get<double>();
      else if (key == "radius") cfg.opt.affinity.radius = value.get<int>();
      else if (key == "n_plus") cfg.opt.sampling.n_plus = value.get<int>();
      else if (key == "n_minus") cfg.opt.sampling.n_minus = value.get<int>();
      else if (key == "fg_pool_fraction") cfg.opt.sampling.fg_pool_fraction = value.get<double>();
      else if (key == "bg_pool_fraction") cfg.opt.sampling.bg_pool_fraction = value.get<double>();
      else if (key == "samples_per_side") cfg.opt.sampling.samples_per_side = value.get<int>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "jobs") cfg.jobs = value.get<int>();
      else if (key == "num_images") spec.num_images = value.get<int>();
      else if (key == "num_classes") spec.num_classes = value.get<int>();
      else if (key == "image_size") spec.image_size = value.get<int>();
      else if (key == "distractors_per_image") spec.distractors_per_image = value.get<int>();
      else if (key == "attention_maps_per_image") spec.attention_maps_per_image = value.get<int>();
      else if (key == "noise_level") spec.noise_level = value.get<double>();
      else throw Error(errc::config_invalid, "unknown config key: " + key);
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::config_invalid, "bad value for config key '" + key + "': " + e.what());
    }
  }
}

inline void load_config_file(const std::filesystem::path& p, RunConfig& cfg,
                             SynthSpec& spec) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::config_invalid, "cannot parse config " + p.string() + ": " + e.what());
  }
  apply_config_json(j, cfg, spec);
}

// ---- dataset access ----

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<GtAnnotation> gt;
  int num_classes = 0;  // max label + 1

  std::filesystem::path image_path(const std::string& id) const {
    return root / "images" / (id + ".ppm");
  }
  std::filesystem::path attention_path(const std::string& id) const {
    return root / "attention" / (id + ".bin");
  }
};

inline DatasetIndex load_dataset(const std::filesystem::path& dir) {
  check(!dir.empty(), errc::config_invalid, "dataset directory not set");
  DatasetIndex ds;
  ds.root = dir;
  ds.gt = load_gt_annotations(dir / "gt.jsonl");
  check(!ds.gt.empty(), errc::missing_input, "dataset has no annotations: " + dir.string());
  for (const GtAnnotation& g : ds.gt) ds.num_classes = std::max(ds.num_classes, g.label + 1);
  ds.num_classes = std::max(ds.num_classes, 2);
  return ds;
}

inline double auto_blur_sigma(const Image& img, double configured) {
  if (configured > 0.0) return configured;
  return 10.0 * std::min(img.width(), img.height()) / 224.0;
}

/// Lifts an attention stack to the image resolution when the token grid is
/// coarser (bilinear, per map).
inline AttentionStack lift_stack(AttentionStack stack, int w, int h) {
  if (stack.width() == w && stack.height() == h) return stack;
  std::vector<GrayMap> maps;
  maps.reserve(static_cast<std::size_t>(stack.size()));
  for (const GrayMap& m : stack.maps()) maps.push_back(resize_bilinear(m, w, h));
  return AttentionStack(std::move(maps));
}

// ---- stages ----

inline void cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  synth_generate(spec, out_dir);
}

struct TrainScorerOutcome {
  double held_out_accuracy = 0.0;
  int train_count = 0;
  int held_out_count = 0;
};

/// Trains the tiny classifier on the dataset images, holding out every fourth
/// image to measure generalization. The held-out accuracy falls back to the
/// training set when the dataset is too small to split.
inline TrainScorerOutcome cmd_train_scorer(const RunConfig& cfg) {
  const DatasetIndex ds = load_dataset(cfg.dataset_dir);
  std::vector<LabeledImage> train, held_out;
  for (std::size_t i = 0; i < ds.gt.size(); ++i) {
    LabeledImage s{load_pnm(ds.image_path(ds.gt[i].image_id)), ds.gt[i].label};
    if (i % 4 == 3) {
      held_out.push_back(std::move(s));
    } else {
      train.push_back(std::move(s));
    }
  }
  const TinyClassifier clf = train_tiny_classifier(
      train, ds.num_classes, cfg.scorer_epochs, cfg.scorer_learning_rate, cfg.seed,
      cfg.scorer_downsample, cfg.scorer_batch_size);
  save_classifier(clf, cfg.scorer_file());
  TrainScorerOutcome out;
  out.train_count = static_cast<int>(train.size());
  out.held_out_count = static_cast<int>(held_out.size());
  out.held_out_accuracy =
      held_out.empty() ? dataset_accuracy(clf, train) : dataset_accuracy(clf, held_out);
  return out;
}

struct HarvestOutcome {
  int images = 0;
  int boxes_scored = 0;
  int maps_skipped = 0;
  int empty_pools = 0;
};

inline HarvestOutcome cmd_harvest(const RunConfig& cfg) {
  const DatasetIndex ds = load_dataset(cfg.dataset_dir);

  std::unique_ptr<Scorer> scorer;
  if (!cfg.score_cache_path.empty()) {
    scorer = std::make_unique<CachedScorer>(CachedScorer::load(cfg.score_cache_path));
  } else {
    scorer = std::make_unique<TinyClassifier>(load_classifier(cfg.scorer_file()));
  }

  std::vector<ImageProposals> results(ds.gt.size());
  std::vector<HarvestStats> stats(ds.gt.size());
  parallel_for(ds.gt.size(), cfg.jobs, [&](std::size_t i) {
    const GtAnnotation& g = ds.gt[i];
    const Image img = load_pnm(ds.image_path(g.image_id));
    const AttentionStack stack =
        lift_stack(load_attention_stack(ds.attention_path(g.image_id)), img.width(),
                   img.height());
    const double sigma = auto_blur_sigma(img, cfg.blur_sigma);
    results[i] = ImageProposals{
        g.image_id, g.label,
        harvest_proposals(img, g.label, stack, *scorer, cfg.k, sigma, g.image_id,
                          &stats[i])};
  });

  HarvestOutcome out;
  out.images = static_cast<int>(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    out.boxes_scored += stats[i].boxes_scored;
    out.maps_skipped += stats[i].maps_skipped;
    out.empty_pools += results[i].pool.empty();
  }
  save_proposal_pools(results, cfg.proposals_file());
  return out;
}

struct OptimizeOutcome {
  int images = 0;
  int uniform_fallbacks = 0;  // images with an empty pool
  double mean_final_loss = 0.0;
};

inline OptimizeOutcome cmd_optimize(const RunConfig& cfg) {
  const DatasetIndex ds = load_dataset(cfg.dataset_dir);
  const std::vector<ImageProposals> pools = load_proposal_pools(cfg.proposals_file());

  std::vector<const ImageProposals*> by_image(ds.gt.size(), nullptr);
  for (std::size_t i = 0; i < ds.gt.size(); ++i) {
    for (const ImageProposals& ip : pools)
      if (ip.image_id == ds.gt[i].image_id) by_image[i] = &ip;
    check(by_image[i] != nullptr, errc::missing_input,
          "no proposals for image " + ds.gt[i].image_id);
  }

  struct PerImage {
    GrayMap fg = GrayMap(1, 1);
    OptTrace trace;
    bool fallback = false;
  };
  std::vector<PerImage> results(ds.gt.size());

  parallel_for(ds.gt.size(), cfg.jobs, [&](std::size_t i) {
    const GtAnnotation& g = ds.gt[i];
    const Image img = load_pnm(ds.image_path(g.image_id));
    if (by_image[i]->pool.empty()) {
      // Degenerate stacks give no proposals; emit the uninformative uniform map.
      results[i].fg = GrayMap(img.width(), img.height(), 0.5);
      results[i].fallback = true;
      return;
    }
    const AttentionStack stack =
        lift_stack(load_attention_stack(ds.attention_path(g.image_id)), img.width(),
                   img.height());
    OptConfig oc = cfg.opt;
    oc.seed = cfg.seed ^ fnv1a64(g.image_id);
    OptResult r = optimize_map(img, stack, by_image[i]->pool, oc);
    results[i].fg = GrayMap(img.width(), img.height(),
                            std::vector<double>(r.map.fg().begin(), r.map.fg().end()));
    results[i].trace = std::move(r.trace);
  });

  OptimizeOutcome out;
  out.images = static_cast<int>(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    save_graymap_raw(results[i].fg, cfg.maps_directory() / (ds.gt[i].image_id + ".bin"));
    save_trace(results[i].trace,
               std::filesystem::path(cfg.out_dir) / "traces" / (ds.gt[i].image_id + ".json"));
    out.uniform_fallbacks += results[i].fallback;
    if (!results[i].trace.steps.empty()) out.mean_final_loss += results[i].trace.steps.back().loss;
  }
  if (out.images > 0) out.mean_final_loss /= out.images;
  return out;
}

inline MetricsReport cmd_evaluate(const RunConfig& cfg) {
  const DatasetIndex ds = load_dataset(cfg.dataset_dir);
  const TinyClassifier clf = load_classifier(cfg.scorer_file());

  std::vector<LocalizationMap> maps;
  std::vector<std::vector<int>> preds;
  maps.reserve(ds.gt.size());
  preds.reserve(ds.gt.size());
  const int top5 = std::min(5, clf.num_classes());
  for (const GtAnnotation& g : ds.gt) {
    maps.push_back(LocalizationMap::from_foreground(
        load_graymap_raw(cfg.maps_directory() / (g.image_id + ".bin"))));
    preds.push_back(predict_topk(clf, load_pnm(ds.image_path(g.image_id)), top5));
  }

  MetricsReport report;
  report.pxap = pxap(maps, ds.gt);

  const BoxAccResult acc = maxboxacc(maps, ds.gt);
  for (std::size_t d = 0; d < acc.deltas.size(); ++d)
    report.maxboxacc_per_delta[acc.deltas[d]] = acc.per_delta[d];
  report.maxboxacc_mean = acc.mean;

  report.top1_loc = topk_loc(preds, maps, ds.gt, 1);
  report.top5_loc = topk_loc(preds, maps, ds.gt, top5);

  const double tau05 = acc.best_tau[1];  // deltas are {0.3, 0.5, 0.7}
  const ErrorMetrics err = error_metrics(primary_boxes(maps, tau05), ds.gt);
  report.lpe = err.lpe;
  report.lme = err.lme;
  report.mie = err.mie;

  save_report(report, cfg.report_file());
  if (!cfg.curve_csv_path.empty()) save_accuracy_curve_csv(acc, cfg.curve_csv_path);
  return report;
}

}  // namespace wsol

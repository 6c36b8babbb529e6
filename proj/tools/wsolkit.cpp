// Command-line front end for the localization toolkit. Five stages compose
// through files: synth -> train-scorer -> harvest -> optimize -> evaluate.
// Options may come from a JSON config (--config) with command-line flags
// taking precedence.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wsol/pipeline.hpp"

namespace {

constexpr const char* kExitCodeDoc =
    "Exit codes: 0 success, 2 invalid configuration, 3 missing input, "
    "4 computation error.";

struct Cli {
  std::string config_path;
  wsol::RunConfig cfg;
  wsol::SynthSpec spec;
};

// Flags parsed into shadow slots so a provided flag can override the config
// file after both were read.
template <typename T>
void apply_if_set(CLI::App* cmd, const std::string& flag, T& dst, const T& src) {
  const CLI::Option* opt = cmd->get_option_no_throw(flag);
  if (opt != nullptr && opt->count() > 0) dst = src;
}

int to_exit_code(const wsol::Error& e) {
  switch (e.code()) {
    case wsol::errc::config_invalid:
    case wsol::errc::invalid_argument:
      return 2;
    case wsol::errc::missing_input:
      return 3;
    default:
      return 4;
  }
}

void print_summary(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised object localization toolkit"};
  app.footer(kExitCodeDoc);
  app.require_subcommand(1);

  Cli cli;

  // Shadow values for overrides.
  std::string f_dataset, f_out, f_scorer, f_cache, f_proposals, f_maps, f_report, f_curve;
  std::uint64_t f_seed = 0;
  int f_jobs = 1, f_k = 5, f_epochs = 50, f_downsample = 16, f_batch = 32;
  double f_blur = 0.0, f_scorer_lr = 0.1;
  int f_steps = 500, f_radius = 5, f_samples = 10, f_nplus = 0, f_nminus = 0;
  double f_lr = 0.5, f_l1 = 1.0, f_l2 = 2e-9, f_ss = 2.0, f_sc = 0.1;
  double f_fg_frac = 0.3, f_bg_frac = 0.3;
  int s_num_images = 100, s_num_classes = 4, s_size = 64, s_distractors = 3, s_maps = 6;
  double s_noise = 0.15;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", cli.config_path, "JSON config file; flags override it");
    cmd->add_option("--seed", f_seed, "global random seed");
    cmd->add_option("--jobs", f_jobs, "worker threads across images");
    cmd->add_option("--out", f_out, "output directory");
    cmd->footer(kExitCodeDoc);
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--num-images", s_num_images, "number of images");
  synth->add_option("--num-classes", s_num_classes, "number of classes (2..8)");
  synth->add_option("--image-size", s_size, "square image side in pixels");
  synth->add_option("--distractors", s_distractors, "distractor shapes per image");
  synth->add_option("--attention-maps", s_maps, "attention maps per image");
  synth->add_option("--noise", s_noise, "noise level in [0,1]");

  CLI::App* train = app.add_subcommand("train-scorer", "train the tiny scoring classifier");
  add_common(train);
  train->add_option("--dataset", f_dataset, "dataset directory");
  train->add_option("--scorer", f_scorer, "classifier output path");
  train->add_option("--epochs", f_epochs, "training epochs");
  train->add_option("--scorer-lr", f_scorer_lr, "training learning rate");
  train->add_option("--downsample", f_downsample, "feature grid side d");
  train->add_option("--batch-size", f_batch, "mini-batch size");

  CLI::App* harvest = app.add_subcommand("harvest", "harvest discriminative box proposals");
  add_common(harvest);
  harvest->add_option("--dataset", f_dataset, "dataset directory");
  harvest->add_option("--scorer", f_scorer, "trained classifier path");
  harvest->add_option("--score-cache", f_cache, "precomputed per-(image,box) score cache");
  harvest->add_option("--proposals", f_proposals, "proposal pool output path");
  harvest->add_option("--k", f_k, "pool size (top-K)");
  harvest->add_option("--blur-sigma", f_blur, "perturbation blur sigma; 0 = auto");

  CLI::App* optimize = app.add_subcommand("optimize", "optimize per-image localization maps");
  add_common(optimize);
  optimize->add_option("--dataset", f_dataset, "dataset directory");
  optimize->add_option("--proposals", f_proposals, "proposal pool input path");
  optimize->add_option("--maps", f_maps, "map output directory");
  optimize->add_option("--steps", f_steps, "gradient steps per image");
  optimize->add_option("--lr", f_lr, "learning rate on map logits");
  optimize->add_option("--lambda1", f_l1, "pixel pseudo-label loss weight");
  optimize->add_option("--lambda2", f_l2, "pairwise regularizer weight");
  optimize->add_option("--sigma-spatial", f_ss, "affinity spatial sigma (px)");
  optimize->add_option("--sigma-color", f_sc, "affinity color sigma");
  optimize->add_option("--radius", f_radius, "affinity truncation radius (px)");
  optimize->add_option("--samples-per-side", f_samples, "FG and BG pixels per step");
  optimize->add_option("--fg-pool-fraction", f_fg_frac, "FG candidate pool as box-area fraction");
  optimize->add_option("--bg-pool-fraction", f_bg_frac, "BG candidate pool as exterior fraction");
  optimize->add_option("--n-plus", f_nplus, "absolute FG candidate pool size (overrides fraction)");
  optimize->add_option("--n-minus", f_nminus, "absolute BG candidate pool size (overrides fraction)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score maps against ground truth");
  add_common(evaluate);
  evaluate->add_option("--dataset", f_dataset, "dataset directory");
  evaluate->add_option("--scorer", f_scorer, "trained classifier path (for Top-k Loc)");
  evaluate->add_option("--maps", f_maps, "map input directory");
  evaluate->add_option("--report", f_report, "metrics report output path");
  evaluate->add_option("--curve-csv", f_curve, "optional per-threshold accuracy curve CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* cmd = app.get_subcommands().front();

  try {
    if (!cli.config_path.empty())
      wsol::load_config_file(cli.config_path, cli.cfg, cli.spec);

    apply_if_set(cmd, "--seed", cli.cfg.seed, f_seed);
    apply_if_set(cmd, "--jobs", cli.cfg.jobs, f_jobs);
    apply_if_set(cmd, "--out", cli.cfg.out_dir, f_out);
    apply_if_set(cmd, "--dataset", cli.cfg.dataset_dir, f_dataset);
    apply_if_set(cmd, "--scorer", cli.cfg.scorer_path, f_scorer);
    apply_if_set(cmd, "--score-cache", cli.cfg.score_cache_path, f_cache);
    apply_if_set(cmd, "--proposals", cli.cfg.proposals_path, f_proposals);
    apply_if_set(cmd, "--maps", cli.cfg.maps_dir, f_maps);
    apply_if_set(cmd, "--report", cli.cfg.report_path, f_report);
    apply_if_set(cmd, "--curve-csv", cli.cfg.curve_csv_path, f_curve);
    apply_if_set(cmd, "--k", cli.cfg.k, f_k);
    apply_if_set(cmd, "--blur-sigma", cli.cfg.blur_sigma, f_blur);
    apply_if_set(cmd, "--epochs", cli.cfg.scorer_epochs, f_epochs);
    apply_if_set(cmd, "--scorer-lr", cli.cfg.scorer_learning_rate, f_scorer_lr);
    apply_if_set(cmd, "--downsample", cli.cfg.scorer_downsample, f_downsample);
    apply_if_set(cmd, "--batch-size", cli.cfg.scorer_batch_size, f_batch);
    apply_if_set(cmd, "--steps", cli.cfg.opt.steps, f_steps);
    apply_if_set(cmd, "--lr", cli.cfg.opt.learning_rate, f_lr);
    apply_if_set(cmd, "--lambda1", cli.cfg.opt.lambda1, f_l1);
    apply_if_set(cmd, "--lambda2", cli.cfg.opt.lambda2, f_l2);
    apply_if_set(cmd, "--sigma-spatial", cli.cfg.opt.affinity.sigma_spatial, f_ss);
    apply_if_set(cmd, "--sigma-color", cli.cfg.opt.affinity.sigma_color, f_sc);
    apply_if_set(cmd, "--radius", cli.cfg.opt.affinity.radius, f_radius);
    apply_if_set(cmd, "--samples-per-side", cli.cfg.opt.sampling.samples_per_side, f_samples);
    apply_if_set(cmd, "--fg-pool-fraction", cli.cfg.opt.sampling.fg_pool_fraction, f_fg_frac);
    apply_if_set(cmd, "--bg-pool-fraction", cli.cfg.opt.sampling.bg_pool_fraction, f_bg_frac);
    apply_if_set(cmd, "--n-plus", cli.cfg.opt.sampling.n_plus, f_nplus);
    apply_if_set(cmd, "--n-minus", cli.cfg.opt.sampling.n_minus, f_nminus);
    apply_if_set(cmd, "--num-images", cli.spec.num_images, s_num_images);
    apply_if_set(cmd, "--num-classes", cli.spec.num_classes, s_num_classes);
    apply_if_set(cmd, "--image-size", cli.spec.image_size, s_size);
    apply_if_set(cmd, "--distractors", cli.spec.distractors_per_image, s_distractors);
    apply_if_set(cmd, "--attention-maps", cli.spec.attention_maps_per_image, s_maps);
    apply_if_set(cmd, "--noise", cli.spec.noise_level, s_noise);
    cli.spec.seed = cli.cfg.seed;

    if (cmd == synth) {
      wsol::cmd_synth(cli.spec, cli.cfg.out_dir);
      print_summary({{"cmd", "synth"},
                     {"out", cli.cfg.out_dir},
                     {"images", cli.spec.num_images},
                     {"classes", cli.spec.num_classes},
                     {"seed", cli.cfg.seed}});
    } else if (cmd == train) {
      const auto r = wsol::cmd_train_scorer(cli.cfg);
      print_summary({{"cmd", "train-scorer"},
                     {"scorer", cli.cfg.scorer_file().string()},
                     {"train_images", r.train_count},
                     {"held_out_images", r.held_out_count},
                     {"held_out_accuracy", r.held_out_accuracy}});
    } else if (cmd == harvest) {
      const auto r = wsol::cmd_harvest(cli.cfg);
      if (r.maps_skipped > 0)
        std::cerr << "warning: skipped " << r.maps_skipped
                  << " constant attention map(s)\n";
      if (r.empty_pools > 0)
        std::cerr << "warning: " << r.empty_pools << " image(s) yielded no proposals\n";
      print_summary({{"cmd", "harvest"},
                     {"proposals", cli.cfg.proposals_file().string()},
                     {"images", r.images},
                     {"boxes_scored", r.boxes_scored},
                     {"maps_skipped", r.maps_skipped},
                     {"empty_pools", r.empty_pools}});
    } else if (cmd == optimize) {
      const auto r = wsol::cmd_optimize(cli.cfg);
      print_summary({{"cmd", "optimize"},
                     {"maps", cli.cfg.maps_directory().string()},
                     {"images", r.images},
                     {"uniform_fallbacks", r.uniform_fallbacks},
                     {"mean_final_loss", r.mean_final_loss}});
    } else if (cmd == evaluate) {
      const auto report = wsol::cmd_evaluate(cli.cfg);
      nlohmann::json j = wsol::report_to_json(report);
      j["cmd"] = "evaluate";
      j["report"] = cli.cfg.report_file().string();
      print_summary(j);
    }
  } catch (const wsol::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return to_exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

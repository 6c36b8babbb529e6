#pragma once

// Localization evaluation protocol: pixel-wise average precision (PxAP),
// MaxBoxAcc over IoU thresholds delta in {0.3, 0.5, 0.7} with a shared
// binarization threshold swept over 256 levels, Top-1/Top-5 localization, and
// the LPE / LME / MIE error decomposition built on the IoP / IoA / IoG
// overlap ratios.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/losses.hpp"
#include "wsol/mapopt.hpp"

namespace wsol {

struct GtAnnotation {
  std::string image_id;
  int label = 0;
  std::vector<Box> gt_boxes;
  std::optional<BinaryMask> gt_mask;
};

struct MetricsReport {
  double pxap = 0.0;                          // [0,1]
  std::map<double, double> maxboxacc_per_delta;  // delta -> percentage
  double maxboxacc_mean = 0.0;
  double top1_loc = 0.0;
  double top5_loc = 0.0;
  double lpe = 0.0;
  double lme = 0.0;
  double mie = 0.0;
};

struct BoxRatios {
  double iou, iop, ioa, iog;
};

/// Intersection over union / predicted area / annotated area / ground-truth
/// area. IoA and IoG both normalize by the ground-truth box; the two names
/// are kept because the error metrics are defined against both.
inline BoxRatios box_ratios(const Box& pred, const Box& gt) {
  const std::int64_t ix0 = std::max(pred.x0, gt.x0), iy0 = std::max(pred.y0, gt.y0);
  const std::int64_t ix1 = std::min(pred.x1, gt.x1), iy1 = std::min(pred.y1, gt.y1);
  const std::int64_t iw = std::max<std::int64_t>(0, ix1 - ix0);
  const std::int64_t ih = std::max<std::int64_t>(0, iy1 - iy0);
  const double inter = static_cast<double>(iw * ih);
  const double pa = static_cast<double>(pred.area());
  const double ga = static_cast<double>(gt.area());
  const double uni = pa + ga - inter;
  return BoxRatios{inter / uni, inter / pa, inter / ga, inter / ga};
}

/// Tight boxes of the 8-connected components of {S1 > tau}, largest first.
inline std::vector<Box> boxes_from_map(const LocalizationMap& s, double tau) {
  std::vector<Box> out;
  for (const Component& c : connected_components(binarize_map(s, tau)))
    out.push_back(c.box);
  return out;
}

/// The shared binarization sweep {0, 1/255, ..., 1}.
inline std::vector<double> default_thresholds() {
  std::vector<double> t(256);
  for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = i / 255.0;
  return t;
}

/// Area under the dataset-pooled pixel precision/recall curve. At each
/// threshold the prediction set is {S1 >= tau} (inclusive, so the curve
/// reaches full recall at tau = 0); precision at zero predictions is 1 and
/// the curve is integrated over recall increments with thresholds taken in
/// descending order.
inline double pxap(const std::vector<LocalizationMap>& maps,
                   const std::vector<GtAnnotation>& gts,
                   const std::vector<double>& thresholds = default_thresholds()) {
  check(maps.size() == gts.size(), errc::dimension_mismatch,
        "maps and annotations differ in count");
  check(!maps.empty(), errc::empty_dataset, "nothing to evaluate");
  for (std::size_t i = 0; i < gts.size(); ++i) {
    check(gts[i].gt_mask.has_value(), errc::missing_mask,
          "PxAP requires a mask for " + gts[i].image_id);
    check(gts[i].gt_mask->width() == maps[i].width() &&
              gts[i].gt_mask->height() == maps[i].height(),
          errc::dimension_mismatch, "mask/map size mismatch for " + gts[i].image_id);
  }

  std::vector<double> taus = thresholds;
  std::sort(taus.begin(), taus.end(), std::greater<>());

  double ap = 0.0;
  double prev_recall = 0.0;
  std::int64_t total_pos = 0;
  for (const GtAnnotation& gt : gts) total_pos += gt.gt_mask->count();
  check(total_pos > 0, errc::missing_mask, "ground-truth masks are all empty");

  for (double tau : taus) {
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto& fg = maps[i].fg();
      const auto bits = gts[i].gt_mask->bits();
      for (std::size_t p = 0; p < fg.size(); ++p) {
        if (fg[p] >= tau) {
          if (bits[p]) {
            ++tp;
          } else {
            ++fp;
          }
        }
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision =
        tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

struct BoxAccResult {
  std::vector<double> deltas;
  std::vector<double> per_delta;                // percentages, aligned with deltas
  double mean = 0.0;
  std::vector<double> thresholds;               // ascending sweep
  std::vector<std::vector<double>> curve;       // curve[d][t]: accuracy % at (delta, tau)
  std::vector<double> best_tau;                 // smallest argmax tau per delta
};

/// For every sweep threshold, boxes are extracted from each map and the image
/// score is the best IoU over (predicted box, gt box) pairs; accuracy at
/// (tau, delta) is the fraction of images reaching IoU >= delta, and the
/// per-delta score is the best accuracy over the shared tau.
inline BoxAccResult maxboxacc(const std::vector<LocalizationMap>& maps,
                              const std::vector<GtAnnotation>& gts,
                              const std::vector<double>& deltas = {0.3, 0.5, 0.7},
                              const std::vector<double>& thresholds = default_thresholds()) {
  check(maps.size() == gts.size(), errc::dimension_mismatch,
        "maps and annotations differ in count");
  check(!maps.empty(), errc::empty_dataset, "nothing to evaluate");
  check(!deltas.empty() && !thresholds.empty(), errc::invalid_argument, "empty sweep");
  for (const GtAnnotation& gt : gts)
    check(!gt.gt_boxes.empty(), errc::missing_gt_box,
          "no ground-truth box for " + gt.image_id);

  BoxAccResult r;
  r.deltas = deltas;
  r.thresholds = thresholds;
  std::sort(r.thresholds.begin(), r.thresholds.end());

  // iou[t][i]: best pair IoU of image i at threshold t.
  std::vector<std::vector<double>> iou(r.thresholds.size(),
                                       std::vector<double>(maps.size(), 0.0));
  for (std::size_t ti = 0; ti < r.thresholds.size(); ++ti) {
    for (std::size_t i = 0; i < maps.size(); ++i) {
      double best = 0.0;
      for (const Box& pb : boxes_from_map(maps[i], r.thresholds[ti]))
        for (const Box& gb : gts[i].gt_boxes) best = std::max(best, box_ratios(pb, gb).iou);
      iou[ti][i] = best;
    }
  }

  r.curve.assign(deltas.size(), std::vector<double>(r.thresholds.size(), 0.0));
  r.per_delta.assign(deltas.size(), 0.0);
  r.best_tau.assign(deltas.size(), r.thresholds.front());
  for (std::size_t di = 0; di < deltas.size(); ++di) {
    for (std::size_t ti = 0; ti < r.thresholds.size(); ++ti) {
      std::int64_t hits = 0;
      for (double v : iou[ti]) hits += v >= deltas[di];
      r.curve[di][ti] = 100.0 * static_cast<double>(hits) / static_cast<double>(maps.size());
      if (r.curve[di][ti] > r.per_delta[di]) {
        r.per_delta[di] = r.curve[di][ti];
        r.best_tau[di] = r.thresholds[ti];
      }
    }
    r.mean += r.per_delta[di];
  }
  r.mean /= static_cast<double>(deltas.size());
  return r;
}

/// Fraction of images whose ground-truth label is among the first k
/// predictions and whose best box IoU, at the dataset-optimal tau taken from
/// the delta = 0.5 sweep, reaches delta.
inline double topk_loc(const std::vector<std::vector<int>>& preds,
                       const std::vector<LocalizationMap>& maps,
                       const std::vector<GtAnnotation>& gts, int k, double delta = 0.5,
                       const std::vector<double>& thresholds = default_thresholds()) {
  check(preds.size() == maps.size() && maps.size() == gts.size(), errc::dimension_mismatch,
        "prediction/map/annotation counts differ");
  for (const auto& p : preds)
    check(static_cast<int>(p.size()) >= k, errc::short_prediction_list,
          "prediction list shorter than k");

  const BoxAccResult acc = maxboxacc(maps, gts, {delta}, thresholds);
  const double tau = acc.best_tau[0];

  std::int64_t hits = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    bool class_ok = false;
    for (int j = 0; j < k; ++j) class_ok = class_ok || preds[i][static_cast<std::size_t>(j)] == gts[i].label;
    if (!class_ok) continue;
    double best = 0.0;
    for (const Box& pb : boxes_from_map(maps[i], tau))
      for (const Box& gb : gts[i].gt_boxes) best = std::max(best, box_ratios(pb, gb).iou);
    hits += best >= delta;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(maps.size());
}

/// Largest-area predicted box per image at the given threshold (the primary
/// box the error metrics are measured on); nullopt when nothing survives.
inline std::vector<std::optional<Box>> primary_boxes(const std::vector<LocalizationMap>& maps,
                                                     double tau) {
  std::vector<std::optional<Box>> out;
  out.reserve(maps.size());
  for (const LocalizationMap& m : maps) {
    const std::vector<Box> boxes = boxes_from_map(m, tau);
    if (boxes.empty()) {
      out.emplace_back(std::nullopt);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < boxes.size(); ++i)
        if (boxes[i].area() > boxes[best].area()) best = i;
      out.emplace_back(boxes[best]);
    }
  }
  return out;
}

struct ErrorMetrics {
  double lpe, lme, mie;  // percentages over all images
};

/// Error decomposition over one primary predicted box per image. LPE and LME
/// count images that fail the IoU >= 0.5 criterion against their
/// best-matching gt box and in addition show IoP > 0.5 (box inside the
/// object) or IoA > 0.7 (box swallowing the object); MIE counts images whose
/// box reaches IoG > 0.3 with at least two distinct gt boxes. All three are
/// reported as fractions of the full image set.
inline ErrorMetrics error_metrics(const std::vector<std::optional<Box>>& pred_boxes,
                                  const std::vector<GtAnnotation>& gts) {
  check(pred_boxes.size() == gts.size(), errc::dimension_mismatch,
        "prediction/annotation counts differ");
  check(!gts.empty(), errc::empty_dataset, "nothing to evaluate");
  for (const GtAnnotation& gt : gts)
    check(!gt.gt_boxes.empty(), errc::missing_gt_box,
          "no ground-truth box for " + gt.image_id);

  std::int64_t lpe = 0, lme = 0, mie = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!pred_boxes[i]) continue;  // no box: a failure, but no ratios to measure
    const Box& pb = *pred_boxes[i];
    BoxRatios best{0.0, 0.0, 0.0, 0.0};
    int multi = 0;
    for (const Box& gb : gts[i].gt_boxes) {
      const BoxRatios r = box_ratios(pb, gb);
      if (r.iou > best.iou) best = r;
      multi += r.iog > 0.3;
    }
    const bool failed = best.iou < 0.5;
    lpe += failed && best.iop > 0.5;
    lme += failed && best.ioa > 0.7;
    mie += multi >= 2;
  }
  const double n = static_cast<double>(gts.size());
  return ErrorMetrics{100.0 * static_cast<double>(lpe) / n,
                      100.0 * static_cast<double>(lme) / n,
                      100.0 * static_cast<double>(mie) / n};
}

// ---- ingestion and report output ----

/// JSON-lines ground truth: {image_id, label, boxes: [[x0,y0,x1,y1]...],
/// mask_path?}. Mask paths resolve relative to the jsonl file; masks load as
/// PGM with nonzero = foreground.
inline std::vector<GtAnnotation> load_gt_annotations(const std::filesystem::path& p) {
  const std::string text = read_text_file(p);
  const std::filesystem::path base = p.parent_path();
  std::vector<GtAnnotation> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    GtAnnotation gt;
    gt.image_id = j.at("image_id").get<std::string>();
    gt.label = j.at("label").get<int>();
    for (const auto& b : j.at("boxes"))
      gt.gt_boxes.emplace_back(b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                               b.at(3).get<int>());
    if (j.contains("mask_path")) {
      const Image mask = load_pnm(base / j.at("mask_path").get<std::string>());
      check(mask.channels() == 1, errc::io_error, "mask must be single-channel");
      std::vector<std::uint8_t> bits(mask.data().size());
      for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = mask.data()[i] > 0.0;
      gt.gt_mask = BinaryMask(mask.width(), mask.height(), std::move(bits));
    }
    out.push_back(std::move(gt));
  }
  return out;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json per_delta = nlohmann::json::object();
  for (const auto& [delta, value] : r.maxboxacc_per_delta) {
    char key[16];
    std::snprintf(key, sizeof key, "%.2g", delta);
    per_delta[key] = value;
  }
  return nlohmann::json{{"pxap", r.pxap},
                        {"maxboxacc_per_delta", per_delta},
                        {"maxboxacc_mean", r.maxboxacc_mean},
                        {"top1_loc", r.top1_loc},
                        {"top5_loc", r.top5_loc},
                        {"lpe", r.lpe},
                        {"lme", r.lme},
                        {"mie", r.mie}};
}

inline void save_report(const MetricsReport& r, const std::filesystem::path& p) {
  atomic_write_file(p, report_to_json(r).dump(2) + "\n");
}

/// Per-threshold accuracy curve as CSV, one row per tau, one column per delta.
inline void save_accuracy_curve_csv(const BoxAccResult& acc,
                                    const std::filesystem::path& p) {
  std::string out = "tau";
  for (double d : acc.deltas) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ",acc_delta_%.2g", d);
    out += buf;
  }
  out += "\n";
  for (std::size_t ti = 0; ti < acc.thresholds.size(); ++ti) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", acc.thresholds[ti]);
    out += buf;
    for (std::size_t di = 0; di < acc.deltas.size(); ++di) {
      std::snprintf(buf, sizeof buf, ",%.9g", acc.curve[di][ti]);
      out += buf;
    }
    out += "\n";
  }
  atomic_write_file(p, out);
}

}  // namespace wsol

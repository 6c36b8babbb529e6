#pragma once

// Classifier abstraction used to score box proposals, with two
// implementations: a tiny trainable linear-softmax classifier for desk-scale
// runs, and a file-backed cache for injecting scores computed offline by a
// real pretrained network.

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"

namespace wsol {

struct ClassScores {
  std::vector<double> probabilities;  // entries in [0,1], sum 1 within 1e-6
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual int num_classes() const = 0;
  virtual ClassScores score(const Image& img) const = 0;
  // Proposal-scoring entry point; image_id and box identify the proposal so
  // cache-backed scorers can look it up. Default ignores the key.
  virtual ClassScores score_box(const Image& perturbed, const std::string& image_id,
                                const Box& box) const {
    (void)image_id;
    (void)box;
    return score(perturbed);
  }
};

inline std::vector<double> softmax(std::vector<double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : logits) v /= sum;
  return logits;
}

// Linear-softmax classifier over a contrast-sensitive downsampled feature
// grid: the image is reduced to d x d cells per channel by per-cell max
// pooling, flattened, and mean-centered. Max pooling keeps the features
// responsive to blur (a blurred region loses its peaks while its average
// survives), which is what makes perturbation scoring informative.
class TinyClassifier final : public Scorer {
 public:
  TinyClassifier(int num_classes, int downsample, int channels)
      : num_classes_(num_classes),
        downsample_(downsample),
        channels_(channels),
        weights_(static_cast<std::size_t>(num_classes) * downsample * downsample * channels,
                 0.0),
        bias_(num_classes, 0.0) {
    check(num_classes_ >= 2, errc::invalid_argument, "need at least two classes");
    check(downsample_ >= 1, errc::invalid_argument, "downsample must be >= 1");
    check(channels_ == 1 || channels_ == 3, errc::invalid_argument, "channels must be 1 or 3");
  }

  int num_classes() const override { return num_classes_; }
  int downsample() const { return downsample_; }
  int channels() const { return channels_; }
  int feature_dim() const { return downsample_ * downsample_ * channels_; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }

  std::vector<double> features(const Image& img) const {
    check(img.channels() == channels_, errc::channel_mismatch,
          "classifier expects " + std::to_string(channels_) + " channels");
    const int d = downsample_;
    std::vector<double> f(static_cast<std::size_t>(feature_dim()));
    for (int ch = 0; ch < channels_; ++ch) {
      for (int cy = 0; cy < d; ++cy) {
        const int y0 = std::min(cy * img.height() / d, img.height() - 1);
        const int y1 = std::clamp((cy + 1) * img.height() / d, y0 + 1, img.height());
        for (int cx = 0; cx < d; ++cx) {
          const int x0 = std::min(cx * img.width() / d, img.width() - 1);
          const int x1 = std::clamp((cx + 1) * img.width() / d, x0 + 1, img.width());
          double mx = 0.0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) mx = std::max(mx, img.at(x, y, ch));
          f[(static_cast<std::size_t>(ch) * d + cy) * d + cx] = mx;
        }
      }
    }
    double mean = 0.0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(f.size());
    for (double& v : f) v -= mean;
    return f;
  }

  std::vector<double> logits(const std::vector<double>& f) const {
    std::vector<double> z(bias_);
    const std::size_t d = f.size();
    for (int c = 0; c < num_classes_; ++c) {
      const double* row = &weights_[static_cast<std::size_t>(c) * d];
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * f[j];
      z[c] += acc;
    }
    return z;
  }

  ClassScores score(const Image& img) const override {
    return ClassScores{softmax(logits(features(img)))};
  }

 private:
  int num_classes_, downsample_, channels_;
  std::vector<double> weights_;  // row-major C x D
  std::vector<double> bias_;
};

struct LabeledImage {
  Image image;
  int label;
};

/// Mini-batch gradient descent on softmax cross-entropy. Deterministic given
/// the seed: shuffling and batch order are fixed. Pass batch_size >= dataset
/// size for full-batch training.
inline TinyClassifier train_tiny_classifier(const std::vector<LabeledImage>& dataset,
                                            int num_classes, int epochs,
                                            double learning_rate, std::uint64_t seed,
                                            int downsample = 16, int batch_size = 32) {
  check(!dataset.empty(), errc::empty_dataset, "training set is empty");
  check(epochs >= 1 && batch_size >= 1, errc::invalid_argument, "bad training schedule");
  for (const auto& s : dataset)
    check(s.label >= 0 && s.label < num_classes, errc::label_out_of_range,
          "label " + std::to_string(s.label) + " outside [0," +
              std::to_string(num_classes) + ")");

  TinyClassifier clf(num_classes, downsample, dataset[0].image.channels());
  const int d = clf.feature_dim();

  std::vector<std::vector<double>> feats;
  feats.reserve(dataset.size());
  for (const auto& s : dataset) feats.push_back(clf.features(s.image));

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Rng rng(seed);
  std::vector<double> gw(clf.weights().size());
  std::vector<double> gb(static_cast<std::size_t>(num_classes));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_below(i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t bi = begin; bi < end; ++bi) {
        const std::size_t si = order[bi];
        const std::vector<double>& f = feats[si];
        const std::vector<double> p = softmax(clf.logits(f));
        for (int c = 0; c < num_classes; ++c) {
          const double delta = p[c] - (c == dataset[si].label ? 1.0 : 0.0);
          gb[c] += delta;
          double* grow = &gw[static_cast<std::size_t>(c) * d];
          for (int j = 0; j < d; ++j) grow[j] += delta * f[j];
        }
      }
      const double step = learning_rate / static_cast<double>(end - begin);
      for (std::size_t j = 0; j < gw.size(); ++j) clf.weights()[j] -= step * gw[j];
      for (int c = 0; c < num_classes; ++c) clf.bias()[c] -= step * gb[c];
    }
  }
  return clf;
}

inline double dataset_cross_entropy(const TinyClassifier& clf,
                                    const std::vector<LabeledImage>& dataset) {
  check(!dataset.empty(), errc::empty_dataset, "empty dataset");
  double loss = 0.0;
  for (const auto& s : dataset) {
    const ClassScores sc = clf.score(s.image);
    loss += -std::log(std::max(sc.probabilities[s.label], 1e-12));
  }
  return loss / static_cast<double>(dataset.size());
}

inline double dataset_accuracy(const TinyClassifier& clf,
                               const std::vector<LabeledImage>& dataset) {
  check(!dataset.empty(), errc::empty_dataset, "empty dataset");
  std::int64_t hits = 0;
  for (const auto& s : dataset) {
    const ClassScores sc = clf.score(s.image);
    int best = 0;
    for (int c = 1; c < clf.num_classes(); ++c)
      if (sc.probabilities[c] > sc.probabilities[best]) best = c;
    hits += best == s.label;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

/// Labels sorted by descending probability, ties broken by ascending index.
inline std::vector<int> predict_topk(const Scorer& scorer, const Image& img, int k) {
  const int c = scorer.num_classes();
  check(k >= 1 && k <= c, errc::k_out_of_range,
        "k must be in [1," + std::to_string(c) + "]");
  const ClassScores sc = scorer.score(img);
  std::vector<int> idx(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (sc.probabilities[a] != sc.probabilities[b])
      return sc.probabilities[a] > sc.probabilities[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

// ---- persistence ----

inline void save_classifier(const TinyClassifier& clf, const std::filesystem::path& p) {
  nlohmann::json j{{"num_classes", clf.num_classes()},
                   {"feature_dim", clf.feature_dim()},
                   {"downsample", clf.downsample()},
                   {"weights", clf.weights()},
                   {"bias", clf.bias()}};
  atomic_write_file(p, j.dump());
}

inline TinyClassifier load_classifier(const std::filesystem::path& p) {
  const auto j = nlohmann::json::parse(read_text_file(p));
  const int num_classes = j.at("num_classes").get<int>();
  const int feature_dim = j.at("feature_dim").get<int>();
  const int downsample = j.at("downsample").get<int>();
  check(downsample >= 1 && feature_dim % (downsample * downsample) == 0, errc::io_error,
        "inconsistent classifier header: " + p.string());
  const int channels = feature_dim / (downsample * downsample);
  TinyClassifier clf(num_classes, downsample, channels);
  clf.weights() = j.at("weights").get<std::vector<double>>();
  clf.bias() = j.at("bias").get<std::vector<double>>();
  check(clf.weights().size() == static_cast<std::size_t>(num_classes) * feature_dim &&
            clf.bias().size() == static_cast<std::size_t>(num_classes),
        errc::io_error, "classifier payload size mismatch: " + p.string());
  return clf;
}

// Reads precomputed per-(image, box) posteriors, so scores from a real
// pretrained network can drive harvesting without that network being linked
// in. Only usable through score_box.
class CachedScorer final : public Scorer {
 public:
  explicit CachedScorer(int num_classes) : num_classes_(num_classes) {
    check(num_classes_ >= 2, errc::invalid_argument, "need at least two classes");
  }

  int num_classes() const override { return num_classes_; }

  ClassScores score(const Image&) const override {
    throw Error(errc::invalid_argument,
                "score cache has no whole-image entry; use score_box");
  }

  ClassScores score_box(const Image&, const std::string& image_id,
                        const Box& box) const override {
    const auto it = cache_.find(key(image_id, box));
    check(it != cache_.end(), errc::missing_input,
          "no cached score for " + key(image_id, box));
    return it->second;
  }

  void insert(const std::string& image_id, const Box& box, ClassScores scores) {
    check(static_cast<int>(scores.probabilities.size()) == num_classes_,
          errc::dimension_mismatch, "cached score length mismatch");
    cache_[key(image_id, box)] = std::move(scores);
  }

  static CachedScorer load(const std::filesystem::path& p) {
    const auto j = nlohmann::json::parse(read_text_file(p));
    check(j.is_array() && !j.empty(), errc::io_error, "empty score cache: " + p.string());
    CachedScorer cache(static_cast<int>(j.front().at("scores").size()));
    for (const auto& e : j) {
      const auto& b = e.at("box");
      cache.insert(e.at("image_id").get<std::string>(),
                   Box(b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                       b.at(3).get<int>()),
                   ClassScores{e.at("scores").get<std::vector<double>>()});
    }
    return cache;
  }

 private:
  static std::string key(const std::string& image_id, const Box& b) {
    return image_id + "|" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
           std::to_string(b.x1) + "," + std::to_string(b.y1);
  }

  int num_classes_;
  std::unordered_map<std::string, ClassScores> cache_;
};

}  // namespace wsol

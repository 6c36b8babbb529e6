#pragma once

// Synthetic verification corpus. Each image carries one class-defining shape
// (color + shape identify the class), a few distractor shapes from a shared
// neutral palette, and a value-noise background. Every attention map
// highlights one scene object through a smooth bump plus additive noise,
// mimicking class-agnostic attention heads. Generation is fully determined
// by the seed, with one RNG stream per image.

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/imaging.hpp"
#include "wsol/proposals.hpp"

namespace wsol {

struct SynthSpec {
  int num_images = 100;
  int num_classes = 4;
  int image_size = 64;
  int distractors_per_image = 3;
  int attention_maps_per_image = 6;
  double noise_level = 0.15;
  std::uint64_t seed = 0;
};

inline void validate(const SynthSpec& s) {
  check(s.num_images >= 1, errc::config_invalid, "num_images must be >= 1");
  check(s.num_classes >= 2 && s.num_classes <= 8, errc::config_invalid,
        "num_classes must be in [2,8]");
  check(s.image_size >= 32, errc::config_invalid, "image_size must be >= 32");
  check(s.distractors_per_image >= 0, errc::config_invalid, "negative distractor count");
  check(s.attention_maps_per_image >= 2, errc::config_invalid, "need at least 2 maps");
  check(s.noise_level >= 0.0 && s.noise_level <= 1.0, errc::config_invalid,
        "noise_level outside [0,1]");
}

namespace synth_detail {

// Class colors sit above the background band (<= 0.63) in at least one
// channel; distractor colors never do, so a class object is the only source
// of strong per-cell maxima in its image.
inline constexpr std::array<std::array<double, 3>, 8> kClassColors{{
    {0.95, 0.10, 0.10},  // red
    {0.10, 0.92, 0.12},  // green
    {0.10, 0.18, 0.95},  // blue
    {0.95, 0.88, 0.08},  // yellow
    {0.92, 0.10, 0.90},  // magenta
    {0.08, 0.90, 0.88},  // cyan
    {0.95, 0.55, 0.08},  // orange
    {0.90, 0.10, 0.70},  // pink
}};

inline constexpr std::array<std::array<double, 3>, 4> kDistractorColors{{
    {0.22, 0.22, 0.22},  // dark gray
    {0.30, 0.38, 0.28},  // olive gray
    {0.40, 0.28, 0.16},  // brown
    {0.40, 0.46, 0.55},  // slate
}};

// Smooth lattice noise in [0,1], two octaves.
inline std::vector<double> value_noise(int w, int h, int cell, Rng& rng) {
  const auto octave = [&](int c) {
    const int gx = w / c + 2, gy = h / c + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gx) * gy);
    for (double& v : lattice) v = rng.uniform01();
    std::vector<double> out(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
      const double fy = static_cast<double>(y) / c;
      const int iy = static_cast<int>(fy);
      double ty = fy - iy;
      ty = ty * ty * (3.0 - 2.0 * ty);
      for (int x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) / c;
        const int ix = static_cast<int>(fx);
        double tx = fx - ix;
        tx = tx * tx * (3.0 - 2.0 * tx);
        const double v00 = lattice[static_cast<std::size_t>(iy) * gx + ix];
        const double v10 = lattice[static_cast<std::size_t>(iy) * gx + ix + 1];
        const double v01 = lattice[static_cast<std::size_t>(iy + 1) * gx + ix];
        const double v11 = lattice[static_cast<std::size_t>(iy + 1) * gx + ix + 1];
        out[static_cast<std::size_t>(y) * w + x] =
            (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
      }
    }
    return out;
  };
  std::vector<double> a = octave(cell);
  const std::vector<double> b = octave(std::max(2, cell / 2));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (2.0 * a[i] + b[i]) / 3.0;
  return a;
}

}  // namespace synth_detail

struct SceneObject {
  Box box;            // placement box
  bool ellipse;       // ellipse inscribed in the box, else the filled box
  std::array<double, 3> color;
  std::vector<std::uint8_t> mask;  // image-sized indicator of the drawn pixels
};

struct SynthScene {
  std::string image_id;
  int label = 0;
  Image image;
  AttentionStack stack;
  Box gt_box;          // tight box of the class object's drawn pixels
  BinaryMask gt_mask;  // class object pixels
  std::vector<Box> distractor_boxes;
};

namespace synth_detail {

inline std::vector<std::uint8_t> rasterize(const Box& b, bool ellipse, int size) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
  const double cx = 0.5 * (b.x0 + b.x1), cy = 0.5 * (b.y0 + b.y1);
  const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      bool in = true;
      if (ellipse) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        in = dx * dx + dy * dy <= 1.0;
      }
      if (in) mask[static_cast<std::size_t>(y) * size + x] = 1;
    }
  }
  return mask;
}

inline Box tight_box(const std::vector<std::uint8_t>& mask, int size) {
  int minx = size, miny = size, maxx = -1, maxy = -1;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (mask[static_cast<std::size_t>(y) * size + x]) {
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
      }
  check(maxx >= 0, errc::invalid_argument, "empty shape");
  return Box(minx, miny, maxx + 1, maxy + 1);
}

inline bool overlaps_any(const Box& b, const std::vector<SceneObject>& objects, int gap) {
  for (const SceneObject& o : objects) {
    const bool apart = b.x1 + gap <= o.box.x0 || o.box.x1 + gap <= b.x0 ||
                       b.y1 + gap <= o.box.y0 || o.box.y1 + gap <= b.y0;
    if (!apart) return true;
  }
  return false;
}

}  // namespace synth_detail

/// Builds one scene in memory; `synth_generate` persists it. Deterministic in
/// (spec.seed, image_id).
inline SynthScene synth_scene(const SynthSpec& spec, const std::string& image_id) {
  validate(spec);
  using namespace synth_detail;
  const int size = spec.image_size;
  Rng rng(spec.seed ^ fnv1a64(image_id));

  const int label = static_cast<int>(rng.uniform_below(
      static_cast<std::uint64_t>(spec.num_classes)));

  // Class object first, then distractors placed with a no-overlap gap.
  std::vector<SceneObject> objects;
  const auto place = [&](double lo_frac, double hi_frac, int tries) -> std::optional<Box> {
    for (int t = 0; t < tries; ++t) {
      const int bw = rng.uniform_int(static_cast<int>(lo_frac * size),
                                     static_cast<int>(hi_frac * size));
      const int bh = rng.uniform_int(static_cast<int>(lo_frac * size),
                                     static_cast<int>(hi_frac * size));
      const int x0 = rng.uniform_int(3, size - 3 - bw);
      const int y0 = rng.uniform_int(3, size - 3 - bh);
      const Box b(x0, y0, x0 + bw, y0 + bh);
      if (!overlaps_any(b, objects, 2)) return b;
    }
    return std::nullopt;
  };

  {
    const auto b = place(0.22, 0.34, 100);
    check(b.has_value(), errc::invalid_argument, "could not place class object");
    objects.push_back({*b, label % 2 == 1, kClassColors[static_cast<std::size_t>(label)],
                       rasterize(*b, label % 2 == 1, size)});
  }
  for (int d = 0; d < spec.distractors_per_image; ++d) {
    const auto b = place(0.12, 0.20, 200);
    if (!b) continue;  // crowded scene; skip this distractor
    const bool ellipse = rng.uniform_below(2) == 1;
    const auto color = kDistractorColors[static_cast<std::size_t>(
        rng.uniform_below(kDistractorColors.size()))];
    objects.push_back({*b, ellipse, color, rasterize(*b, ellipse, size)});
  }

  // Background texture, then objects on top.
  const std::vector<double> noise = value_noise(size, size, std::max(4, size / 6), rng);
  std::vector<double> pixels(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = 0.45 + 0.18 * noise[static_cast<std::size_t>(y) * size + x];
      for (int c = 0; c < 3; ++c)
        pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c] = v;
    }
  for (const SceneObject& o : objects)
    for (int y = o.box.y0; y < o.box.y1; ++y)
      for (int x = o.box.x0; x < o.box.x1; ++x)
        if (o.mask[static_cast<std::size_t>(y) * size + x])
          for (int c = 0; c < 3; ++c)
            pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c] = o.color[c];
  Image image(size, size, 3, std::move(pixels));

  // Attention maps: map m highlights object (m mod #objects). The bump is a
  // sharp core over the object plus a wide skirt, so the binarization level
  // matters for raw maps, plus additive value noise.
  std::vector<GrayMap> maps;
  maps.reserve(static_cast<std::size_t>(spec.attention_maps_per_image));
  for (int m = 0; m < spec.attention_maps_per_image; ++m) {
    const SceneObject& o = objects[static_cast<std::size_t>(m) % objects.size()];
    std::vector<double> ind(static_cast<std::size_t>(size) * size);
    for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = o.mask[i] ? 1.0 : 0.0;
    const Image indicator(size, size, 1, std::move(ind));
    const Image core = gaussian_blur(indicator, std::max(1.0, size / 48.0));
    const Image skirt = gaussian_blur(indicator, std::max(2.0, size / 10.0));
    const std::vector<double> mnoise = value_noise(size, size, std::max(3, size / 10), rng);
    std::vector<double> values(static_cast<std::size_t>(size) * size);
    double peak = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = 0.55 * core.data()[i] + 0.45 * skirt.data()[i];
      peak = std::max(peak, values[i]);
    }
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = values[i] / peak + spec.noise_level * mnoise[i];
    maps.emplace_back(size, size, std::move(values));
  }

  std::vector<std::uint8_t> gt_bits(objects[0].mask.begin(), objects[0].mask.end());
  BinaryMask gt_mask(size, size, std::move(gt_bits));
  const Box gt_box = tight_box(objects[0].mask, size);

  std::vector<Box> distractor_boxes;
  for (std::size_t i = 1; i < objects.size(); ++i)
    distractor_boxes.push_back(objects[i].box);

  return SynthScene{image_id,
                    label,
                    std::move(image),
                    AttentionStack(std::move(maps)),
                    gt_box,
                    std::move(gt_mask),
                    std::move(distractor_boxes)};
}

inline std::string synth_image_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img%04d", index);
  return buf;
}

/// Writes images/, attention/, masks/, gt.jsonl and meta.json under out_dir.
/// Rerunning with the same spec reproduces every byte.
inline void synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  namespace fs = std::filesystem;
  std::string gt_lines;
  std::vector<std::string> ids;
  for (int i = 0; i < spec.num_images; ++i) {
    const std::string id = synth_image_id(i);
    ids.push_back(id);
    const SynthScene scene = synth_scene(spec, id);

    save_ppm(scene.image, out_dir / "images" / (id + ".ppm"));
    save_attention_stack(scene.stack, out_dir / "attention" / (id + ".bin"));

    std::vector<double> mask_px(scene.gt_mask.bits().size());
    for (std::size_t p = 0; p < mask_px.size(); ++p)
      mask_px[p] = scene.gt_mask.bits()[p] ? 1.0 : 0.0;
    save_pgm(Image(spec.image_size, spec.image_size, 1, std::move(mask_px)),
             out_dir / "masks" / (id + ".pgm"));

    const nlohmann::json line{
        {"image_id", id},
        {"label", scene.label},
        {"boxes",
         {{scene.gt_box.x0, scene.gt_box.y0, scene.gt_box.x1, scene.gt_box.y1}}},
        {"mask_path", "masks/" + id + ".pgm"}};
    gt_lines += line.dump() + "\n";
  }
  atomic_write_file(out_dir / "gt.jsonl", gt_lines);
  const nlohmann::json meta{{"num_images", spec.num_images},
                            {"num_classes", spec.num_classes},
                            {"image_size", spec.image_size},
                            {"distractors_per_image", spec.distractors_per_image},
                            {"n_maps", spec.attention_maps_per_image},
                            {"noise_level", spec.noise_level},
                            {"seed", spec.seed},
                            {"ids", ids}};
  atomic_write_file(out_dir / "meta.json", meta.dump(2) + "\n");
}

}  // namespace wsol

#pragma once

// Pixel-grid types (Image, GrayMap, BinaryMask, Box) and the image-processing
// primitives used throughout the toolkit: Otsu thresholding, connected
// components, Gaussian blur, box-windowed perturbation, bilinear resampling,
// and the PNM / raw-float file formats.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>

#include <json.hpp>

#include "wsol/common.hpp"

namespace wsol {

// Half-open pixel rectangle: x in [x0, x1), y in [y0, y1).
struct Box {
  int x0, y0, x1, y1;

  Box(int bx0, int by0, int bx1, int by1) : x0(bx0), y0(by0), x1(bx1), y1(by1) {
    check(x0 >= 0 && y0 >= 0 && x0 < x1 && y0 < y1, errc::invalid_argument,
          "degenerate box");
  }

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  std::int64_t area() const { return static_cast<std::int64_t>(width()) * height(); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool within(int image_w, int image_h) const { return x1 <= image_w && y1 <= image_h; }
  bool operator==(const Box&) const = default;
};

// Row-major interleaved pixel grid, every value in [0, 1]. Immutable after
// construction; safe to share across workers.
class Image {
 public:
  Image(int width, int height, int channels, std::vector<double> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    check(width_ > 0 && height_ > 0, errc::invalid_argument, "empty image");
    check(channels_ == 1 || channels_ == 3, errc::invalid_argument,
          "channels must be 1 or 3");
    check(data_.size() == static_cast<std::size_t>(width_) * height_ * channels_,
          errc::invalid_argument, "image data length mismatch");
    for (double v : data_)
      check(v >= 0.0 && v <= 1.0, errc::invalid_argument, "pixel value outside [0,1]");
  }

  Image(int width, int height, int channels, double fill = 0.0)
      : Image(width, height, channels,
              std::vector<double>(static_cast<std::size_t>(width) * height * channels,
                                  fill)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  double at(int x, int y, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::span<const double> data() const { return data_; }

 private:
  int width_, height_, channels_;
  std::vector<double> data_;
};

// Single-channel map with unbounded (finite) values; holds attention tokens
// and score maps.
class GrayMap {
 public:
  GrayMap(int width, int height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    check(width_ > 0 && height_ > 0, errc::invalid_argument, "empty map");
    check(values_.size() == static_cast<std::size_t>(width_) * height_,
          errc::invalid_argument, "map length mismatch");
    for (double v : values_)
      check(std::isfinite(v), errc::invalid_argument, "non-finite map value");
  }

  GrayMap(int width, int height, double fill = 0.0)
      : GrayMap(width, height,
                std::vector<double>(static_cast<std::size_t>(width) * height, fill)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> values() const { return values_; }

 private:
  int width_, height_;
  std::vector<double> values_;
};

class BinaryMask {
 public:
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    check(width_ > 0 && height_ > 0, errc::invalid_argument, "empty mask");
    check(bits_.size() == static_cast<std::size_t>(width_) * height_,
          errc::invalid_argument, "mask length mismatch");
  }

  BinaryMask(int width, int height)
      : BinaryMask(width, height,
                   std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto b : bits_) n += b != 0;
    return n;
  }

 private:
  int width_, height_;
  std::vector<std::uint8_t> bits_;
};

// ---- thresholding ----

/// Otsu's threshold over a 256-bin histogram of min-max-normalized values.
/// Returns the boundary in the map's original value scale, or nullopt for a
/// constant map (no two-class separation exists). The argmax over bins is
/// computed with exact integer arithmetic so ties resolve identically to an
/// exhaustive search (lowest bin wins).
inline std::optional<double> otsu_threshold(const GrayMap& map) {
  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : map.values()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (mx == mn) return std::nullopt;

  constexpr int kBins = 256;
  std::array<std::int64_t, kBins> hist{};
  for (double v : map.values()) {
    int b = static_cast<int>((v - mn) / (mx - mn) * kBins);
    b = std::clamp(b, 0, kBins - 1);
    hist[b]++;
  }

  // Between-class variance with split after bin k:
  //   sigma_b^2(k) = (s0*w1 - s1*w0)^2 / (w0*w1),
  // where w/s are class counts and index-weighted sums. Compared as exact
  // rationals via 128-bit cross-multiplication.
  std::int64_t total_w = 0, total_s = 0;
  for (int i = 0; i < kBins; ++i) {
    total_w += hist[i];
    total_s += static_cast<std::int64_t>(i) * hist[i];
  }

  int best_k = -1;
  __int128 best_num2 = -1;  // (s0*w1 - s1*w0)^2
  std::int64_t best_den = 1;
  std::int64_t w0 = 0, s0 = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += hist[k];
    s0 += static_cast<std::int64_t>(k) * hist[k];
    const std::int64_t w1 = total_w - w0;
    if (w0 == 0 || w1 == 0) continue;
    const std::int64_t s1 = total_s - s0;
    const __int128 num = static_cast<__int128>(s0) * w1 - static_cast<__int128>(s1) * w0;
    const __int128 num2 = num * num;
    const std::int64_t den = w0 * w1;
    // num2/den > best_num2/best_den  <=>  num2*best_den > best_num2*den
    if (best_k < 0 || num2 * best_den > best_num2 * den) {
      best_k = k;
      best_num2 = num2;
      best_den = den;
    }
  }
  check(best_k >= 0, errc::invalid_argument, "otsu: degenerate histogram");
  return mn + (mx - mn) * (best_k + 1) / static_cast<double>(kBins);
}

inline BinaryMask binarize(const GrayMap& map, double threshold) {
  std::vector<std::uint8_t> bits(map.values().size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = map.values()[i] > threshold;
  return BinaryMask(map.width(), map.height(), std::move(bits));
}

// ---- connected components ----

struct Component {
  std::vector<std::int64_t> pixels;  // row-major indices, ascending
  Box box;
};

/// Maximal 8-connected components of the true pixels with their tight boxes,
/// ordered by descending pixel count, ties by (y0, x0) of the box.
inline std::vector<Component> connected_components(const BinaryMask& mask) {
  const int w = mask.width(), h = mask.height();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<Component> comps;
  std::vector<std::int64_t> stack;

  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      const std::int64_t start = static_cast<std::int64_t>(sy) * w + sx;
      if (!mask.at(sx, sy) || seen[start]) continue;
      std::vector<std::int64_t> pixels;
      int minx = sx, maxx = sx, miny = sy, maxy = sy;
      seen[start] = 1;
      stack.push_back(start);
      while (!stack.empty()) {
        const std::int64_t idx = stack.back();
        stack.pop_back();
        pixels.push_back(idx);
        const int x = static_cast<int>(idx % w);
        const int y = static_cast<int>(idx / w);
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            const std::int64_t nidx = static_cast<std::int64_t>(ny) * w + nx;
            if (mask.at(nx, ny) && !seen[nidx]) {
              seen[nidx] = 1;
              stack.push_back(nidx);
            }
          }
        }
      }
      std::sort(pixels.begin(), pixels.end());
      comps.push_back({std::move(pixels), Box(minx, miny, maxx + 1, maxy + 1)});
    }
  }

  std::sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    if (a.pixels.size() != b.pixels.size()) return a.pixels.size() > b.pixels.size();
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    return a.box.x0 < b.box.x0;
  });
  return comps;
}

// ---- blur ----

inline std::vector<double> gaussian_kernel(double sigma) {
  check(sigma > 0.0, errc::nonpositive_sigma, "sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian convolution, kernel radius ceil(3*sigma), edge-clamped
/// borders, output clamped to [0,1].
inline Image gaussian_blur(const Image& img, double sigma) {
  const std::vector<double> kernel = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  const int w = img.width(), h = img.height(), c = img.channels();

  std::vector<double> tmp(static_cast<std::size_t>(w) * h * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, w - 1);
          acc += kernel[k + radius] * img.at(xx, y, ch);
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * c + ch] = acc;
      }
    }
  }

  std::vector<double> out(tmp.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, h - 1);
          acc += kernel[k + radius] * tmp[(static_cast<std::size_t>(yy) * w + x) * c + ch];
        }
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return Image(w, h, c, std::move(out));
}

/// Sharp pixels inside the box, `blurred` everywhere else. Lets callers blur
/// once per image and window many boxes against it.
inline Image composite_inside_box(const Image& sharp, const Image& blurred, const Box& box) {
  check(sharp.width() == blurred.width() && sharp.height() == blurred.height() &&
            sharp.channels() == blurred.channels(),
        errc::dimension_mismatch, "composite: image dimensions differ");
  check(box.within(sharp.width(), sharp.height()), errc::out_of_bounds,
        "composite: box outside image");
  const int w = sharp.width(), h = sharp.height(), c = sharp.channels();
  std::vector<double> out(blurred.data().begin(), blurred.data().end());
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x)
      for (int ch = 0; ch < c; ++ch)
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] = sharp.at(x, y, ch);
  return Image(w, h, c, std::move(out));
}

inline Image blur_outside_box(const Image& img, const Box& box, double sigma) {
  check(box.within(img.width(), img.height()), errc::out_of_bounds,
        "blur_outside_box: box outside image");
  return composite_inside_box(img, gaussian_blur(img, sigma), box);
}

// ---- resampling ----

/// Corner-aligned bilinear resampling; exact identity when dimensions do not
/// change.
inline GrayMap resize_bilinear(const GrayMap& in, int out_w, int out_h) {
  check(out_w >= 1 && out_h >= 1, errc::invalid_argument, "resize: empty output");
  if (out_w == in.width() && out_h == in.height())
    return GrayMap(out_w, out_h, std::vector<double>(in.values().begin(), in.values().end()));

  const int w = in.width(), h = in.height();
  std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double v = (1.0 - ty) * ((1.0 - tx) * in.at(x0, y0) + tx * in.at(x1, y0)) +
                       ty * ((1.0 - tx) * in.at(x0, y1) + tx * in.at(x1, y1));
      out[static_cast<std::size_t>(oy) * out_w + ox] = v;
    }
  }
  return GrayMap(out_w, out_h, std::move(out));
}

// ---- PNM io (binary P5/P6, 8-bit) ----

inline int quantize255(double v) {
  return std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
}

namespace detail {

inline std::string pnm_encode(const Image& img, const char* magic) {
  std::string out = std::string(magic) + "\n" + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.data().size());
  for (double v : img.data()) out.push_back(static_cast<char>(quantize255(v)));
  return out;
}

inline int pnm_read_int(const std::string& s, std::size_t& pos) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  check(pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos])), errc::io_error,
        "malformed PNM header");
  int v = 0;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + (s[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace detail

inline void save_ppm(const Image& img, const std::filesystem::path& p) {
  check(img.channels() == 3, errc::channel_mismatch, "PPM requires 3 channels");
  atomic_write_file(p, detail::pnm_encode(img, "P6"));
}

inline void save_pgm(const Image& img, const std::filesystem::path& p) {
  check(img.channels() == 1, errc::channel_mismatch, "PGM requires 1 channel");
  atomic_write_file(p, detail::pnm_encode(img, "P5"));
}

inline Image load_pnm(const std::filesystem::path& p) {
  const std::string s = read_text_file(p);
  check(s.size() >= 2 && s[0] == 'P' && (s[1] == '5' || s[1] == '6'), errc::io_error,
        "not a binary PGM/PPM file: " + p.string());
  const int channels = s[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  const int w = detail::pnm_read_int(s, pos);
  const int h = detail::pnm_read_int(s, pos);
  const int maxval = detail::pnm_read_int(s, pos);
  check(maxval == 255, errc::io_error, "only 8-bit PNM supported: " + p.string());
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  check(s.size() - pos >= need, errc::io_error, "truncated PNM payload: " + p.string());
  std::vector<double> data(need);
  for (std::size_t i = 0; i < need; ++i)
    data[i] = static_cast<unsigned char>(s[pos + i]) / 255.0;
  return Image(w, h, channels, std::move(data));
}

// ---- raw GrayMap io: float32 LE payload + JSON sidecar ----

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  std::filesystem::path s = p;
  s += ".json";
  return s;
}

inline void save_graymap_raw(const GrayMap& map, const std::filesystem::path& p) {
  std::string payload;
  payload.reserve(map.values().size() * 4);
  for (double v : map.values()) push_f32le(payload, v);
  atomic_write_file(p, payload);
  nlohmann::json meta{{"width", map.width()}, {"height", map.height()}};
  atomic_write_file(sidecar_path(p), meta.dump());
}

inline GrayMap load_graymap_raw(const std::filesystem::path& p) {
  const auto meta = nlohmann::json::parse(read_text_file(sidecar_path(p)));
  const int w = meta.at("width").get<int>();
  const int h = meta.at("height").get<int>();
  const std::vector<unsigned char> bytes = read_binary_file(p);
  const std::size_t need = static_cast<std::size_t>(w) * h * 4;
  check(bytes.size() == need, errc::io_error, "raw map payload size mismatch: " + p.string());
  std::vector<double> values(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = read_f32le(&bytes[i * 4]);
  return GrayMap(w, h, std::move(values));
}

}  // namespace wsol

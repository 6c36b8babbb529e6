#pragma once

// Shared plumbing: error codes, deterministic RNG, file helpers.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wsol {

enum class errc {
  invalid_argument,
  nonpositive_sigma,
  channel_mismatch,
  empty_dataset,
  label_out_of_range,
  k_out_of_range,
  empty_pool,
  overlap,
  out_of_bounds,
  dimension_mismatch,
  all_unknown,
  missing_mask,
  missing_gt_box,
  short_prediction_list,
  config_invalid,
  missing_input,
  io_error,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::invalid_argument: return "invalid_argument";
    case errc::nonpositive_sigma: return "nonpositive_sigma";
    case errc::channel_mismatch: return "channel_mismatch";
    case errc::empty_dataset: return "empty_dataset";
    case errc::label_out_of_range: return "label_out_of_range";
    case errc::k_out_of_range: return "k_out_of_range";
    case errc::empty_pool: return "empty_pool";
    case errc::overlap: return "overlap";
    case errc::out_of_bounds: return "out_of_bounds";
    case errc::dimension_mismatch: return "dimension_mismatch";
    case errc::all_unknown: return "all_unknown";
    case errc::missing_mask: return "missing_mask";
    case errc::missing_gt_box: return "missing_gt_box";
    case errc::short_prediction_list: return "short_prediction_list";
    case errc::config_invalid: return "config_invalid";
    case errc::missing_input: return "missing_input";
    case errc::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

inline void check(bool ok, errc code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

// FNV-1a, used to derive per-item RNG streams from a global seed.
inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// Deterministic generator. mt19937_64 raw output is pinned by the standard;
// the derived draws below avoid std distributions, whose streams are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_below(std::uint64_t n) {
    check(n > 0, errc::invalid_argument, "uniform_below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform int in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    check(lo <= hi, errc::invalid_argument, "uniform_int: empty range");
    return lo + static_cast<int>(uniform_below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

 private:
  std::mt19937_64 gen_;
};

// ---- file helpers ----

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  check(in.good(), errc::missing_input, "cannot open " + p.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  check(!in.bad(), errc::io_error, "read failed: " + p.string());
  return data;
}

inline std::vector<unsigned char> read_binary_file(const std::filesystem::path& p) {
  std::string s = read_text_file(p);
  return std::vector<unsigned char>(s.begin(), s.end());
}

// Write-temp-then-rename so partially written artifacts are never observable.
inline void atomic_write_file(const std::filesystem::path& p, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    check(out.good(), errc::io_error, "cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    check(out.good(), errc::io_error, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  check(!ec, errc::io_error, "rename failed: " + p.string());
}

// 32-bit IEEE-754 little-endian scalars, the on-disk map element format.
inline void push_f32le(std::string& out, double v) {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline double read_f32le(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(u));
}

}  // namespace wsol

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "helpers.hpp"
#include "wsol/pseudolabels.hpp"

using namespace wsol;

namespace {

std::set<std::pair<int, int>> as_set(const std::vector<Pixel>& px) {
  std::set<std::pair<int, int>> s;
  for (const Pixel& p : px) s.insert({p.x, p.y});
  return s;
}

}  // namespace

TEST_CASE("exhaustive foreground sampling returns the whole box") {
  Rng rng(31);
  const GrayMap e = testgen::random_map(rng, 6, 6);
  const Box box(1, 2, 4, 5);  // 9 px
  SamplingConfig cfg;
  cfg.n_plus = 9;
  cfg.samples_per_side = 9;
  const auto got = as_set(sample_foreground(e, box, cfg, rng));
  CHECK(got.size() == 9);
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) CHECK(got.count({x, y}) == 1);
}

TEST_CASE("a single-candidate pool always yields that pixel") {
  std::vector<double> v(16, 0.0);
  v[5] = 1.0;  // (1,1)
  const GrayMap e(4, 4, std::move(v));
  SamplingConfig cfg;
  cfg.n_plus = 1;
  cfg.samples_per_side = 1;
  Rng rng(32);
  for (int i = 0; i < 50; ++i) {
    const auto px = sample_foreground(e, Box(0, 0, 4, 4), cfg, rng);
    REQUIRE(px.size() == 1);
    CHECK(px[0] == Pixel{1, 1});
  }
}

TEST_CASE("multinomial frequencies follow activations proportionally") {
  // activations {1,2,3}: expected frequencies (1/6, 2/6, 3/6)
  const GrayMap e(3, 1, {1.0, 2.0, 3.0});
  SamplingConfig cfg;
  cfg.n_plus = 3;
  cfg.samples_per_side = 1;
  Rng rng(33);
  std::map<int, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i)
    counts[sample_foreground(e, Box(0, 0, 3, 1), cfg, rng)[0].x]++;
  double tv = 0.0;
  const double expected[3] = {1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0};
  for (int x = 0; x < 3; ++x)
    tv += std::abs(counts[x] / static_cast<double>(draws) - expected[x]);
  CHECK(tv / 2.0 <= 0.02);
}

TEST_CASE("non-positive activations are shifted to positive weights") {
  const GrayMap e(3, 1, {-2.0, -1.0, 0.0});
  SamplingConfig cfg;
  cfg.n_plus = 3;
  cfg.samples_per_side = 1;
  Rng rng(34);
  std::map<int, int> counts;
  for (int i = 0; i < 20000; ++i)
    counts[sample_foreground(e, Box(0, 0, 3, 1), cfg, rng)[0].x]++;
  // weights ~ {eps, 1, 2}: pixel 0 nearly never, pixel 2 about twice pixel 1
  CHECK(counts[0] < 100);
  CHECK(counts[2] > counts[1]);
}

TEST_CASE("foreground samples stay inside the box and the top-n+ pool") {
  Rng rng(35);
  for (int trial = 0; trial < 40; ++trial) {
    const GrayMap e = testgen::random_map(rng, 32, 32);
    const int x0 = rng.uniform_int(0, 20), y0 = rng.uniform_int(0, 20);
    const Box box(x0, y0, x0 + rng.uniform_int(3, 11), y0 + rng.uniform_int(3, 11));
    SamplingConfig cfg;
    cfg.fg_pool_fraction = 0.25;
    cfg.samples_per_side = 10;
    const int n_plus = cfg.fg_pool_size(box.area());

    std::vector<double> inside;
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) inside.push_back(e.at(x, y));
    std::sort(inside.begin(), inside.end(), std::greater<>());
    const double nth = inside[static_cast<std::size_t>(n_plus - 1)];

    const auto px = sample_foreground(e, box, cfg, rng);
    CHECK(static_cast<int>(px.size()) == std::min(cfg.samples_per_side, n_plus));
    CHECK(as_set(px).size() == px.size());  // distinct
    for (const Pixel& p : px) {
      CHECK(box.contains(p.x, p.y));
      CHECK(e.at(p.x, p.y) >= nth);
    }
  }
}

TEST_CASE("background sampling fails when boxes cover the domain") {
  Rng rng(36);
  const GrayMap e = testgen::random_map(rng, 8, 8);
  SamplingConfig cfg;
  CHECK_FALSE(sample_background(e, {Box(0, 0, 8, 8)}, cfg, rng).has_value());
  // partial covers leave candidates
  CHECK(sample_background(e, {Box(0, 0, 8, 7)}, cfg, rng).has_value());
}

TEST_CASE("a single exterior pixel is always the background sample") {
  Rng rng(37);
  const GrayMap e = testgen::random_map(rng, 3, 3);
  SamplingConfig cfg;
  cfg.n_minus = 1;
  cfg.samples_per_side = 1;
  // boxes covering everything except (2,2)
  const std::vector<Box> boxes{Box(0, 0, 3, 2), Box(0, 2, 2, 3)};
  for (int i = 0; i < 30; ++i) {
    const auto px = sample_background(e, boxes, cfg, rng);
    REQUIRE(px.has_value());
    REQUIRE(px->size() == 1);
    CHECK((*px)[0] == Pixel{2, 2});
  }
}

TEST_CASE("background sampling is uniform over the candidate pool") {
  // 20x10 map, box covering the left half: exterior pool of 100 pixels
  const GrayMap e(20, 10, 0.25);
  SamplingConfig cfg;
  cfg.n_minus = 100;
  cfg.samples_per_side = 1;
  Rng rng(38);
  std::map<std::pair<int, int>, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto px = sample_background(e, {Box(0, 0, 10, 10)}, cfg, rng);
    counts[{(*px)[0].x, (*px)[0].y}]++;
  }
  CHECK(counts.size() == 100);
  for (const auto& [pos, c] : counts)
    CHECK(std::abs(c / static_cast<double>(draws) - 0.01) <= 0.003);
}

TEST_CASE("background samples stay outside all boxes and in the low-n- pool") {
  Rng rng(39);
  for (int trial = 0; trial < 40; ++trial) {
    const GrayMap e = testgen::random_map(rng, 24, 24);
    const std::vector<Box> boxes{
        Box(rng.uniform_int(0, 8), rng.uniform_int(0, 8), rng.uniform_int(9, 16),
            rng.uniform_int(9, 16)),
        Box(rng.uniform_int(12, 18), rng.uniform_int(12, 18), rng.uniform_int(19, 24),
            rng.uniform_int(19, 24))};
    SamplingConfig cfg;
    cfg.bg_pool_fraction = 0.3;
    cfg.samples_per_side = 12;

    std::vector<double> exterior;
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        bool in = false;
        for (const Box& b : boxes) in = in || b.contains(x, y);
        if (!in) exterior.push_back(e.at(x, y));
      }
    std::sort(exterior.begin(), exterior.end());
    const int n_minus = cfg.bg_pool_size(static_cast<std::int64_t>(exterior.size()));
    const double nth = exterior[static_cast<std::size_t>(n_minus - 1)];

    const auto px = sample_background(e, boxes, cfg, rng);
    REQUIRE(px.has_value());
    CHECK(as_set(*px).size() == px->size());
    for (const Pixel& p : *px) {
      for (const Box& b : boxes) CHECK_FALSE(b.contains(p.x, p.y));
      CHECK(e.at(p.x, p.y) <= nth);
    }
  }
}

TEST_CASE("foreground and background stay balanced on non-degenerate pools") {
  Rng rng(40);
  const GrayMap e = testgen::random_map(rng, 30, 30);
  const Box box(5, 5, 20, 20);
  SamplingConfig cfg;
  cfg.samples_per_side = 10;
  const auto fg = sample_foreground(e, box, cfg, rng);
  const auto bg = sample_background(e, {box}, cfg, rng);
  REQUIRE(bg.has_value());
  CHECK(fg.size() == 10);
  CHECK(bg->size() == 10);
}

TEST_CASE("resampling varies across steps") {
  Rng rng(41);
  const GrayMap e = testgen::random_map(rng, 16, 16);
  const Box box(2, 2, 14, 14);
  SamplingConfig cfg;
  cfg.samples_per_side = 5;
  const auto first = as_set(sample_foreground(e, box, cfg, rng));
  bool differs = false;
  for (int i = 0; i < 10 && !differs; ++i)
    differs = as_set(sample_foreground(e, box, cfg, rng)) != first;
  CHECK(differs);
}

TEST_CASE("build_pseudo_mask places labels and leaves the rest unknown") {
  const PseudoLabelMask m = build_pseudo_mask({Pixel{1, 1}}, {Pixel{0, 0}}, 2, 2);
  CHECK(m.at(1, 1) == PixelLabel::kForeground);
  CHECK(m.at(0, 0) == PixelLabel::kBackground);
  CHECK(m.at(1, 0) == PixelLabel::kUnknown);
  CHECK(m.at(0, 1) == PixelLabel::kUnknown);
  CHECK(m.labeled_count() == 2);
}

TEST_CASE("build_pseudo_mask accepts a foreground-only mask") {
  const PseudoLabelMask m = build_pseudo_mask({Pixel{0, 0}, Pixel{1, 0}}, {}, 3, 3);
  CHECK(m.labeled_count() == 2);
}

TEST_CASE("build_pseudo_mask rejects overlap, bounds violations, and empty labels") {
  CHECK_THROWS_AS(build_pseudo_mask({Pixel{1, 1}}, {Pixel{1, 1}}, 3, 3), Error);
  CHECK_THROWS_AS(build_pseudo_mask({Pixel{3, 0}}, {}, 3, 3), Error);
  CHECK_THROWS_AS(build_pseudo_mask({}, {Pixel{0, -1}}, 3, 3), Error);
  CHECK_THROWS_AS(build_pseudo_mask({}, {}, 3, 3), Error);
}

TEST_CASE("pseudo-mask PGM export uses the documented levels") {
  const auto dir = std::filesystem::temp_directory_path() / "wsol_test_plm";
  std::filesystem::create_directories(dir);
  const PseudoLabelMask m = build_pseudo_mask({Pixel{1, 0}}, {Pixel{0, 0}}, 2, 1);
  save_pseudo_mask_pgm(m, dir / "m.pgm");
  const Image img = load_pnm(dir / "m.pgm");
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(1, 0, 0) == 1.0);
  const PseudoLabelMask u = build_pseudo_mask({Pixel{0, 0}}, {}, 2, 1);
  save_pseudo_mask_pgm(u, dir / "u.pgm");
  CHECK(load_pnm(dir / "u.pgm").at(1, 0, 0) == Catch::Approx(128.0 / 255.0));
  std::filesystem::remove_all(dir);
}

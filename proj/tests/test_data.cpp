#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "protoseg/data.hpp"
#include "protoseg/errors.hpp"
#include "test_support.hpp"

using namespace protoseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("protoseg_test_" + name);
  fs::remove_all(dir);
  return dir;
}

double area(const Mask& m) {
  double s = 0;
  for (float v : m.values()) s += v;
  return s;
}

// Dataset of tiny blank samples, all carrying class 0.
Dataset stub_dataset(int n) {
  Dataset ds;
  ds.height = ds.width = 4;
  ds.num_classes = 2;
  for (int i = 0; i < n; ++i) {
    ImageSample s;
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", i);
    s.sample_id = id;
    s.image = Image({4, 4, 1}, 0.5f);
    s.masks[0] = protoseg::testing::box_mask(4, 4, 0, 2, 0, 2);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// Blob of intensity `v` with a soft gradient so moments are well defined.
Image blob_image(int size, int r0, int c0, int h, int w, float v) {
  Image img({size, size, 1});
  for (int r = r0; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w; ++c) img.at(r, c, 0) = v * (0.6f + 0.4f * static_cast<float>(c - c0) / w);
  return img;
}

}  // namespace

TEST_CASE("generate_synthetic contract") {
  const Dataset ds = generate_synthetic({1, 64, 4, 7});
  REQUIRE(ds.samples.size() == 1);
  const auto& s = ds.samples[0];
  CHECK(s.masks.size() == 4);
  for (float v : s.image.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  for (const auto& [c, m] : s.masks) {
    CHECK(area(m) >= 1.0);
    for (float v : m.values()) CHECK((v == 0.0f || v == 1.0f));
    for (const auto& [c2, m2] : s.masks) {
      if (c2 <= c) continue;
      for (std::size_t i = 0; i < m.size(); ++i) CHECK_FALSE((m[i] == 1.0f && m2[i] == 1.0f));
    }
  }
}

TEST_CASE("generate_synthetic is deterministic and seed dependent") {
  const Dataset a = generate_synthetic({5, 64, 4, 3});
  const Dataset b = generate_synthetic({5, 64, 4, 3});
  const Dataset c = generate_synthetic({5, 64, 4, 4});
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    same = same && a.samples[i].image == b.samples[i].image && a.samples[i].masks == b.samples[i].masks;
    differs = differs || !(a.samples[i].image == c.samples[i].image);
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("generate_synthetic class areas") {
  const Dataset ds = generate_synthetic({200, 64, 4, 1});
  std::map<int, double> total;
  for (const auto& s : ds.samples)
    for (const auto& [c, m] : s.masks) total[c] += area(m);
  for (const auto& [c, t] : total) {
    const double frac = t / ds.samples.size() / (64.0 * 64.0);
    CAPTURE(c);
    CHECK(frac >= 0.01);
    CHECK(frac <= 0.25);
  }
}

TEST_CASE("generate_synthetic preconditions") {
  CHECK_THROWS_AS(generate_synthetic({1, 64, 1, 1}), ShapeError);
  CHECK_THROWS_AS(generate_synthetic({1, 16, 4, 1}), ShapeError);
  CHECK_THROWS_AS(generate_synthetic({1, 32, 60, 1}), PlacementError);
}

TEST_CASE("class intensity bands are distinct") {
  std::set<float> seen;
  for (int c = 0; c < 6; ++c) seen.insert(class_intensity(c, 6));
  CHECK(seen.size() == 6);
}

TEST_CASE("dataset round-trip is bitwise") {
  const Dataset ds = generate_synthetic({6, 64, 4, 2});
  const fs::path dir = scratch_dir("roundtrip");
  save_dataset(ds, dir, true);
  CHECK(fs::exists(dir / "s0000.pgm"));
  const Dataset back = load_dataset(dir);
  CHECK(back.height == ds.height);
  CHECK(back.width == ds.width);
  CHECK(back.num_classes == ds.num_classes);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].sample_id == ds.samples[i].sample_id);
    CHECK(back.samples[i].image == ds.samples[i].image);
    CHECK(back.samples[i].masks == ds.samples[i].masks);
  }
  fs::remove_all(dir);
}

TEST_CASE("load_dataset errors") {
  const fs::path empty = scratch_dir("empty");
  fs::create_directories(empty);
  try {
    load_dataset(empty);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("meta.json") != std::string::npos);
  }

  const fs::path dir = scratch_dir("corrupt");
  save_dataset(generate_synthetic({2, 64, 4, 2}), dir);
  {
    std::ifstream in(dir / "meta.json");
    nlohmann::json meta = nlohmann::json::parse(in);
    REQUIRE(meta["height"] == 64);
    meta["height"] = 32;
    std::ofstream(dir / "meta.json") << meta.dump();
  }
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  std::ofstream(dir / "meta.json") << "{not json";
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("support sampling") {
  SUBCASE("forced choice with two samples") {
    const Dataset ds = stub_dataset(2);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
      const Episode ep = sample_episode(ds, 0, 1, rng);
      REQUIRE(ep.support.size() == 1);
      CHECK(ep.support[0].sample_id != ep.query_id);
    }
  }
  SUBCASE("fixed support") {
    const Dataset ds = stub_dataset(10);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
      const Episode ep = sample_episode(ds, 0, 1, rng, std::string("s0003"));
      CHECK(ep.support[0].sample_id == "s0003");
      CHECK(ep.query_id != "s0003");
    }
  }
  SUBCASE("insufficient data") {
    const Dataset ds = stub_dataset(1);
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(sample_episode(ds, 0, 1, rng), InsufficientDataError);
    CHECK_THROWS_AS(sample_episode(stub_dataset(3), 1, 1, rng), InsufficientDataError);
  }
  SUBCASE("K supports are distinct and exclude the query") {
    const Dataset ds = stub_dataset(8);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 30; ++i) {
      const Episode ep = sample_episode(ds, 0, 3, rng);
      std::set<std::string> ids;
      for (const auto& s : ep.support) ids.insert(s.sample_id);
      CHECK(ids.size() == 3);
      CHECK(ids.count(ep.query_id) == 0);
    }
  }
}

TEST_CASE("support frequency is uniform over the 99 non-query samples") {
  const Dataset ds = stub_dataset(100);
  std::mt19937_64 rng(12345);
  const int draws = 10000;
  std::vector<int> counts(100, 0);
  for (int i = 0; i < draws; ++i) {
    for (std::size_t s : sample_support_indices(ds, 0, 1, std::size_t{0}, rng)) ++counts[s];
  }
  CHECK(counts[0] == 0);
  const double p = 1.0 / 99.0;
  const double mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (int i = 1; i < 100; ++i) {
    CAPTURE(i);
    CHECK(std::abs(counts[i] - mean) <= 3 * sigma);
  }
}

TEST_CASE("affine_align identity") {
  const Dataset ds = generate_synthetic({1, 64, 4, 5});
  const auto& s = ds.samples[0];
  const AlignResult r = affine_align(s.image, s.masks.at(1), s.image);
  const AffineTransform id;
  for (int i = 0; i < 6; ++i) CHECK(std::abs(r.transform.m[i] - id.m[i]) <= 1e-6);
  CHECK(r.mask == s.masks.at(1));
  CHECK_FALSE(r.collapsed);
}

TEST_CASE("affine_align recovers a translation") {
  const Image support = blob_image(64, 20, 18, 14, 10, 0.8f);
  const Image query = blob_image(64, 16, 26, 14, 10, 0.8f);  // +8 columns, -4 rows
  const Mask mask = protoseg::testing::box_mask(64, 64, 20, 34, 18, 28);
  const AlignResult r = affine_align(support, mask, query);
  const auto t = r.transform.translation();
  CHECK(std::abs(t[0] - 8.0) <= 1.0);
  CHECK(std::abs(t[1] + 4.0) <= 1.0);
  CHECK(r.mask == protoseg::testing::box_mask(64, 64, 16, 30, 26, 36));
}

TEST_CASE("affine_align on uniform images is a pure translation") {
  const Image uniform({32, 32, 1}, 0.5f);
  const Mask mask = protoseg::testing::box_mask(32, 32, 4, 9, 4, 9);
  const AlignResult r = affine_align(uniform, mask, uniform);
  CHECK(std::abs(r.transform.m[0] - 1.0) <= 1e-6);
  CHECK(std::abs(r.transform.m[1]) <= 1e-6);
  CHECK(std::abs(r.transform.m[3]) <= 1e-6);
  CHECK(std::abs(r.transform.m[4] - 1.0) <= 1e-6);
  CHECK(r.mask == mask);
}

TEST_CASE("affine_align clamps the linear part and rejects blank images") {
  // Tall narrow blob onto a wide flat one: raw moment ratio is far beyond 2.
  const Image support = blob_image(64, 4, 30, 56, 4, 0.9f);
  const Image query = blob_image(64, 30, 4, 4, 56, 0.9f);
  const Mask mask = protoseg::testing::box_mask(64, 64, 4, 60, 30, 34);
  const AlignResult r = affine_align(support, mask, query);
  // Singular values of the 2x2 part.
  const double a = r.transform.m[0], b = r.transform.m[1], c = r.transform.m[3], d = r.transform.m[4];
  const double s1 = a * a + b * b + c * c + d * d, det = a * d - b * c;
  const double disc = std::sqrt(std::max(0.0, s1 * s1 - 4 * det * det));
  const double smax = std::sqrt((s1 + disc) / 2), smin = std::sqrt(std::max(0.0, (s1 - disc) / 2));
  CHECK(smax <= 2.0 + 1e-6);
  CHECK(smin >= 0.5 - 1e-6);
  CHECK(det > 1e-6);

  CHECK_THROWS_AS(affine_align(Image({64, 64, 1}), mask, query), DegenerateError);
  CHECK_THROWS_AS(affine_align(support, mask, Image({64, 64, 1})), DegenerateError);
}

TEST_CASE("initial_mask") {
  const Mask a = protoseg::testing::box_mask(8, 8, 0, 3, 0, 3);
  const Mask b = protoseg::testing::box_mask(8, 8, 4, 8, 4, 6);
  CHECK(initial_mask({a}) == a);
  CHECK(area(initial_mask({a, b})) == area(a) + area(b));
  CHECK(initial_mask({a, a}) == a);
  CHECK(initial_mask({a, a}, InitMode::kAverage) == a);
  const Mask avg = initial_mask({a, b}, InitMode::kAverage);
  CHECK(area(avg) == doctest::Approx((area(a) + area(b)) / 2));
  CHECK_THROWS_AS(initial_mask({}), ShapeError);
}

TEST_CASE("downsample_mask") {
  CHECK(downsample_mask(Mask({4, 4, 1}, 1.0f), 4)[0] == 1.0f);

  Mask half({4, 4, 1});
  for (int i = 0; i < 8; ++i) half[static_cast<std::size_t>(i)] = 1.0f;
  const Mask d = downsample_mask(half, 4);
  CHECK(d[0] == 0.5f);
  CHECK(binarize(d)[0] == 1.0f);

  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.3);
  Mask m({64, 64, 1});
  for (auto& v : m.values()) v = coin(rng) ? 1.0f : 0.0f;
  const Mask out = downsample_mask(m, 4);
  CHECK(std::abs(area(out) / out.size() - area(m) / m.size()) <= 1e-6);

  CHECK_THROWS_AS(downsample_mask(Mask({6, 8, 1}), 4), DivisibilityError);
}

TEST_CASE("leave-one-class-out split") {
  CHECK(training_classes(4, 2) == std::vector<int>{0, 1, 3});
  CHECK(training_classes(2, 0) == std::vector<int>{1});
}

TEST_CASE("remove_class repaints only the removed class") {
  const Dataset ds = generate_synthetic({6, 64, 4, 8});
  const Dataset out = remove_class(ds, 2, 5);
  CHECK(out.samples.size() == ds.samples.size());
  CHECK(out.indices_with_class(2).empty());
  CHECK(out.indices_with_class(3).size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& before = ds.samples[i];
    const auto& after = out.samples[i];
    const Mask& removed = before.masks.at(2);
    double object = 0, repainted = 0, n = 0;
    for (std::size_t p = 0; p < removed.size(); ++p) {
      if (removed[p] == 0.0f) {
        CHECK(after.image[p] == before.image[p]);
        continue;
      }
      object += before.image[p];
      repainted += after.image[p];
      ++n;
      CHECK(after.image[p] >= 0.0f);
      CHECK(after.image[p] <= 1.0f);
    }
    // Class 2 of 4 sits at 0.7; the background is a ramp between 0.1 and 0.2.
    CHECK(object / n == doctest::Approx(0.7).epsilon(0.05));
    CHECK(repainted / n < 0.3);
    CHECK(repainted / n > 0.05);
  }
  CHECK(remove_class(ds, 2, 5).samples[0].image == out.samples[0].image);
  CHECK(remove_class(ds, 9, 5).samples[0].image == ds.samples[0].image);
}

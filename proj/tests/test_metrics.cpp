#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "protoseg/checkpoint.hpp"
#include "protoseg/errors.hpp"
#include "protoseg/metrics.hpp"
#include "test_support.hpp"

using namespace protoseg;
using protoseg::testing::box_mask;

namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("protoseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Returns the ground truth of whichever dataset sample has this query image.
Predictor oracle(const Dataset& ds, int class_id) {
  return [&ds, class_id](const std::vector<SupportItem>& support, const Image& query) {
    for (const auto& s : ds.samples) {
      if (s.image == query) {
        Prediction p;
        p.mask = s.masks.at(class_id);
        p.trace.m0 = support[0].mask;
        return p;
      }
    }
    throw std::runtime_error("oracle: unknown query");
  };
}

}  // namespace

TEST_CASE("dsc examples") {
  const Mask a = box_mask(20, 20, 0, 10, 0, 10);
  CHECK(dsc(a, a) == 1.0);
  // 100 pixels each, 50 shared.
  CHECK(dsc(a, box_mask(20, 20, 5, 15, 0, 10)) == doctest::Approx(0.5));
  CHECK(dsc(a, box_mask(20, 20, 10, 20, 10, 20)) == 0.0);
  CHECK(dsc(Mask({4, 4, 1}), Mask({4, 4, 1})) == 1.0);
  CHECK(dsc(Mask({4, 4, 1}), box_mask(4, 4, 0, 1, 0, 1)) == 0.0);
  CHECK_THROWS_AS(dsc(Mask({4, 4, 1}), Mask({4, 5, 1})), ShapeError);
}

TEST_CASE("dsc properties") {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution b(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    Mask m({6, 6, 1}), g({6, 6, 1});
    for (auto& v : m.values()) v = b(rng) ? 1.0f : 0.0f;
    for (auto& v : g.values()) v = b(rng) ? 1.0f : 0.0f;
    if (trial % 10 == 0) g = m;
    const double d = dsc(m, g);
    CHECK(d == dsc(g, m));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK((d == 1.0) == (m == g));
  }
}

TEST_CASE("evaluate with an oracle predictor") {
  const Dataset ds = generate_synthetic({10, 32, 4, 21});
  EvalOptions opt;
  opt.threads = 2;
  const EvalReport r = evaluate(oracle(ds, 2), ds, opt);
  CHECK(r.repeats == 5);
  CHECK(r.repeat_means.size() == 5);
  CHECK(r.mean == 1.0);
  CHECK(r.std == 0.0);
  CHECK(r.baseline_mean < 1.0);
  CHECK(r.baseline_std >= 0.0);
}

TEST_CASE("evaluate modes and reproducibility") {
  const Dataset ds = generate_synthetic({8, 32, 4, 22});
  ModelConfig mc;
  mc.z = 8;
  mc.radius = 1;
  const RpNetModel model = init_model(mc, 2);
  EvalOptions opt;
  opt.t_infer = 2;
  opt.repeats = 3;
  opt.seed = 9;

  const EvalReport a = evaluate(model, ds, opt);
  opt.threads = 3;
  const EvalReport b = evaluate(model, ds, opt);
  CHECK(a.repeat_means == b.repeat_means);
  CHECK(a.baseline_repeat_means == b.baseline_repeat_means);
  CHECK(a.mean == b.mean);
  for (double v : a.repeat_means) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.std >= 0.0);

  opt.fixed_support_id = ds.samples[3].sample_id;
  const EvalReport f = evaluate(model, ds, opt);
  CHECK(f.fixed_support);
  CHECK(f.std == 0.0);
  for (double v : f.repeat_means) CHECK(v == f.repeat_means[0]);

  const auto curve = iteration_curve(model, ds, 2, 3, 5, 2);
  CHECK(curve.size() == 3);
  for (double v : curve) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(curve == iteration_curve(model, ds, 2, 3, 5, 1));
}

TEST_CASE("evaluate needs enough samples of the class") {
  const Dataset ds = generate_synthetic({1, 32, 4, 23});
  CHECK_THROWS_AS(evaluate(oracle(ds, 2), ds, EvalOptions{}), InsufficientDataError);
}

TEST_CASE("report and curve files") {
  const fs::path dir = scratch_dir("reports");
  EvalReport r;
  r.class_id = 2;
  r.repeats = 2;
  r.repeat_means = {0.5, 0.7};
  r.mean = 0.6;
  r.std = 0.1;
  r.write_csv(dir / "r.csv", {"note"});
  std::ifstream in(dir / "r.csv");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text.find("# note\n") == 0);
  CHECK(text.find("class,repeat,mean_dsc\n2,0,0.5\n2,1,0.7\n2,mean,0.6\n2,std,0.1\n") != std::string::npos);

  write_curve_csv({0.25, 0.5}, dir / "c.csv");
  std::ifstream cin(dir / "c.csv");
  std::string curve((std::istreambuf_iterator<char>(cin)), {});
  CHECK(curve == "t,mean_dsc\n1,0.25\n2,0.5\n");
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch_dir("ckpt");
  ModelConfig mc;
  mc.z = 8;
  mc.radius = 3;
  mc.t_infer = 7;
  mc.m0_mode = InitMode::kAverage;
  const RpNetModel model = init_model(mc, 31);
  save_checkpoint(model, {31, 12}, dir / "m.ckpt");
  CHECK(fs::exists(payload_path(dir / "m.ckpt")));
  const LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.info.seed == 31);
  CHECK(back.info.epochs_trained == 12);
  CHECK(back.model.config.z == 8);
  CHECK(back.model.config.radius == 3);
  CHECK(back.model.config.t_infer == 7);
  CHECK(back.model.config.m0_mode == InitMode::kAverage);
  const auto pa = model.named_parameters(), pb = back.model.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].var.value() == pb[i].var.value());
  }

  fs::resize_file(payload_path(dir / "m.ckpt"), 16);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("config file keeps absent keys") {
  const fs::path dir = scratch_dir("config");
  std::ofstream(dir / "c.json") << R"({"model": {"d": 2, "m0_mode": "average"}, "train": {"epochs": 3, "lr": 0.01}})";
  ModelConfig mc;
  TrainConfig tc;
  tc.seed = 77;
  apply_config_file(dir / "c.json", mc, tc);
  CHECK(mc.radius == 2);
  CHECK(mc.z == 32);
  CHECK(mc.m0_mode == InitMode::kAverage);
  CHECK(tc.epochs == 3);
  CHECK(tc.lr == 0.01);
  CHECK(tc.seed == 77);
  CHECK(tc.beta == 1.0);

  std::ofstream(dir / "bad.json") << R"({"model": {"m0_mode": "median"}})";
  CHECK_THROWS_AS(apply_config_file(dir / "bad.json", mc, tc), FormatError);
  std::ofstream(dir / "bad2.json") << R"({"train": {"epochs": "many"}})";
  CHECK_THROWS_AS(apply_config_file(dir / "bad2.json", mc, tc), FormatError);
}

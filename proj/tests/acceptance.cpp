// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Trains five models on the default corpus, so expect
// roughly an hour on a single core.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "protoseg/checkpoint.hpp"
#include "protoseg/cre.hpp"
#include "protoseg/gradient_suite.hpp"
#include "protoseg/metrics.hpp"
#include "protoseg/ops.hpp"
#include "protoseg/proto.hpp"
#include "protoseg/train.hpp"
#include "test_support.hpp"

using namespace protoseg;
using namespace protoseg::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;
using VarD = Var<double>;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int n, const Verdict& v) {
  std::printf("criterion %d: %s%s\n", n, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

// Runs one criterion, turning an escaped exception into a FAIL line.
void criterion(int n, const std::function<void(Verdict&)>& body) {
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  report(n, v);
}

void gradient_suite(Verdict& v) {
  const auto start = Clock::now();
  const auto reports = run_gradient_suite("all", 1);
  const double secs = seconds_since(start);
  double worst = 0;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    v.require(r.passed && r.max_rel_error <= 1e-4, r.op_name + " error " + std::to_string(r.max_rel_error));
  }
  for (const char* op : {"conv", "resize", "split", "corr", "fuse", "proto", "cosine", "dice", "ce", "forward"}) {
    const bool present =
        std::any_of(reports.begin(), reports.end(), [op](const GradCheckReport& r) { return r.op_name == op; });
    v.require(present, std::string("op ") + op + " missing");
  }
  v.require(secs < 120.0, "runtime >= 2 min");
  v.detail << " " << reports.size() << " ops, max rel error " << worst << ", " << secs << " s";
}

void oracle_equivalence(Verdict& v) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> side(1, 6), zs(1, 4), ds(0, 2);
  double corr_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = side(rng), w = side(rng), z = zs(rng), d = ds(rng);
    const auto f = random_tensor<double>({h, w, z}, rng), b = random_tensor<double>({h, w, z}, rng);
    corr_err = std::max(corr_err, max_abs_diff(correlate(VarD(f), VarD(b), d).value(), naive_correlate(f, b, d)));
  }
  v.require(corr_err <= 1e-6, "correlate");

  double proto_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = side(rng), w = side(rng), z = zs(rng);
    const auto f = random_tensor<double>({h, w, z}, rng);
    const auto m = random_tensor<double>({h, w, 1}, rng, 0.05, 0.95);
    const auto p = compute_prototypes<double>({VarD(f)}, {VarD(m)}, 20.0);
    proto_err = std::max(proto_err, max_abs_diff(p.foreground.value(), masked_mean_oracle(f, m, false)));
    proto_err = std::max(proto_err, max_abs_diff(p.background.value(), masked_mean_oracle(f, m, true)));
  }
  v.require(proto_err <= 1e-6, "compute_prototypes");

  double loss_err = 0;
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = side(rng), w = side(rng);
    const auto m = random_soft(h, w, rng);
    Tensor<double> y({h, w, 1});
    for (auto& x : y.values()) x = coin(rng) ? 1.0 : 0.0;
    const auto target = one_hot(y);
    loss_err = std::max(loss_err, std::abs(dice_loss(VarD(m), target).value()[0] - dice_oracle(m, target, 1e-5)));
    loss_err = std::max(loss_err, std::abs(ce_loss(VarD(m), target).value()[0] - ce_oracle(m, target, 1e-7)));
  }
  v.require(loss_err <= 1e-6, "dice/ce");
  v.detail << " correlate " << corr_err << ", prototypes " << proto_err << ", losses " << loss_err;
}

void structural_invariants(Verdict& v, const RpNetModel& trained, const Dataset& ds) {
  std::mt19937_64 rng(77);

  double norm_err = 0;
  const RpNetModel fresh = init_model(ModelConfig{}, 3);
  for (const RpNetModel* model : {&fresh, &trained}) {
    for (int e = 0; e < 10; ++e) {
      const Episode ep = align_episode(sample_episode(ds, e % ds.num_classes, 1, rng));
      for (const auto& s : forward(*model, ep, 10).soft_masks) {
        for (std::size_t p = 0; p < s.size() / 2; ++p) {
          v.require(s[p * 2] > 0.0f && s[p * 2 + 1] > 0.0f, "positive probabilities");
          norm_err = std::max(norm_err, std::abs(static_cast<double>(s[p * 2]) + s[p * 2 + 1] - 1.0));
        }
      }
    }
  }
  v.require(norm_err <= 1e-6, "m_soft normalization");

  bool annihilated = true;
  for (int d = 0; d <= 5; ++d) {
    const auto cre = init_cre<double>(4, d, 11 + static_cast<std::uint64_t>(d));
    const VarD f(random_tensor<double>({6, 7, 4}, rng));
    v.require(correlate(f, f, d).dim(2) == (2 * d + 1) * (2 * d + 1), "channel count");
    v.require(cre.fuse_kernels.dim(2) == 4 + (2 * d + 1) * (2 * d + 1), "fuse input channels");
    for (double fill : {0.0, 1.0}) {
      const auto [ff, fb] = split_features(cre, f, VarD(Tensor<double>({6, 7, 1}, fill)));
      const Tensor<double> c = correlate(ff, fb, d).value();
      for (double x : c.values()) annihilated = annihilated && x == 0.0;
    }
  }
  v.require(annihilated, "C == 0 for constant masks");

  double scale_err = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_tensor<double>({5, 5, 6}, rng);
    const PrototypeSetT<double> p{VarD(random_tensor<double>({6}, rng)), VarD(random_tensor<double>({6}, rng)), 20.0};
    const auto base = cosine_head(VarD(f), p).value();
    Tensor<double> scaled = f;
    for (auto& x : scaled.values()) x *= 3.7;
    scale_err = std::max(scale_err, max_abs_diff(cosine_head(VarD(scaled), p).value(), base));
    Tensor<double> fg = p.foreground.value();
    for (auto& x : fg.values()) x *= 0.25;
    scale_err = std::max(scale_err, max_abs_diff(cosine_head(VarD(f), {p.background, VarD(fg), 20.0}).value(), base));
  }
  v.require(scale_err <= 1e-5, "cosine scale invariance");

  std::vector<std::size_t> counts;
  for (int t : {1, 2, 4, 10, 20}) {
    ModelConfig cfg;
    cfg.t_train = t;
    cfg.t_infer = t;
    counts.push_back(init_model(cfg, 1).parameter_count());
  }
  v.require(std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c == counts[0]; }),
            "parameter count depends on T");

  std::bernoulli_distribution coin(0.3);
  bool dsc_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    Mask a({8, 8, 1}), b({8, 8, 1});
    for (auto& x : a.values()) x = coin(rng) ? 1.0f : 0.0f;
    for (auto& x : b.values()) x = coin(rng) ? 1.0f : 0.0f;
    if (trial % 4 == 0) b = a;
    dsc_ok = dsc_ok && dsc(a, b) == dsc(b, a) && ((dsc(a, b) == 1.0) == (a == b)) && dsc(a, a) == 1.0;
  }
  v.require(dsc_ok, "dsc symmetry/identity");
  v.detail << " normalization " << norm_err << ", scale invariance " << scale_err << ", parameters " << counts[0];
}

struct Trained {
  RpNetModel model;
  double seconds = 0;
  bool reused = false;
};

Trained train_or_load(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc, const fs::path& path,
                      bool reuse) {
  if (reuse && fs::exists(path)) return {load_checkpoint(path).model, 0.0, true};
  const auto start = Clock::now();
  RpNetModel model = init_model(mc, tc.seed);
  const TrainLog log = train(model, ds, tc);
  const double secs = seconds_since(start);
  save_checkpoint(model, {tc.seed, tc.epochs}, path);
  log.write_csv(path.string() + ".train.csv", describe(tc));
  std::printf("  trained %s in %.0f s (final epoch L_seg %.4f)\n", path.filename().c_str(), secs,
              log.epochs.back().l_seg);
  std::fflush(stdout);
  return {std::move(model), secs, false};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  fs::path work = fs::temp_directory_path() / "protoseg_acceptance";
  bool reuse = false;
  int threads = 0;
  app.add_option("--work", work, "Directory for the corpus, checkpoints and reports");
  app.add_flag("--reuse", reuse, "Load checkpoints already present in --work instead of training");
  app.add_option("--threads", threads, "Evaluation workers (0: automatic)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  criterion(1, gradient_suite);
  criterion(2, oracle_equivalence);

  const Dataset ds = generate_synthetic({200, 64, 4, 1});
  const ModelConfig base_model;
  const TrainConfig base_train;

  std::optional<Trained> main_model;
  std::optional<EvalReport> main_report;
  double main_eval_seconds = 0;
  try {
    main_model = train_or_load(ds, base_model, base_train, work / "d5.ckpt", reuse);
    EvalOptions opt;
    opt.threads = threads;
    const auto start = Clock::now();
    main_report = evaluate(main_model->model, ds, opt);
    main_eval_seconds = seconds_since(start);
    main_report->write_csv(work / "d5.eval.csv");
  } catch (const std::exception& e) {
    std::printf("  default model failed: %s\n", e.what());
  }

  criterion(3, [&](Verdict& v) {
    v.require(main_model.has_value(), "no trained model");
    if (main_model) structural_invariants(v, main_model->model, ds);
  });

  criterion(4, [&](Verdict& v) {
    v.require(main_report.has_value(), "no evaluation");
    if (!main_report) return;
    const double gap = main_report->mean - main_report->baseline_mean;
    const double minutes = (main_model->seconds + main_eval_seconds) / 60.0;
    v.require(main_report->mean >= 0.80, "mean DSC < 0.80");
    v.require(gap >= 0.10, "gap to m0 baseline < 0.10");
    if (!main_model->reused) v.require(minutes < 30.0, "runtime >= 30 min");
    v.detail << " mean DSC " << main_report->mean << " +- " << main_report->std << ", m0 baseline "
             << main_report->baseline_mean << " (gap " << gap << "), train+eval " << minutes << " min";
  });

  criterion(5, [&](Verdict& v) {
    v.require(main_model.has_value(), "no trained model");
    if (!main_model) return;
    const auto curve = iteration_curve(main_model->model, ds, base_train.holdout_class, 10, 1, threads);
    write_curve_csv(curve, work / "d5.curve.csv");
    v.require(curve[9] >= curve[0] - 0.005, "recurrent curve(10) < curve(1) - 0.005");
    v.require(std::abs(curve[9] - curve[8]) <= 0.01, "recurrent |curve(10) - curve(9)| > 0.01");

    ModelConfig mc = base_model;
    mc.t_train = 1;
    TrainConfig tc = base_train;
    tc.t_train = 1;
    const Trained single = train_or_load(ds, mc, tc, work / "t1.ckpt", reuse);
    const auto flat = iteration_curve(single.model, ds, base_train.holdout_class, 10, 1, threads);
    write_curve_csv(flat, work / "t1.curve.csv");
    v.require(flat[9] <= flat[0] + 0.02, "T_train=1 curve(10) > curve(1) + 0.02");
    v.detail << " recurrent t1 " << curve[0] << " t9 " << curve[8] << " t10 " << curve[9] << "; T_train=1 t1 "
             << flat[0] << " t10 " << flat[9];
  });

  criterion(6, [&](Verdict& v) {
    v.require(main_report.has_value(), "no evaluation");
    if (!main_report) return;
    EvalOptions opt;
    opt.threads = threads > 1 ? 1 : 2;
    const EvalReport again = evaluate(main_model->model, ds, opt);
    v.require(again.repeat_means == main_report->repeat_means && again.mean == main_report->mean &&
                  again.std == main_report->std && again.baseline_repeat_means == main_report->baseline_repeat_means,
              "random-support evaluation not reproducible");
    v.require(main_report->repeats == 5 && main_report->repeat_means.size() == 5, "expected 5 repeats");
    v.require(std::isfinite(main_report->std) && main_report->std >= 0.0, "std");

    opt.threads = threads;
    opt.fixed_support_id = ds.samples[ds.indices_with_class(base_train.holdout_class).front()].sample_id;
    const EvalReport fixed = evaluate(main_model->model, ds, opt);
    fixed.write_csv(work / "d5.fixed.csv");
    v.require(fixed.std == 0.0, "fixed-support std != 0");
    v.detail << " random " << main_report->mean << " +- " << main_report->std << " over "
             << main_report->repeat_means.size() << " repeats; fixed support " << *opt.fixed_support_id << " "
             << fixed.mean << " +- " << fixed.std;
  });

  criterion(7, [&](Verdict& v) {
    v.require(main_report.has_value(), "no d=5 evaluation");
    if (!main_report) return;
    std::vector<std::pair<int, double>> means;
    for (int d : {0, 1, 3}) {
      ModelConfig mc = base_model;
      mc.radius = d;
      const Trained t = train_or_load(ds, mc, base_train, work / ("d" + std::to_string(d) + ".ckpt"), reuse);
      EvalOptions opt;
      opt.threads = threads;
      const EvalReport r = evaluate(t.model, ds, opt);
      r.write_csv(work / ("d" + std::to_string(d) + ".eval.csv"));
      means.emplace_back(d, r.mean);
    }
    means.emplace_back(5, main_report->mean);
    double lo = 1, hi = 0;
    for (const auto& [d, m] : means) {
      lo = std::min(lo, m);
      hi = std::max(hi, m);
      v.detail << " d=" << d << " " << m;
    }
    v.require(hi - lo <= 0.08, "spread > 0.08");
    v.detail << " (spread " << hi - lo << ")";
  });

  std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}

// protoseg command-line front end: gen, train, eval, infer, gradcheck.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "protoseg/checkpoint.hpp"
#include "protoseg/data.hpp"
#include "protoseg/errors.hpp"
#include "protoseg/gradient_suite.hpp"
#include "protoseg/metrics.hpp"
#include "protoseg/model.hpp"
#include "protoseg/ops.hpp"
#include "protoseg/train.hpp"

namespace fs = std::filesystem;
using namespace protoseg;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitGradcheck = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenArgs {
  fs::path out;
  int num = 200;
  int classes = 4;
  int size = 64;
  std::uint64_t seed = 1;
  bool pgm = false;
};

struct TrainArgs {
  fs::path data;
  fs::path config;
  fs::path out;
  int holdout = 2;
  bool no_align = false;
  bool keep_holdout = false;
  int t_train = 4;
  int radius = 5;
  int z = 32;
  int epochs = 50;
  int episodes = 200;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  bool quiet = false;
};

struct EvalArgs {
  fs::path data;
  fs::path model;
  fs::path report;
  fs::path curve;
  int holdout = 2;
  int repeats = 5;
  int shots = 1;
  std::string fixed_support;
  int t_infer = 10;
  int radius = 5;
  std::uint64_t seed = 1;
};

struct InferArgs {
  fs::path model;
  fs::path data;
  std::string out;
  std::string support;
  std::string query;
  int class_id = 2;
  int t_infer = 10;
  bool emit_iterations = false;
};

struct GradArgs {
  std::string op = "all";
  std::uint64_t seed = 1;
};

bool given(const CLI::App* app, const std::string& flag) { return app->count(flag) > 0; }

int run_gen(const GenArgs& a) {
  if (a.classes < 2) throw UsageError("need ≥ 2 classes");
  if (a.num < 1) throw UsageError("--num must be >= 1");
  if (a.size < 16 || a.size % 4 != 0) throw UsageError("--size must be a multiple of 4 and >= 16");
  GeneratorConfig cfg{a.num, a.size, a.classes, a.seed};
  const Dataset ds = generate_synthetic(cfg);
  save_dataset(ds, a.out, a.pgm);

  std::map<int, double> area;
  std::map<int, int> count;
  for (const auto& s : ds.samples) {
    for (const auto& [c, m] : s.masks) {
      double sum = 0;
      for (float v : m.values()) sum += v;
      area[c] += sum;
      ++count[c];
    }
  }
  std::printf("samples: %zu (%dx%d, %d classes) -> %s\n", ds.samples.size(), ds.height, ds.width, ds.num_classes,
              a.out.string().c_str());
  for (const auto& [c, total] : area) std::printf("class %d: mean area %.1f px\n", c, total / count[c]);
  return 0;
}

int run_train(const TrainArgs& a, const CLI::App* app) {
  ModelConfig mc;
  TrainConfig tc;
  if (!a.config.empty()) apply_config_file(a.config, mc, tc);
  if (given(app, "--holdout")) tc.holdout_class = a.holdout;
  if (given(app, "--no-align-loss")) tc.align_loss = false;
  if (given(app, "--keep-holdout-pixels")) tc.remove_holdout = false;
  if (given(app, "--t-train")) tc.t_train = a.t_train;
  if (given(app, "--radius")) mc.radius = a.radius;
  if (given(app, "--z")) mc.z = a.z;
  if (given(app, "--epochs")) tc.epochs = a.epochs;
  if (given(app, "--episodes")) tc.episodes_per_epoch = a.episodes;
  if (given(app, "--lr")) tc.lr = a.lr;
  if (given(app, "--seed")) tc.seed = a.seed;
  mc.t_train = tc.t_train;
  if (mc.radius < 0) throw UsageError("--radius must be >= 0");
  try {
    validate(tc);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const Dataset ds = load_dataset(a.data);
  if (tc.holdout_class < 0 || tc.holdout_class >= ds.num_classes) {
    throw UsageError("--holdout must name one of the " + std::to_string(ds.num_classes) + " classes");
  }
  RpNetModel model = init_model(mc, tc.seed);
  std::printf("training: %zu parameters, holdout class %d, %d epochs x %d episodes\n", model.parameter_count(),
              tc.holdout_class, tc.epochs, tc.episodes_per_epoch);
  const TrainLog log = train(model, ds, tc, [&](const EpochStats& s) {
    if (a.quiet) return;
    std::printf("epoch %3d lr %.2e seg %.4f (dice %.4f ce %.4f) align %.4f |g| %.3e %.1fs\n", s.epoch, s.lr, s.l_seg,
                s.l_dice, s.l_ce, s.l_align, s.grad_norm, s.seconds);
    std::fflush(stdout);
  });
  save_checkpoint(model, {tc.seed, tc.epochs}, a.out);

  auto comments = describe(mc);
  for (auto& line : describe(tc)) comments.push_back(std::move(line));
  log.write_csv(a.out.string() + ".train.csv", comments);
  std::printf("wrote %s\n", a.out.string().c_str());
  return 0;
}

int run_eval(const EvalArgs& a, const CLI::App* app) {
  const Dataset ds = load_dataset(a.data);
  const LoadedCheckpoint ck = load_checkpoint(a.model);
  if (given(app, "--radius") && a.radius != ck.model.config.radius) {
    throw InsufficientDataError("checkpoint has radius " + std::to_string(ck.model.config.radius) +
                                ", --radius asks for " + std::to_string(a.radius));
  }
  EvalOptions opts;
  opts.holdout_class = a.holdout;
  opts.repeats = a.repeats;
  opts.shots = a.shots;
  opts.t_infer = given(app, "--t-infer") ? a.t_infer : ck.model.config.t_infer;
  opts.seed = a.seed;
  if (!a.fixed_support.empty()) {
    ds.find(a.fixed_support);
    opts.fixed_support_id = a.fixed_support;
  }
  if (opts.repeats < 1) throw UsageError("--repeats must be >= 1");
  if (opts.t_infer < 1) throw UsageError("--t-infer must be >= 1");

  const EvalReport report = evaluate(ck.model, ds, opts);
  auto comments = describe(ck.model.config);
  comments.push_back("model=" + a.model.string());
  comments.push_back("holdout=" + std::to_string(a.holdout) + " shots=" + std::to_string(a.shots));
  report.write_csv(a.report, comments);
  std::printf("class %d: mean DSC %.4f +- %.4f over %d repeats (m0 baseline %.4f)\n", report.class_id, report.mean,
              report.std, report.repeats, report.baseline_mean);
  if (!a.curve.empty()) {
    const auto curve = iteration_curve(ck.model, ds, a.holdout, opts.t_infer, a.seed, opts.threads);
    write_curve_csv(curve, a.curve, comments);
    for (std::size_t t = 0; t < curve.size(); ++t) std::printf("t=%zu %.4f\n", t + 1, curve[t]);
  }
  return 0;
}

Tensor<float> upsample_fg(const Tensor<float>& soft, int h, int w) {
  NoGradGuard no_grad;
  return bilinear_resize(slice_channel(Var<float>(soft, false), 1), h, w).value();
}

int run_infer(const InferArgs& a, const CLI::App* app) {
  const Dataset ds = load_dataset(a.data);
  const LoadedCheckpoint ck = load_checkpoint(a.model);
  const ImageSample& sup = ds.find(a.support);
  const ImageSample& qry = ds.find(a.query);
  const auto mask_it = sup.masks.find(a.class_id);
  if (mask_it == sup.masks.end()) {
    throw InsufficientDataError("support " + a.support + " has no mask for class " + std::to_string(a.class_id));
  }
  const int t = given(app, "--t-infer") ? a.t_infer : ck.model.config.t_infer;
  if (t < 1) throw UsageError("--t-infer must be >= 1");

  const Prediction p = predict(ck.model, {{sup.sample_id, sup.image, mask_it->second}}, qry.image, t);
  write_pgm(p.mask, a.out + ".final.pgm");
  const int h = qry.image.dim(0), w = qry.image.dim(1);
  std::vector<Mask> iters;
  for (const auto& soft : p.trace.soft_masks) iters.push_back(binarize(upsample_fg(soft, h, w)));
  if (a.emit_iterations) {
    for (std::size_t i = 0; i < iters.size(); ++i) write_pgm(iters[i], a.out + ".iter" + std::to_string(i + 1) + ".pgm");
  }

  const auto gt = qry.masks.find(a.class_id);
  if (gt != qry.masks.end()) {
    std::ofstream csv(a.out + ".dsc.csv");
    if (!csv) throw IoError("cannot write " + a.out + ".dsc.csv");
    for (const auto& line : describe(ck.model.config)) csv << "# " << line << "\n";
    csv << "# support=" << a.support << " query=" << a.query << " class=" << a.class_id << "\n";
    csv.precision(9);
    csv << "t,dsc\n";
    csv << "0," << dsc(binarize(p.trace.m0), gt->second) << "\n";
    for (std::size_t i = 0; i < iters.size(); ++i) csv << i + 1 << ',' << dsc(iters[i], gt->second) << "\n";
    std::printf("DSC m0 %.4f -> t=%d %.4f\n", dsc(binarize(p.trace.m0), gt->second), t, dsc(p.mask, gt->second));
  }
  return 0;
}

int run_gradcheck(const GradArgs& a) {
  const auto& ops = gradient_suite_ops();
  if (a.op != "all" && std::find(ops.begin(), ops.end(), a.op) == ops.end()) {
    throw UsageError("unknown op '" + a.op + "'");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto reports = run_gradient_suite(a.op, a.seed);
  std::vector<std::string> failed;
  for (const auto& r : reports) {
    std::printf("%-8s max rel error %.3e  (%zu/%zu one-sided)  %s\n", r.op_name.c_str(), r.max_rel_error,
                r.one_sided_probes, r.total_probes, r.passed ? "ok" : "FAIL");
    if (!r.passed) failed.push_back(r.op_name);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu ops in %.1fs\n", reports.size(), secs);
  if (!failed.empty()) {
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
    std::fprintf(stderr, "gradcheck failed: %s\n", names.c_str());
    return kExitGradcheck;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot segmentation with recurrent prototype refinement"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate the synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--num", gen.num, "Number of images");
  g->add_option("--classes", gen.classes, "Number of classes");
  g->add_option("--size", gen.size, "Image side length");
  g->add_option("--seed", gen.seed, "Seed");
  g->add_flag("--pgm", gen.pgm, "Also write viewable PGM copies");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Episodic training");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--config", tr.config, "JSON config file");
  t->add_option("--holdout", tr.holdout, "Held-out class");
  t->add_flag("--no-align-loss", tr.no_align, "Disable the alignment loss");
  t->add_flag("--keep-holdout-pixels", tr.keep_holdout,
              "Leave holdout-class pixels in the training images (only their labels are dropped)");
  t->add_option("--t-train", tr.t_train, "Refinement iterations during training");
  t->add_option("--radius", tr.radius, "Correlation radius d");
  t->add_option("--z", tr.z, "Feature channels");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--episodes", tr.episodes, "Episodes per epoch");
  t->add_option("--lr", tr.lr, "Initial learning rate");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Leave-one-class-out evaluation");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--model", ev.model, "Checkpoint path")->required();
  e->add_option("--report", ev.report, "Report CSV")->required();
  e->add_option("--holdout", ev.holdout, "Held-out class");
  e->add_option("--repeats", ev.repeats, "Repeats");
  e->add_option("--shots", ev.shots, "Support images per episode");
  e->add_option("--fixed-support", ev.fixed_support, "Use this sample as the only support");
  e->add_option("--t-infer", ev.t_infer, "Refinement iterations");
  e->add_option("--radius", ev.radius, "Expected correlation radius of the checkpoint");
  e->add_option("--curve", ev.curve, "Per-iteration DSC CSV");
  e->add_option("--seed", ev.seed, "Seed");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Segment one query from one support");
  i->add_option("--model", in.model, "Checkpoint path")->required();
  i->add_option("--data", in.data, "Dataset directory")->required();
  i->add_option("--support", in.support, "Support sample id")->required();
  i->add_option("--query", in.query, "Query sample id")->required();
  i->add_option("--out", in.out, "Output prefix")->required();
  i->add_option("--class", in.class_id, "Class to segment");
  i->add_option("--t-infer", in.t_infer, "Refinement iterations");
  i->add_flag("--emit-iterations", in.emit_iterations, "Write one mask per iteration");

  GradArgs gr;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c->add_option("--op", gr.op, "all or one op name");
  c->add_option("--seed", gr.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr, t);
    if (*e) return run_eval(ev, e);
    if (*i) return run_infer(in, i);
    if (*c) return run_gradcheck(gr);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

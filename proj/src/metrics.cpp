#include "protoseg/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include "protoseg/ops.hpp"

namespace protoseg {

double dsc(const Mask& prediction, const Mask& truth) {
  expect_shape(prediction.shape(), truth.shape(), "dsc");
  std::size_t inter = 0, pm = 0, gm = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = prediction[i] != 0.0f;
    const bool g = truth[i] != 0.0f;
    pm += p;
    gm += g;
    inter += p && g;
  }
  if (pm + gm == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(pm + gm);
}

int default_threads() {
  if (const char* env = std::getenv("PROTOSEG_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is handled
// by exactly one worker, so results written by index are deterministic.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const int workers = std::max(1, std::min<int>(threads > 0 ? threads : default_threads(), static_cast<int>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < n; i = next++) fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

struct Job {
  std::size_t query;
  std::vector<std::size_t> supports;
};

std::vector<std::size_t> query_indices(const Dataset& ds, int class_id, const std::optional<std::string>& fixed) {
  auto q = ds.indices_with_class(class_id);
  if (fixed) std::erase_if(q, [&](std::size_t i) { return ds.samples[i].sample_id == *fixed; });
  return q;
}

}  // namespace

Predictor model_predictor(const RpNetModel& model, int t_infer) {
  return [&model, t_infer](const std::vector<SupportItem>& support, const Image& query) {
    return predict(model, support, query, t_infer);
  };
}

EvalReport evaluate(const Predictor& predictor, const Dataset& dataset, const EvalOptions& options) {
  if (options.repeats < 1) throw ShapeError("evaluate: repeats must be >= 1");
  const auto candidates = dataset.indices_with_class(options.holdout_class);
  if (candidates.size() < static_cast<std::size_t>(options.shots) + 1) {
    throw InsufficientDataError("evaluate: class " + std::to_string(options.holdout_class) + " has " +
                                std::to_string(candidates.size()) + " samples, need at least " +
                                std::to_string(options.shots + 1));
  }
  const auto queries = query_indices(dataset, options.holdout_class, options.fixed_support_id);

  std::mt19937_64 rng(options.seed);
  std::vector<Job> jobs;
  for (int r = 0; r < options.repeats; ++r) {
    for (std::size_t q : queries) {
      jobs.push_back({q, sample_support_indices(dataset, options.holdout_class, options.shots, q, rng,
                                                options.fixed_support_id)});
    }
  }

  std::vector<double> scores(jobs.size()), baseline(jobs.size());
  std::vector<char> collapsed(jobs.size(), 0);
  parallel_for(jobs.size(), options.threads, [&](std::size_t i) {
    const Episode ep = make_episode(dataset, options.holdout_class, jobs[i].query, jobs[i].supports);
    const Prediction p = predictor(ep.support, ep.query_image);
    scores[i] = dsc(p.mask, *ep.query_mask);
    baseline[i] = dsc(binarize(p.trace.m0), *ep.query_mask);
    collapsed[i] = p.trace.alignment_collapsed ? 1 : 0;
  });

  EvalReport report;
  report.class_id = options.holdout_class;
  report.repeats = options.repeats;
  report.fixed_support = options.fixed_support_id.has_value();
  report.t_infer = options.t_infer;
  report.seed = options.seed;
  const std::size_t per_repeat = queries.size();
  for (int r = 0; r < options.repeats; ++r) {
    double s = 0, b = 0;
    for (std::size_t k = 0; k < per_repeat; ++k) {
      s += scores[r * per_repeat + k];
      b += baseline[r * per_repeat + k];
    }
    report.repeat_means.push_back(s / static_cast<double>(per_repeat));
    report.baseline_repeat_means.push_back(b / static_cast<double>(per_repeat));
  }
  std::tie(report.mean, report.std) = mean_std(report.repeat_means);
  std::tie(report.baseline_mean, report.baseline_std) = mean_std(report.baseline_repeat_means);
  for (char c : collapsed) report.collapsed_alignments += c;
  return report;
}

EvalReport evaluate(const RpNetModel& model, const Dataset& dataset, const EvalOptions& options) {
  return evaluate(model_predictor(model, options.t_infer), dataset, options);
}

void EvalReport::write_csv(const std::filesystem::path& path, const std::vector<std::string>& comments) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& c : comments) out << "# " << c << "\n";
  out << "# repeats=" << repeats << " fixed_support=" << (fixed_support ? "true" : "false") << " t_infer=" << t_infer
      << " seed=" << seed << "\n";
  out.precision(9);
  out << "class,repeat,mean_dsc\n";
  for (std::size_t r = 0; r < repeat_means.size(); ++r) out << class_id << ',' << r << ',' << repeat_means[r] << "\n";
  out << class_id << ",mean," << mean << "\n";
  out << class_id << ",std," << std << "\n";
  out << class_id << ",baseline_mean," << baseline_mean << "\n";
  out << class_id << ",baseline_std," << baseline_std << "\n";
}

std::vector<double> iteration_curve(const RpNetModel& model, const Dataset& dataset, int holdout_class, int t_max,
                                    std::uint64_t seed, int threads) {
  if (t_max < 1) throw ShapeError("iteration_curve: t_max must be >= 1");
  const auto queries = dataset.indices_with_class(holdout_class);
  if (queries.size() < 2) throw InsufficientDataError("iteration_curve: need at least 2 samples of the class");
  std::mt19937_64 rng(seed);
  std::vector<Job> jobs;
  for (std::size_t q : queries) jobs.push_back({q, sample_support_indices(dataset, holdout_class, 1, q, rng)});

  std::vector<std::vector<double>> per_job(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const Episode ep = make_episode(dataset, holdout_class, jobs[i].query, jobs[i].supports);
    const Prediction p = predict(model, ep.support, ep.query_image, t_max);
    NoGradGuard no_grad;
    for (const auto& soft : p.trace.soft_masks) {
      Var<float> fg = slice_channel(Var<float>(soft, false), 1);
      Tensor<float> up = bilinear_resize(fg, ep.query_image.dim(0), ep.query_image.dim(1)).value();
      per_job[i].push_back(dsc(binarize(up), *ep.query_mask));
    }
  });

  std::vector<double> curve(static_cast<std::size_t>(t_max), 0.0);
  for (const auto& scores : per_job) {
    for (int t = 0; t < t_max; ++t) curve[static_cast<std::size_t>(t)] += scores[static_cast<std::size_t>(t)];
  }
  for (auto& v : curve) v /= static_cast<double>(jobs.size());
  return curve;
}

void write_curve_csv(const std::vector<double>& curve, const std::filesystem::path& path,
                     const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& c : comments) out << "# " << c << "\n";
  out.precision(9);
  out << "t,mean_dsc\n";
  for (std::size_t t = 0; t < curve.size(); ++t) out << t + 1 << ',' << curve[t] << "\n";
}

}  // namespace protoseg

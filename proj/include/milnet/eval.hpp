#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "milnet/data.hpp"
#include "milnet/network.hpp"
#include "milnet/serialize.hpp"
#include "milnet/training.hpp"

namespace milnet {

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw ShapeError("accuracy: no predictions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Runs f(0..n-1) on up to `threads` workers (0 = hardware concurrency).
/// The first exception is rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct FoldResult {
  int repeat = 0;
  int fold = 0;
  std::size_t test_bags = 0;
  double accuracy = 0.0;
  bool failed = false;
  std::string error;
  double train_seconds_per_bag = 0.0;
  double predict_seconds_per_bag = 0.0;
};

struct CvReport {
  std::string dataset;
  NetworkSpec spec;
  TrainConfig config;
  FoldPlan plan;
  std::vector<FoldResult> folds;  // repeat-major
  double mean_accuracy = 0.0;     // over successful folds
  double std_accuracy = 0.0;      // sample std of per-repeat means
  std::size_t failed_folds = 0;
  double train_seconds_per_bag = 0.0;
  double predict_seconds_per_bag = 0.0;
  std::vector<std::string> warnings;
};

struct CvOptions {
  unsigned threads = 0;
  bool standardize = true;
};

inline std::uint64_t fold_seed(std::uint64_t seed, int repeat, int fold) {
  return derive_seed(seed, static_cast<std::uint64_t>(repeat), static_cast<std::uint64_t>(fold));
}

/// Fits the scaler on the training folds only, then trains a fresh network
/// whose init and training streams both come from fold_seed.
inline Model train_fold(const BagDataset& ds, const NetworkSpec& spec, const TrainConfig& cfg, const FoldPlan& plan,
                        int repeat, int fold, bool standardize, TrainTrace* trace = nullptr) {
  const BagDataset raw_train = ds.subset(plan.train_indices(repeat, fold));
  std::optional<FeatureScaler> scaler;
  if (standardize) scaler = fit_scaler(raw_train);
  const BagDataset train_set = scaler ? scaler->apply(raw_train) : raw_train;

  NetworkSpec s = spec;
  s.seed = fold_seed(cfg.seed, repeat, fold);
  TrainConfig c = cfg;
  c.seed = s.seed;
  c.track_accuracy = false;
  Model model{Network::build(s, ds.dim()), scaler};
  TrainTrace t = train(model.network, train_set, c);
  if (trace) *trace = std::move(t);
  return model;
}

inline CvReport summarize(CvReport report) {
  report.failed_folds = 0;
  double acc_sum = 0.0, train_sum = 0.0, predict_sum = 0.0;
  std::size_t ok = 0;
  std::vector<double> repeat_sum(static_cast<std::size_t>(report.plan.repeats), 0.0);
  std::vector<int> repeat_n(static_cast<std::size_t>(report.plan.repeats), 0);
  for (const auto& f : report.folds) {
    if (f.failed) {
      ++report.failed_folds;
      continue;
    }
    ++ok;
    acc_sum += f.accuracy;
    train_sum += f.train_seconds_per_bag;
    predict_sum += f.predict_seconds_per_bag;
    repeat_sum[static_cast<std::size_t>(f.repeat)] += f.accuracy;
    ++repeat_n[static_cast<std::size_t>(f.repeat)];
  }
  if (ok == 0) {
    report.mean_accuracy = std::nan("");
    report.std_accuracy = std::nan("");
    report.warnings.push_back("every fold failed");
    return report;
  }
  report.mean_accuracy = acc_sum / static_cast<double>(ok);
  report.train_seconds_per_bag = train_sum / static_cast<double>(ok);
  report.predict_seconds_per_bag = predict_sum / static_cast<double>(ok);

  std::vector<double> means;
  for (std::size_t r = 0; r < repeat_sum.size(); ++r) {
    if (repeat_n[r] > 0) means.push_back(repeat_sum[r] / repeat_n[r]);
  }
  if (means.size() > 1) {
    double m = 0.0;
    for (double v : means) m += v;
    m /= static_cast<double>(means.size());
    double ss = 0.0;
    for (double v : means) ss += (v - m) * (v - m);
    report.std_accuracy = std::sqrt(ss / static_cast<double>(means.size() - 1));
  } else {
    report.std_accuracy = 0.0;
  }
  if (report.failed_folds > 0) {
    report.warnings.push_back(std::to_string(report.failed_folds) + " fold(s) failed and were excluded from the mean");
  }
  return report;
}

/// Repeated k-fold CV. A NumericalError inside a fold marks it failed; any
/// other error propagates. Results do not depend on the thread count.
inline CvReport run_cv(const BagDataset& ds, const NetworkSpec& spec, const TrainConfig& cfg, const FoldPlan& plan,
                       const CvOptions& opts = {}) {
  spec.validate();
  cfg.validate();
  if (plan.assignments.size() != static_cast<std::size_t>(plan.repeats) ||
      (!plan.assignments.empty() && plan.assignments.front().size() != ds.size())) {
    throw ShapeError("run_cv: fold plan does not match dataset");
  }
  CvReport report{ds.name(), spec, cfg, plan, {}, 0, 0, 0, 0, 0, {}};
  const std::size_t n = static_cast<std::size_t>(plan.repeats) * static_cast<std::size_t>(plan.folds);
  report.folds.resize(n);

  parallel_for(n, opts.threads, [&](std::size_t k) {
    FoldResult& res = report.folds[k];
    res.repeat = static_cast<int>(k / static_cast<std::size_t>(plan.folds));
    res.fold = static_cast<int>(k % static_cast<std::size_t>(plan.folds));
    const auto test_idx = plan.test_indices(res.repeat, res.fold);
    res.test_bags = test_idx.size();
    try {
      TrainTrace trace;
      const Model model = train_fold(ds, spec, cfg, plan, res.repeat, res.fold, opts.standardize, &trace);
      double t = 0.0;
      for (double s : trace.seconds_per_bag) t += s;
      res.train_seconds_per_bag = t / static_cast<double>(trace.epochs());

      std::vector<int> pred, labels;
      const auto start = std::chrono::steady_clock::now();
      for (auto i : test_idx) pred.push_back(predict_label(model.score(ds[i].instances)));
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      for (auto i : test_idx) labels.push_back(ds[i].label);
      res.predict_seconds_per_bag = elapsed.count() / static_cast<double>(test_idx.size());
      res.accuracy = accuracy(pred, labels);
    } catch (const NumericalError& e) {
      res.failed = true;
      res.error = e.what();
    }
  });
  return summarize(std::move(report));
}

// ---------------------------------------------------------------------------
// Synthetic planted-signal data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t positives = 10;
  std::size_t negatives = 10;
  int min_instances = 2;
  int max_instances = 8;
  Eigen::Index dim = 20;
  double magnitude = 5.0;
  double noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (positives + negatives == 0) throw ConfigError("synthetic: no bags requested");
    if (min_instances < 1 || max_instances < min_instances) throw ConfigError("synthetic: bad instance range");
    if (dim < 1) throw ConfigError("synthetic: dim must be >= 1");
    if (!(noise >= 0.0) || !std::isfinite(magnitude)) throw ConfigError("synthetic: bad noise or magnitude");
  }
};

struct SyntheticData {
  BagDataset dataset;
  std::vector<std::vector<bool>> planted;  // per bag, per instance
};

/// Instances are N(0, noise^2) in every coordinate. Each positive bag gets
/// between 1 and max(1, m/2) planted instances whose coordinate 0 is
/// magnitude + noise*z with z conditioned on z > -2.
inline SyntheticData generate_synthetic_with_truth(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Bag> bags;
  std::vector<std::vector<bool>> planted;
  const std::size_t total = spec.positives + spec.negatives;
  for (std::size_t b = 0; b < total; ++b) {
    const int label = b < spec.positives ? 1 : 0;
    const auto span = static_cast<std::uint64_t>(spec.max_instances - spec.min_instances + 1);
    const auto m = static_cast<Eigen::Index>(spec.min_instances + static_cast<int>(uniform_index(rng, span)));
    Matrix x(m, spec.dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = spec.noise * standard_normal(rng);
    std::vector<bool> mark(static_cast<std::size_t>(m), false);
    if (label == 1) {
      const auto max_planted = static_cast<std::uint64_t>(std::max<Eigen::Index>(1, m / 2));
      const auto count = 1 + uniform_index(rng, max_planted);
      std::vector<std::size_t> order(static_cast<std::size_t>(m));
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle(order, rng);
      for (std::uint64_t k = 0; k < count; ++k) {
        double z;
        do {
          z = standard_normal(rng);
        } while (!(z > -2.0));
        x(static_cast<Eigen::Index>(order[k]), 0) = spec.magnitude + spec.noise * z;
        mark[order[k]] = true;
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "%s_%03zu", label ? "pos" : "neg", label ? b : b - spec.positives);
    bags.push_back({id, label, std::move(x)});
    planted.push_back(std::move(mark));
  }
  return {BagDataset("synthetic", std::move(bags)), std::move(planted)};
}

inline BagDataset generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_with_truth(spec).dataset; }

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { Pooling, DsOnOff, RcOnOff, Widths, Depth };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Pooling: return "pooling";
    case SweepAxis::DsOnOff: return "ds_on_off";
    case SweepAxis::RcOnOff: return "rc_on_off";
    case SweepAxis::Widths: return "widths";
    case SweepAxis::Depth: return "depth";
  }
  return "?";
}

inline std::optional<SweepAxis> parse_sweep_axis(std::string_view s) {
  for (auto a : {SweepAxis::Pooling, SweepAxis::DsOnOff, SweepAxis::RcOnOff, SweepAxis::Widths, SweepAxis::Depth}) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}

/// Depth/width grid used for the non-residual variants.
inline const std::vector<std::vector<int>>& structure_grid() {
  static const std::vector<std::vector<int>> grid = {
      {256, 256, 256, 1},      {256, 256, 128, 1},           {256, 128, 64, 1},
      {128, 128, 128, 1},      {128, 128, 64, 1},            {64, 64, 64, 1},
      {256, 256, 128, 128, 64, 1}, {256, 256, 256, 256, 256, 1}};
  return grid;
}

/// The network specs a sweep evaluates, in report order.
inline std::vector<NetworkSpec> sweep_specs(const NetworkSpec& base, SweepAxis axis) {
  base.validate();
  std::vector<NetworkSpec> out;
  auto with = [&](auto&& edit) {
    NetworkSpec s = base;
    edit(s);
    s.validate();
    out.push_back(std::move(s));
  };
  const bool equal_hidden = [&] {
    for (std::size_t i = 1; i < base.hidden_layers(); ++i)
      if (base.widths[i] != base.widths[0]) return false;
    return true;
  }();

  switch (axis) {
    case SweepAxis::Pooling:
      for (auto p : {PoolMethod::Max, PoolMethod::Mean, PoolMethod::LSE}) with([&](NetworkSpec& s) { s.pooling.method = p; });
      break;
    case SweepAxis::DsOnOff:
      if (base.variant != Variant::MINet && base.variant != Variant::MINetDS) {
        throw ConfigError("ds_on_off sweep needs variant MI_net or MI_net_DS");
      }
      with([](NetworkSpec& s) { s.variant = Variant::MINetDS; });
      with([](NetworkSpec& s) {
        s.variant = Variant::MINet;
        s.ds_weights.clear();
      });
      break;
    case SweepAxis::RcOnOff:
      if (base.variant != Variant::MINet && base.variant != Variant::MINetRC) {
        throw ConfigError("rc_on_off sweep needs variant MI_net or MI_net_RC");
      }
      if (!equal_hidden) throw ConfigError("rc_on_off sweep needs equal hidden widths");
      with([](NetworkSpec& s) { s.variant = Variant::MINetRC; });
      with([](NetworkSpec& s) { s.variant = Variant::MINet; });
      break;
    case SweepAxis::Widths:
    case SweepAxis::Depth:
      if (base.variant == Variant::MINetRC) {
        if (axis == SweepAxis::Depth) {
          for (std::size_t hidden = 2; hidden <= 6; ++hidden) {
            with([&](NetworkSpec& s) {
              s.widths.assign(hidden, 128);
              s.widths.push_back(1);
            });
          }
        } else {
          for (int w : {16, 32, 64, 128, 256}) with([&](NetworkSpec& s) { s.widths = {w, w, w, 1}; });
        }
      } else {
        for (const auto& w : structure_grid()) {
          with([&](NetworkSpec& s) {
            s.widths = w;
            s.ds_weights.clear();
          });
        }
      }
      break;
  }
  return out;
}

/// One CvReport per axis value, all sharing `plan`.
inline std::vector<CvReport> sweep(const BagDataset& ds, const NetworkSpec& base, const TrainConfig& cfg,
                                   const FoldPlan& plan, SweepAxis axis, const CvOptions& opts = {}) {
  std::vector<CvReport> reports;
  for (const auto& spec : sweep_specs(base, axis)) {
    reports.push_back(run_cv(ds, spec, cfg, plan, opts));
    if (!(reports.back().plan == reports.front().plan)) throw ShapeError("sweep: fold plans diverged");
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

enum class TableFormat { Tsv, Markdown };

inline std::optional<TableFormat> parse_table_format(std::string_view s) {
  if (s == "tsv") return TableFormat::Tsv;
  if (s == "markdown" || s == "md") return TableFormat::Markdown;
  return std::nullopt;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string widths_string(const std::vector<int>& w) {
  std::string s = "(";
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s + ")";
}

inline std::string render(const std::vector<std::vector<std::string>>& rows, TableFormat fmt) {
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (fmt == TableFormat::Tsv) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) out << (c ? "\t" : "") << rows[r][c];
      out << '\n';
    } else {
      out << '|';
      for (const auto& cell : rows[r]) out << ' ' << cell << " |";
      out << '\n';
      if (r == 0) {
        out << '|';
        for (std::size_t c = 0; c < rows[r].size(); ++c) out << " --- |";
        out << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace detail

/// One row per report. Timing columns (ms per bag) only when `timings`.
inline std::string emit_table(const std::vector<CvReport>& reports, TableFormat fmt, bool timings = true) {
  if (reports.empty()) throw ShapeError("emit_table: no reports");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"dataset", "variant", "widths", "pooling", "accuracy", "std", "failed"};
  if (timings) {
    header.push_back("train_ms_per_bag");
    header.push_back("predict_ms_per_bag");
  }
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row = {r.dataset,
                                    std::string(to_string(r.spec.variant)),
                                    detail::widths_string(r.spec.widths),
                                    std::string(to_string(r.spec.pooling.method)),
                                    detail::fixed(r.mean_accuracy, 4),
                                    detail::fixed(r.std_accuracy, 4),
                                    std::to_string(r.failed_folds)};
    if (timings) {
      row.push_back(detail::fixed(r.train_seconds_per_bag * 1e3, 4));
      row.push_back(detail::fixed(r.predict_seconds_per_bag * 1e3, 4));
    }
    rows.push_back(std::move(row));
  }
  return detail::render(rows, fmt);
}

/// One row per (repeat, fold) plus a summary row.
inline std::string emit_fold_table(const CvReport& report, TableFormat fmt, bool timings = true) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"repeat", "fold", "test_bags", "accuracy", "status"};
  if (timings) {
    header.push_back("train_ms_per_bag");
    header.push_back("predict_ms_per_bag");
  }
  rows.push_back(header);
  for (const auto& f : report.folds) {
    std::vector<std::string> row = {std::to_string(f.repeat), std::to_string(f.fold), std::to_string(f.test_bags),
                                    f.failed ? "nan" : detail::fixed(f.accuracy, 4), f.failed ? "failed" : "ok"};
    if (timings) {
      row.push_back(detail::fixed(f.train_seconds_per_bag * 1e3, 4));
      row.push_back(detail::fixed(f.predict_seconds_per_bag * 1e3, 4));
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> summary = {"mean", "std=" + detail::fixed(report.std_accuracy, 4),
                                      std::to_string(report.plan.assignments.empty()
                                                         ? 0
                                                         : report.plan.assignments.front().size()),
                                      detail::fixed(report.mean_accuracy, 4),
                                      "failed=" + std::to_string(report.failed_folds)};
  if (timings) {
    summary.push_back(detail::fixed(report.train_seconds_per_bag * 1e3, 4));
    summary.push_back(detail::fixed(report.predict_seconds_per_bag * 1e3, 4));
  }
  rows.push_back(std::move(summary));
  return detail::render(rows, fmt);
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.learning_rate}, {"momentum", c.momentum}, {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},    {"seed", c.seed},         {"shuffle", c.shuffle_each_epoch}};
}

/// Full machine-readable report. Accuracies are stored at full precision.
inline nlohmann::json report_to_json(const CvReport& r, bool timings = true) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json j = {{"repeat", f.repeat}, {"fold", f.fold}, {"test_bags", f.test_bags}, {"failed", f.failed}};
    if (f.failed) {
      j["error"] = f.error;
    } else {
      j["accuracy"] = f.accuracy;
    }
    if (timings) {
      j["train_seconds_per_bag"] = f.train_seconds_per_bag;
      j["predict_seconds_per_bag"] = f.predict_seconds_per_bag;
    }
    folds.push_back(std::move(j));
  }
  nlohmann::json out = {{"dataset", r.dataset},
                        {"spec", spec_to_json(r.spec)},
                        {"train", train_config_to_json(r.config)},
                        {"repeats", r.plan.repeats},
                        {"folds_per_repeat", r.plan.folds},
                        {"plan_seed", r.plan.seed},
                        {"folds", folds},
                        {"mean_accuracy", std::isnan(r.mean_accuracy) ? nlohmann::json() : nlohmann::json(r.mean_accuracy)},
                        {"std_accuracy", std::isnan(r.std_accuracy) ? nlohmann::json() : nlohmann::json(r.std_accuracy)},
                        {"failed_folds", r.failed_folds},
                        {"warnings", r.warnings}};
  if (timings) {
    out["train_seconds_per_bag"] = r.train_seconds_per_bag;
    out["predict_seconds_per_bag"] = r.predict_seconds_per_bag;
  }
  return out;
}

}  // namespace milnet

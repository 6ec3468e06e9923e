// Command-line front end: train, predict, cv, sweep, gradcheck, synth.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11/CLI11.hpp>

#include "milnet/config.hpp"
#include "milnet/data.hpp"
#include "milnet/eval.hpp"
#include "milnet/gradcheck.hpp"
#include "milnet/serialize.hpp"
#include "milnet/training.hpp"

namespace {

using namespace milnet;

enum Exit : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumerical = 4, kGradcheck = 5 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  unsigned threads = 0;
  bool no_timings = false;
  std::string fault;
};

void fail_line(const char* kind, const std::string& msg) {
  std::string one = msg;
  for (char& c : one) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error[" << kind << "]: " << one << '\n';
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

RunConfig load_config(const Common& c) { return load_run_config(c.config_path, c.overrides); }

BagDataset load_dataset(const std::string& path) {
  BagDataset ds = load_milcsv(path);
  std::cerr << "loaded " << ds.name() << ": " << ds.size() << " bags (" << ds.positives() << " positive), "
            << ds.instance_count() << " instances, d=" << ds.dim() << '\n';
  return ds;
}

void apply_fault(const Common& c) {
  if (c.fault.empty()) return;
  if (c.fault != "lse") throw ConfigError("unknown fault '" + c.fault + "'");
  fault::corrupt_lse_backward() = true;
}

std::string trace_table(const TrainTrace& t, bool timings) {
  std::string out = timings ? "epoch\tloss\taccuracy\tms_per_bag\n" : "epoch\tloss\taccuracy\n";
  for (std::size_t e = 0; e < t.epochs(); ++e) {
    out += std::to_string(e + 1) + "\t" + fmt("%.10f", t.loss[e]) + "\t" +
           (e < t.accuracy.size() ? fmt("%.4f", t.accuracy[e]) : std::string("nan"));
    if (timings) out += "\t" + fmt("%.4f", t.seconds_per_bag[e] * 1e3);
    out += '\n';
  }
  return out;
}

int cmd_train(const Common& c, const std::string& data_path, const std::string& model_out, std::string trace_out) {
  const RunConfig cfg = load_config(c);
  const BagDataset raw = load_dataset(data_path);
  std::optional<FeatureScaler> scaler;
  if (cfg.standardize) scaler = fit_scaler(raw);
  const BagDataset ds = scaler ? scaler->apply(raw) : raw;

  Model model{Network::build(cfg.network, ds.dim()), scaler};
  const TrainTrace trace = train(model.network, ds, cfg.train);
  save_model(model, model_out);
  if (trace_out.empty()) trace_out = model_out + ".trace.tsv";
  write_file(trace_out, trace_table(trace, !c.no_timings));
  std::cerr << "trained " << to_string(cfg.network.variant) << " for " << trace.epochs()
            << " epochs; final loss " << fmt("%.6f", trace.loss.back()) << ", train accuracy "
            << fmt("%.4f", trace.accuracy.back()) << '\n';
  std::cerr << "model written to " << model_out << ", trace to " << trace_out << '\n';
  return kOk;
}

int cmd_predict(const Common& c, const std::string& model_path, const std::string& data_path) {
  const Model model = load_model(model_path);
  const BagDataset ds = load_dataset(data_path);
  if (ds.dim() != model.network.input_dim()) {
    throw DataError("dataset has " + std::to_string(ds.dim()) + " features, model expects " +
                    std::to_string(model.network.input_dim()));
  }
  std::vector<int> pred, labels;
  std::vector<double> scores;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& bag : ds.bags()) scores.push_back(model.score(bag.instances));
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

  std::cout << "bag_id\tscore\tpredicted\tlabel\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    pred.push_back(predict_label(scores[i]));
    labels.push_back(ds[i].label);
    std::cout << ds[i].id << '\t' << fmt("%.17g", scores[i]) << '\t' << pred.back() << '\t' << ds[i].label << '\n';
  }
  std::cerr << "accuracy: " << fmt("%.4f", accuracy(pred, labels)) << '\n';
  if (!c.no_timings) {
    std::cerr << "mean latency: " << fmt("%.4f", elapsed.count() / static_cast<double>(ds.size()) * 1e3)
              << " ms/bag\n";
  }
  return kOk;
}

void warn(const CvReport& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << r.dataset << " " << to_string(r.spec.variant) << ": " << w << '\n';
  for (const auto& f : r.folds) {
    if (f.failed) std::cerr << "warning: repeat " << f.repeat << " fold " << f.fold << " failed: " << f.error << '\n';
  }
}

TableFormat parse_format(const std::string& s) {
  const auto f = parse_table_format(s);
  if (!f) throw ConfigError("unknown table format '" + s + "'");
  return *f;
}

int cmd_cv(const Common& c, const std::string& data_path, const std::string& out, const std::string& format,
           const std::string& json_out) {
  const RunConfig cfg = load_config(c);
  const BagDataset ds = load_dataset(data_path);
  const FoldPlan plan = make_folds(ds, cfg.repeats, cfg.folds, cfg.train.seed);
  std::cerr << "running " << cfg.repeats << "x" << cfg.folds << "-fold CV of " << to_string(cfg.network.variant)
            << " (" << to_string(cfg.network.pooling.method) << " pooling)\n";
  const CvReport report = run_cv(ds, cfg.network, cfg.train, plan, {c.threads, cfg.standardize});
  warn(report);
  write_file(out, emit_fold_table(report, parse_format(format), !c.no_timings));
  if (!json_out.empty()) write_file(json_out, report_to_json(report, !c.no_timings).dump(1) + "\n");
  std::cerr << "mean accuracy " << fmt("%.4f", report.mean_accuracy) << " (std " << fmt("%.4f", report.std_accuracy)
            << ", failed folds " << report.failed_folds << "); report written to " << out << '\n';
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& data_path, const std::string& axis_name, const std::string& out,
              const std::string& format, const std::string& json_out) {
  const RunConfig cfg = load_config(c);
  const auto axis = parse_sweep_axis(axis_name);
  if (!axis) throw ConfigError("unknown sweep axis '" + axis_name + "'");
  const auto specs = sweep_specs(cfg.network, *axis);  // validates before loading data
  const BagDataset ds = load_dataset(data_path);
  const FoldPlan plan = make_folds(ds, cfg.repeats, cfg.folds, cfg.train.seed);
  std::vector<CvReport> reports;
  for (const auto& spec : specs) {
    std::cerr << "sweep " << axis_name << ": " << to_string(spec.variant) << " " << to_string(spec.pooling.method)
              << " widths";
    for (int w : spec.widths) std::cerr << ' ' << w;
    std::cerr << '\n';
    reports.push_back(run_cv(ds, spec, cfg.train, plan, {c.threads, cfg.standardize}));
    warn(reports.back());
  }
  write_file(out, emit_table(reports, parse_format(format), !c.no_timings));
  if (!json_out.empty()) {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) all.push_back(report_to_json(r, !c.no_timings));
    write_file(json_out, all.dump(1) + "\n");
  }
  std::cerr << reports.size() << " reports written to " << out << '\n';
  return kOk;
}

int cmd_gradcheck(const Common& c, const GradcheckOptions& opts) {
  if (!c.config_path.empty() || !c.overrides.empty()) load_config(c);  // validate only
  const auto results = run_gradcheck(opts);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << r.label() << "\tmax_rel_err=" << fmt("%.3e", r.max_relative_error) << "\tparams=" << r.parameters
              << "\trerolls=" << r.rerolls << '\t' << (r.passed ? "PASS" : "FAIL") << '\n';
    ok &= r.passed;
  }
  if (!ok) {
    std::string failed;
    for (const auto& r : results) {
      if (!r.passed) failed += (failed.empty() ? "" : ",") + r.label();
    }
    fail_line("gradcheck", "tolerance " + fmt("%g", opts.tolerance) + " exceeded for " + failed);
    return kGradcheck;
  }
  return kOk;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out, const std::string& truth_out) {
  const auto data = generate_synthetic_with_truth(spec);
  save_milcsv(data.dataset, out);
  if (!truth_out.empty()) {
    std::string t = "bag_id\tinstance\tplanted\n";
    for (std::size_t b = 0; b < data.dataset.size(); ++b) {
      for (std::size_t i = 0; i < data.planted[b].size(); ++i) {
        t += data.dataset[b].id + "\t" + std::to_string(i) + "\t" + (data.planted[b][i] ? "1" : "0") + "\n";
      }
    }
    write_file(truth_out, t);
  }
  std::cerr << "wrote " << data.dataset.size() << " bags to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-instance neural networks: training, prediction, cross-validation and gradient checks"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "flat key = value config file");
  app.add_option("-o,--override", common.overrides, "key=value, applied after the config file")->take_all();
  app.add_option("--threads", common.threads, "worker threads for CV folds (0 = all cores)");
  app.add_flag("--no-timings", common.no_timings, "omit wall-clock columns so outputs are reproducible");
  app.add_option("--inject-fault", common.fault)->group("");

  std::string data, model, model_out, trace_out, out, format = "tsv", json_out, axis, truth_out;

  auto* train_cmd = app.add_subcommand("train", "train one model on a whole dataset");
  train_cmd->add_option("--data", data, "MIL-CSV dataset")->required();
  train_cmd->add_option("--model-out", model_out, "model file to write")->required();
  train_cmd->add_option("--trace-out", trace_out, "per-epoch trace (default: <model-out>.trace.tsv)");

  auto* predict_cmd = app.add_subcommand("predict", "score every bag of a dataset");
  predict_cmd->add_option("--model", model, "model file")->required();
  predict_cmd->add_option("--data", data, "MIL-CSV dataset")->required();

  auto* cv_cmd = app.add_subcommand("cv", "repeated stratified k-fold cross-validation");
  cv_cmd->add_option("--data", data, "MIL-CSV dataset")->required();
  cv_cmd->add_option("--out", out, "fold table to write")->required();
  cv_cmd->add_option("--format", format, "tsv or markdown");
  cv_cmd->add_option("--json", json_out, "full report as JSON");

  auto* sweep_cmd = app.add_subcommand("sweep", "cross-validate along one ablation axis");
  sweep_cmd->add_option("--data", data, "MIL-CSV dataset")->required();
  sweep_cmd->add_option("--axis", axis, "pooling, ds_on_off, rc_on_off, widths or depth")->required();
  sweep_cmd->add_option("--out", out, "summary table to write")->required();
  sweep_cmd->add_option("--format", format, "tsv or markdown");
  sweep_cmd->add_option("--json", json_out, "all reports as JSON");

  GradcheckOptions gc;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every variant and pooling");
  gradcheck_cmd->add_option("--tolerance", gc.tolerance, "max relative error");
  gradcheck_cmd->add_option("--seed", gc.seed, "seed for networks and bags");

  SyntheticSpec syn;
  auto* synth_cmd = app.add_subcommand("synth", "write a planted-signal dataset");
  synth_cmd->add_option("--out", out, "MIL-CSV file to write")->required();
  synth_cmd->add_option("--truth-out", truth_out, "per-instance planted flags");
  synth_cmd->add_option("--positives", syn.positives, "positive bags")->capture_default_str();
  synth_cmd->add_option("--negatives", syn.negatives, "negative bags")->capture_default_str();
  synth_cmd->add_option("--min-instances", syn.min_instances, "fewest instances per bag")->capture_default_str();
  synth_cmd->add_option("--max-instances", syn.max_instances, "most instances per bag")->capture_default_str();
  synth_cmd->add_option("--dim", syn.dim, "feature dimension")->capture_default_str();
  synth_cmd->add_option("--magnitude", syn.magnitude, "planted value on feature 0")->capture_default_str();
  synth_cmd->add_option("--noise", syn.noise, "std of the Gaussian noise")->capture_default_str();
  synth_cmd->add_option("--seed", syn.seed, "generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("config", e.what());
    return kConfig;
  }

  try {
    apply_fault(common);
    if (*train_cmd) return cmd_train(common, data, model_out, trace_out);
    if (*predict_cmd) return cmd_predict(common, model, data);
    if (*cv_cmd) return cmd_cv(common, data, out, format, json_out);
    if (*sweep_cmd) return cmd_sweep(common, data, axis, out, format, json_out);
    if (*gradcheck_cmd) return cmd_gradcheck(common, gc);
    if (*synth_cmd) return cmd_synth(syn, out, truth_out);
  } catch (const ConfigError& e) {
    fail_line("config", e.what());
    return kConfig;
  } catch (const DataError& e) {
    fail_line("data", e.what());
    return kData;
  } catch (const NumericalError& e) {
    fail_line("numerical", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    fail_line("internal", e.what());
    return kInternal;
  }
  return kInternal;
}

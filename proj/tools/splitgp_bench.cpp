// splitgp_bench: run / grid / summarize.
//
//   splitgp_bench run --config exp.cfg --seed 7 --out results.csv
//   splitgp_bench grid --model localgp --wgen 0.5,0.1,0.001 --out grid.csv
//   splitgp_bench summarize --in results.csv --out summary.csv
//
// Flags override keys read from --config.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "splitgp/bench.hpp"

namespace {

struct ConfigFlags {
  std::string config_path;
  // Flag name -> value as typed; folded into the key=value map.
  std::map<std::string, std::string> values;

  void add(CLI::App& app) {
    app.add_option("--config", config_path, "key=value experiment file")->check(CLI::ExistingFile);
    const auto flag = [&](const std::string& name, const std::string& key, const std::string& help) {
      app.add_option_function<std::string>(
          "--" + name, [this, key](const std::string& v) { values[key] = v; }, help);
    };
    flag("seed", "seed", "master seed (u64)");
    flag("out", "out", "output CSV path (default stdout)");
    flag("model", "model", "comma list of splitting,fullgp,localgp,rbcm");
    flag("m", "m", "splitting limit(s)");
    flag("wgen", "wgen", "local GP threshold(s) in (0,1]");
    flag("experts", "experts", "rBCM expert count(s)");
    flag("batch-size", "batch_size", "observations per update call (1 = streaming)");
    flag("replicates", "replicates", "replicate count");
    flag("kfold", "kfold", "folds per replicate (<2: holdout split)");
    flag("dataset", "dataset", "synthetic | csv:<path>");
    flag("sweep", "sweep", "checkpoints start:stop:step");
    flag("n", "n", "synthetic sample size / CSV row cap");
    flag("jobs", "jobs", "worker threads over replicate x fold");
    flag("train-policy", "train_policy", "never | split_and_batch | every_update");
    flag("direction", "direction", "svd | oja");
  }

  splitgp::ExperimentConfig resolve() const {
    splitgp::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = splitgp::ExperimentConfig::load(config_path);
    cfg.apply(splitgp::kv::Map(values.begin(), values.end()));
    cfg.validate();
    return cfg;
  }
};

template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw splitgp::DataError("cannot write '" + path + "'");
  fn(out);
  out.flush();
  if (!out) throw splitgp::DataError("write to '" + path + "' failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming splitting-GP benchmark harness"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "evaluate models; one CSV row per model x replicate x fold x checkpoint");
  ConfigFlags run_flags;
  run_flags.add(*run);

  auto* grid = app.add_subcommand("grid", "run every parameter combination and report the best per model");
  ConfigFlags grid_flags;
  grid_flags.add(*grid);
  std::string report_path;
  grid->add_option("--report", report_path, "per-parameter mean MSE table (default stderr)");

  auto* summarize = app.add_subcommand("summarize", "mean and 95% t-interval per model, parameter and n");
  std::string in_path;
  std::string summary_out;
  summarize->add_option("--in", in_path, "records CSV from run/grid")->required()->check(CLI::ExistingFile);
  summarize->add_option("--out", summary_out, "summary CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto cfg = run_flags.resolve();
      const auto records = splitgp::run_experiment(cfg);
      with_output(cfg.out, [&](std::ostream& o) { splitgp::write_records(records, o); });
    } else if (grid->parsed()) {
      const auto cfg = grid_flags.resolve();
      const auto result = splitgp::grid_search(cfg);
      with_output(cfg.out, [&](std::ostream& o) { splitgp::write_records(result.records, o); });
      if (report_path.empty()) {
        splitgp::write_grid_report(result, std::cerr);
      } else {
        with_output(report_path, [&](std::ostream& o) { splitgp::write_grid_report(result, o); });
      }
    } else if (summarize->parsed()) {
      const auto rows = splitgp::summarize(splitgp::read_records(in_path));
      with_output(summary_out, [&](std::ostream& o) { splitgp::write_summary(rows, o); });
    }
  } catch (const splitgp::Error& e) {
    std::cerr << "splitgp_bench: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

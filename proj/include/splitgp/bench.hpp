#pragma once

// Benchmark harness: replicate x fold x checkpoint evaluation of streaming
// regressors with common random numbers, parameter grids, CSV records and
// t-interval summaries.
//
// Within one replicate every model sees the same sampled data, the same fold
// membership and the same ingestion order; only rBCM draws extra randomness,
// from its own derived stream. All non-timing outputs are a deterministic
// function of the configuration.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "splitgp/baselines.hpp"
#include "splitgp/data_io.hpp"
#include "splitgp/errors.hpp"
#include "splitgp/kv.hpp"
#include "splitgp/splitting_model.hpp"

namespace splitgp {

// ---- configuration ------------------------------------------------------------

struct Sweep {
  Index start = 0;
  Index stop = 0;
  Index step = 1;

  static Sweep parse(std::string_view text) {
    const auto parts = kv::split_list(text, ':');
    if (parts.size() != 3) throw DataError("sweep: expected start:stop:step, got '" + std::string(text) + "'");
    Sweep s{kv::to_integer(parts[0], "sweep start"), kv::to_integer(parts[1], "sweep stop"),
            kv::to_integer(parts[2], "sweep step")};
    if (s.start < 1 || s.stop < s.start || s.step < 1) {
      throw DataError("sweep: need 1 <= start <= stop and step >= 1");
    }
    return s;
  }

  std::string str() const {
    return std::to_string(start) + ":" + std::to_string(stop) + ":" + std::to_string(step);
  }
};

inline std::string to_string(TrainPolicy p) {
  switch (p) {
    case TrainPolicy::kNever: return "never";
    case TrainPolicy::kOnSplitAndBatch: return "split_and_batch";
    case TrainPolicy::kEveryUpdate: return "every_update";
  }
  return "?";
}

inline TrainPolicy parse_train_policy(std::string_view s) {
  if (s == "never") return TrainPolicy::kNever;
  if (s == "split_and_batch") return TrainPolicy::kOnSplitAndBatch;
  if (s == "every_update") return TrainPolicy::kEveryUpdate;
  throw DataError("train_policy: expected never|split_and_batch|every_update, got '" + std::string(s) + "'");
}

inline std::string to_string(DirectionMode d) { return d == DirectionMode::kBatchSvd ? "svd" : "oja"; }

inline DirectionMode parse_direction(std::string_view s) {
  if (s == "svd") return DirectionMode::kBatchSvd;
  if (s == "oja") return DirectionMode::kOjaStreaming;
  throw DataError("direction: expected svd|oja, got '" + std::string(s) + "'");
}

inline const std::vector<std::string>& known_models() {
  static const std::vector<std::string> names{"splitting", "fullgp", "localgp", "rbcm"};
  return names;
}

/// Flat key=value configuration; keys mirror the CLI flags. Model
/// parameters (m, wgen, experts) may hold comma-separated lists, in which
/// case every value is evaluated.
struct ExperimentConfig {
  std::vector<std::string> models{"splitting"};
  std::vector<Index> m{500};
  std::vector<double> w_gen{1e-3};
  std::vector<Index> experts{10};

  /// "synthetic" or "csv:<path>".
  std::string dataset = "synthetic";
  /// Synthetic sample size; for CSV a positive value caps the row count.
  Index n = 2500;
  Index response_column = -1;
  bool dedup = false;
  bool standardize = false;

  /// k >= 2 selects k-fold CV; otherwise one train/test split per replicate.
  Index kfold = 5;
  double train_fraction = 0.8;
  Index batch_size = 1;
  Index replicates = 10;
  std::uint64_t seed = 0;
  std::optional<Sweep> sweep;

  TrainPolicy train_policy = TrainPolicy::kOnSplitAndBatch;
  int fit_iterations = 50;
  double fit_tolerance = 1e-6;
  DirectionMode direction = DirectionMode::kBatchSvd;
  int jobs = 1;
  std::string out;

  void validate() const {
    if (models.empty()) throw DataError("config: no models selected");
    for (const auto& name : models) {
      if (std::find(known_models().begin(), known_models().end(), name) == known_models().end()) {
        throw DataError("config: unknown model '" + name + "'");
      }
    }
    for (const Index v : m) {
      if (v < 2) throw DataError("config: m must be >= 2");
    }
    for (const double v : w_gen) {
      if (!(v > 0.0 && v <= 1.0)) throw DataError("config: wgen must lie in (0, 1]");
    }
    for (const Index v : experts) {
      if (v < 1) throw DataError("config: experts must be >= 1");
    }
    if (m.empty() || w_gen.empty() || experts.empty()) throw DataError("config: empty parameter list");
    if (dataset != "synthetic" && dataset.rfind("csv:", 0) != 0) {
      throw DataError("config: dataset must be 'synthetic' or 'csv:<path>'");
    }
    if (batch_size < 1) throw DataError("config: batch_size must be >= 1");
    if (replicates < 1) throw DataError("config: replicates must be >= 1");
    if (kfold < 2 && !(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw DataError("config: train_fraction must lie in (0, 1)");
    }
    if (jobs < 1) throw DataError("config: jobs must be >= 1");
  }

  void apply(const kv::Map& map) {
    for (const auto& [key, value] : map) {
      if (key == "model") {
        models = kv::split_list(value);
      } else if (key == "m") {
        m.clear();
        for (const auto& v : kv::split_list(value)) m.push_back(kv::to_integer(v, "m"));
      } else if (key == "wgen") {
        w_gen.clear();
        for (const auto& v : kv::split_list(value)) w_gen.push_back(kv::to_double(v, "wgen"));
      } else if (key == "experts") {
        experts.clear();
        for (const auto& v : kv::split_list(value)) experts.push_back(kv::to_integer(v, "experts"));
      } else if (key == "dataset") {
        dataset = value;
      } else if (key == "n") {
        n = kv::to_integer(value, "n");
      } else if (key == "response_column") {
        response_column = kv::to_integer(value, "response_column");
      } else if (key == "dedup") {
        dedup = parse_bool(value, "dedup");
      } else if (key == "standardize") {
        standardize = parse_bool(value, "standardize");
      } else if (key == "kfold") {
        kfold = kv::to_integer(value, "kfold");
      } else if (key == "train_fraction") {
        train_fraction = kv::to_double(value, "train_fraction");
      } else if (key == "batch_size") {
        batch_size = kv::to_integer(value, "batch_size");
      } else if (key == "replicates") {
        replicates = kv::to_integer(value, "replicates");
      } else if (key == "seed") {
        seed = static_cast<std::uint64_t>(kv::to_integer(value, "seed"));
      } else if (key == "sweep") {
        sweep = value.empty() ? std::nullopt : std::optional<Sweep>(Sweep::parse(value));
      } else if (key == "train_policy") {
        train_policy = parse_train_policy(value);
      } else if (key == "fit_iterations") {
        fit_iterations = static_cast<int>(kv::to_integer(value, "fit_iterations"));
      } else if (key == "fit_tolerance") {
        fit_tolerance = kv::to_double(value, "fit_tolerance");
      } else if (key == "direction") {
        direction = parse_direction(value);
      } else if (key == "jobs") {
        jobs = static_cast<int>(kv::to_integer(value, "jobs"));
      } else if (key == "out") {
        out = value;
      } else {
        throw DataError("config: unknown key '" + key + "'");
      }
    }
  }

  static ExperimentConfig from_kv(const kv::Map& map) {
    ExperimentConfig cfg;
    cfg.apply(map);
    cfg.validate();
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config '" + path + "'");
    return from_kv(kv::parse(in));
  }

  std::string to_kv() const {
    std::ostringstream o;
    const auto join = [](const auto& values, auto fmt) {
      std::string s;
      for (const auto& v : values) s += (s.empty() ? "" : ",") + fmt(v);
      return s;
    };
    const auto str = [](const std::string& v) { return v; };
    const auto num = [](auto v) {
      if constexpr (std::is_floating_point_v<decltype(v)>) {
        return kv::format_double(v);
      } else {
        return std::to_string(v);
      }
    };
    o << "model=" << join(models, str) << '\n'
      << "m=" << join(m, num) << '\n'
      << "wgen=" << join(w_gen, num) << '\n'
      << "experts=" << join(experts, num) << '\n'
      << "dataset=" << dataset << '\n'
      << "n=" << n << '\n'
      << "response_column=" << response_column << '\n'
      << "dedup=" << (dedup ? "true" : "false") << '\n'
      << "standardize=" << (standardize ? "true" : "false") << '\n'
      << "kfold=" << kfold << '\n'
      << "train_fraction=" << kv::format_double(train_fraction) << '\n'
      << "batch_size=" << batch_size << '\n'
      << "replicates=" << replicates << '\n'
      << "seed=" << seed << '\n'
      << "sweep=" << (sweep ? sweep->str() : "") << '\n'
      << "train_policy=" << to_string(train_policy) << '\n'
      << "fit_iterations=" << fit_iterations << '\n'
      << "fit_tolerance=" << kv::format_double(fit_tolerance) << '\n'
      << "direction=" << to_string(direction) << '\n'
      << "jobs=" << jobs << '\n'
      << "out=" << out << '\n';
    return o.str();
  }

 private:
  static bool parse_bool(std::string_view v, std::string_view what) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw DataError(std::string(what) + ": expected true|false, got '" + std::string(v) + "'");
  }
};

// ---- records ----------------------------------------------------------------------

struct MetricRecord {
  std::string model;
  /// "m=500", "wgen=0.001", "experts=10" or "-" for the full GP.
  std::string param;
  Index n = 0;
  Index replicate = 0;
  Index fold = 0;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double memory_kb = 0.0;
  double train_time_s = 0.0;
  double predict_time_s = 0.0;
  Index components = 0;
  /// FNV-1a of the training stream and test fold; equal across models
  /// within a replicate and fold.
  std::string stream_hash;
  /// ok | warning | failed: <reason>
  std::string status = "ok";

  bool ok() const { return status == "ok" || status == "warning"; }
};

inline const char* kRecordHeader =
    "model,param,n,replicate,fold,mse,rmse,memory_kb,train_time_s,predict_time_s,components,"
    "stream_hash,status";

/// Columns that are wall-clock measurements; everything else is reproducible.
inline bool is_timing_column(std::string_view name) {
  return name == "train_time_s" || name == "predict_time_s";
}

namespace detail {

inline std::string csv_field(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace detail

inline void write_records(const std::vector<MetricRecord>& records, std::ostream& out) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << detail::csv_field(r.model) << ',' << detail::csv_field(r.param) << ',' << r.n << ','
        << r.replicate << ',' << r.fold << ',' << kv::format_double(r.mse) << ','
        << kv::format_double(r.rmse) << ',' << kv::format_double(r.memory_kb) << ','
        << kv::format_double(r.train_time_s) << ',' << kv::format_double(r.predict_time_s) << ','
        << r.components << ',' << r.stream_hash << ',' << detail::csv_field(r.status) << '\n';
  }
}

inline void emit_csv(const std::vector<MetricRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_records(records, out);
  out.flush();
  if (!out) throw DataError("write to '" + path + "' failed");
}

inline std::vector<MetricRecord> read_records(std::istream& in, const std::string& name = "records") {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || kv::trim(line) != kRecordHeader) {
    throw DataError(name + " line 1: unexpected header");
  }
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (kv::trim(line).empty()) continue;
    const auto cells = detail::split_row(line, ',');
    if (cells.size() != 13) {
      throw DataError(name + " line " + std::to_string(line_no) + ": expected 13 columns");
    }
    const auto where = name + " line " + std::to_string(line_no);
    MetricRecord r;
    r.model = cells[0];
    r.param = cells[1];
    r.n = kv::to_integer(cells[2], where);
    r.replicate = kv::to_integer(cells[3], where);
    r.fold = kv::to_integer(cells[4], where);
    r.mse = kv::to_double(cells[5], where);
    r.rmse = kv::to_double(cells[6], where);
    r.memory_kb = kv::to_double(cells[7], where);
    r.train_time_s = kv::to_double(cells[8], where);
    r.predict_time_s = kv::to_double(cells[9], where);
    r.components = kv::to_integer(cells[10], where);
    r.stream_hash = cells[11];
    r.status = cells[12];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MetricRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_records(in, path);
}

// ---- data preparation --------------------------------------------------------------

/// Training stream (in ingestion order) and test fold for one replicate/fold,
/// already centered (and standardized if configured).
struct FoldData {
  Dataset train;
  Dataset test;
  std::string stream_hash;
};

namespace detail {

inline void fnv1a(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

inline std::string dataset_hash(const Dataset& train, const Dataset& test) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Dataset* ds : {&train, &test}) {
    const Index n = ds->size();
    fnv1a(h, &n, sizeof n);
    for (Index r = 0; r < n; ++r) {
      for (Index d = 0; d < ds->dims(); ++d) {
        const double v = ds->X(r, d);
        fnv1a(h, &v, sizeof v);
      }
      const double y = ds->Y[r] + ds->y_center;
      fnv1a(h, &y, sizeof y);
    }
  }
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

}  // namespace detail

/// Source data shared by all replicates (CSV), or nothing for synthetic data,
/// which is redrawn per replicate.
inline std::optional<Dataset> load_source(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synthetic") return std::nullopt;
  CsvSchema schema;
  schema.response = cfg.response_column;
  Dataset ds = load_csv(cfg.dataset.substr(4), schema);
  if (cfg.dedup) ds = dedup_exact(ds);
  if (cfg.n > 0 && cfg.n < ds.size()) {
    std::vector<Index> head(static_cast<std::size_t>(cfg.n));
    std::iota(head.begin(), head.end(), Index{0});
    ds = ds.subset(head);
  }
  return ds;
}

inline Index folds_per_replicate(const ExperimentConfig& cfg) { return cfg.kfold >= 2 ? cfg.kfold : 1; }

inline FoldData prepare_fold(const ExperimentConfig& cfg, const std::optional<Dataset>& source,
                             Index replicate, Index fold) {
  const SeedPlan seeds{cfg.seed};
  const auto rep = static_cast<std::uint64_t>(replicate);
  Dataset data = source ? *source : synth_dataset(cfg.n, seeds, rep);
  if (!source && cfg.dedup) data = dedup_exact(data);
  FoldData out;
  const std::uint64_t fold_seed = seeds.derive(SeedPurpose::kFolds, rep);
  FoldIndices idx;
  if (cfg.kfold >= 2) {
    idx = kfold_indices(data.size(), cfg.kfold, fold_seed)[static_cast<std::size_t>(fold)];
  } else {
    const auto n_train =
        static_cast<Index>(std::llround(cfg.train_fraction * static_cast<double>(data.size())));
    idx = holdout_indices(data.size(), n_train, data.size() - n_train, fold_seed);
  }
  out.train = data.subset(idx.train);
  out.test = data.subset(idx.test);
  out.stream_hash = detail::dataset_hash(out.train, out.test);
  center_response(out.train, out.test);
  if (cfg.standardize) {
    const auto scaler = InputScaler::fit(out.train.X);
    out.train.X = scaler.apply(out.train.X);
    out.test.X = scaler.apply(out.test.X);
  }
  return out;
}

/// Observation counts at which the models are evaluated.
inline std::vector<Index> checkpoints(const ExperimentConfig& cfg, Index n_train) {
  std::vector<Index> out;
  if (cfg.sweep) {
    for (Index c = cfg.sweep->start; c <= cfg.sweep->stop && c <= n_train; c += cfg.sweep->step) {
      out.push_back(c);
    }
  }
  if (out.empty()) out.push_back(n_train);
  return out;
}

// ---- models ---------------------------------------------------------------------------

struct ModelVariant {
  std::string model;
  std::string param;
  Index m = 0;
  double w_gen = 0.0;
  Index experts = 0;
};

inline std::vector<ModelVariant> model_variants(const ExperimentConfig& cfg) {
  std::vector<ModelVariant> out;
  for (const auto& name : cfg.models) {
    if (name == "splitting") {
      for (const Index v : cfg.m) out.push_back({name, "m=" + std::to_string(v), v, 0.0, 0});
    } else if (name == "localgp") {
      for (const double v : cfg.w_gen) out.push_back({name, "wgen=" + kv::format_double(v), 0, v, 0});
    } else if (name == "rbcm") {
      for (const Index v : cfg.experts) out.push_back({name, "experts=" + std::to_string(v), 0, 0.0, v});
    } else {
      out.push_back({name, "-", 0, 0.0, 0});
    }
  }
  return out;
}

inline TrainSchedule schedule_for(const ExperimentConfig& cfg) {
  TrainSchedule s;
  s.policy = cfg.train_policy;
  s.fit.max_iterations = cfg.fit_iterations;
  s.fit.relative_tolerance = cfg.fit_tolerance;
  return s;
}

/// Unit lengthscales; the first fit replaces the variances from data.
inline KernelSpec initial_spec(Index dims) {
  return KernelSpec(Hyperparameters::isotropic(dims, 1.0, 1.0, 0.1));
}

inline std::unique_ptr<OnlineRegressor> make_regressor(const ExperimentConfig& cfg,
                                                       const ModelVariant& v, Index dims,
                                                       Index replicate, Index fold) {
  const KernelSpec spec = initial_spec(dims);
  const TrainSchedule schedule = schedule_for(cfg);
  if (v.model == "splitting") {
    return std::make_unique<SplittingRegressor>(SplittingModel(spec, v.m, schedule, cfg.direction));
  }
  if (v.model == "fullgp") return std::make_unique<FullGp>(spec, schedule);
  if (v.model == "localgp") return std::make_unique<LocalGpWgen>(spec, v.w_gen, schedule);
  if (v.model == "rbcm") {
    const SeedPlan seeds{cfg.seed};
    const auto seed = seeds.derive(SeedPurpose::kAssignment, static_cast<std::uint64_t>(replicate),
                                   static_cast<std::uint64_t>(fold));
    return std::make_unique<Rbcm>(spec, v.experts, seed, schedule);
  }
  throw DataError("unknown model '" + v.model + "'");
}

// ---- running ----------------------------------------------------------------------------

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Streams one fold into one model, evaluating at every checkpoint.
inline void run_variant(const ExperimentConfig& cfg, const ModelVariant& v, const FoldData& data,
                        Index replicate, Index fold, std::vector<MetricRecord>& out) {
  const auto cps = checkpoints(cfg, data.train.size());
  auto model = make_regressor(cfg, v, data.train.dims(), replicate, fold);
  const bool single = cfg.batch_size == 1;
  const bool train_at_checkpoint = single && cfg.train_policy != TrainPolicy::kNever;

  Index ingested = 0;
  double train_time = 0.0;
  for (const Index cp : cps) {
    MetricRecord rec;
    rec.model = v.model;
    rec.param = v.param;
    rec.n = cp;
    rec.replicate = replicate;
    rec.fold = fold;
    rec.stream_hash = data.stream_hash;
    try {
      const auto t0 = Clock::now();
      while (ingested < cp) {
        if (single) {
          model->ingest(data.train.X.row(ingested).transpose(), data.train.Y[ingested]);
          ++ingested;
        } else {
          const Index b = std::min(cfg.batch_size, cp - ingested);
          model->ingest_batch(data.train.X.middleRows(ingested, b), data.train.Y.segment(ingested, b));
          ingested += b;
        }
      }
      // Under single-observation streaming only splits trigger fits, so
      // every model is refitted once per checkpoint.
      if (train_at_checkpoint) model->train();
      train_time += seconds_since(t0);

      const auto t1 = Clock::now();
      double sse = 0.0;
      bool fallback = false;
      for (Index r = 0; r < data.test.size(); ++r) {
        const auto p = model->predict_mean(data.test.X.row(r).transpose());
        const double e = p.mean - data.test.Y[r];
        sse += e * e;
        fallback = fallback || p.fallback;
      }
      rec.predict_time_s = seconds_since(t1);
      rec.train_time_s = train_time;
      rec.mse = data.test.size() > 0 ? sse / static_cast<double>(data.test.size())
                                     : std::numeric_limits<double>::quiet_NaN();
      rec.rmse = std::sqrt(rec.mse);
      rec.memory_kb = static_cast<double>(model->footprint()) / 1024.0;
      rec.components = model->num_components();
      if (!std::isfinite(rec.mse)) {
        rec.status = "failed: non-finite prediction";
      } else if (model->warning() || fallback) {
        rec.status = "warning";
      }
      out.push_back(std::move(rec));
      if (!out.back().ok()) return;
    } catch (const Error& e) {
      rec.train_time_s = train_time;
      rec.memory_kb = static_cast<double>(model->footprint()) / 1024.0;
      rec.components = model->num_components();
      rec.status = std::string("failed: ") + e.what();
      out.push_back(std::move(rec));
      return;  // model state is no longer trustworthy
    }
  }
}

}  // namespace detail

/// Every (replicate, fold) task evaluates every model variant on identical
/// data. Tasks may run on several threads; records come back in task order.
inline std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto source = load_source(cfg);
  const auto variants = model_variants(cfg);
  const Index folds = folds_per_replicate(cfg);
  const Index tasks = cfg.replicates * folds;

  std::vector<std::vector<MetricRecord>> results(static_cast<std::size_t>(tasks));
  std::atomic<Index> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  const auto worker = [&] {
    while (true) {
      const Index t = next.fetch_add(1);
      if (t >= tasks) return;
      try {
        const Index replicate = t / folds;
        const Index fold = t % folds;
        const FoldData data = prepare_fold(cfg, source, replicate, fold);
        auto& out = results[static_cast<std::size_t>(t)];
        for (const auto& v : variants) detail::run_variant(cfg, v, data, replicate, fold, out);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(tasks);
      }
    }
  };

  const int threads = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(tasks)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<MetricRecord> all;
  for (auto& chunk : results) {
    for (auto& r : chunk) all.push_back(std::move(r));
  }
  return all;
}

// ---- summaries ------------------------------------------------------------------------

struct SummaryRow {
  std::string model;
  std::string param;
  std::string metric;
  Index x = 0;
  /// Replicates contributing.
  Index count = 0;
  double mean = 0.0;
  /// 95% t-interval across replicates; absent with fewer than two.
  std::optional<double> lo;
  std::optional<double> hi;
};

inline double metric_value(const MetricRecord& r, std::string_view metric) {
  if (metric == "mse") return r.mse;
  if (metric == "rmse") return r.rmse;
  if (metric == "memory_kb") return r.memory_kb;
  if (metric == "train_time_s") return r.train_time_s;
  if (metric == "predict_time_s") return r.predict_time_s;
  if (metric == "components") return static_cast<double>(r.components);
  throw DataError("unknown metric '" + std::string(metric) + "'");
}

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> names{"mse", "rmse", "memory_kb", "train_time_s",
                                              "predict_time_s", "components"};
  return names;
}

/// Two-sided 95% Student-t quantile with the given degrees of freedom.
inline double t_quantile_975(double dof) {
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof), 0.975);
}

/// Folds are averaged within each replicate; the interval is taken across
/// replicates. Failed records are left out.
inline std::vector<SummaryRow> summarize(const std::vector<MetricRecord>& records) {
  using GroupKey = std::tuple<std::string, std::string, Index>;
  // group -> replicate -> records
  std::map<GroupKey, std::map<Index, std::vector<const MetricRecord*>>> groups;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    groups[{r.model, r.param, r.n}][r.replicate].push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, reps] : groups) {
    for (const auto& metric : summary_metrics()) {
      std::vector<double> per_rep;
      for (const auto& [rep, recs] : reps) {
        double s = 0.0;
        for (const auto* r : recs) s += metric_value(*r, metric);
        per_rep.push_back(s / static_cast<double>(recs.size()));
      }
      SummaryRow row;
      row.model = std::get<0>(key);
      row.param = std::get<1>(key);
      row.metric = metric;
      row.x = std::get<2>(key);
      row.count = static_cast<Index>(per_rep.size());
      const double k = static_cast<double>(per_rep.size());
      double mean = 0.0;
      for (const double v : per_rep) mean += v;
      mean /= k;
      row.mean = mean;
      if (per_rep.size() >= 2) {
        double ss = 0.0;
        for (const double v : per_rep) ss += (v - mean) * (v - mean);
        const double half = t_quantile_975(k - 1.0) * std::sqrt(ss / (k - 1.0) / k);
        row.lo = mean - half;
        row.hi = mean + half;
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

inline void write_summary(const std::vector<SummaryRow>& rows, std::ostream& out) {
  out << "model,param,metric,x,count,mean,lo,hi\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.param << ',' << r.metric << ',' << r.x << ',' << r.count << ','
        << kv::format_double(r.mean) << ',' << (r.lo ? kv::format_double(*r.lo) : "") << ','
        << (r.hi ? kv::format_double(*r.hi) : "") << '\n';
  }
}

// ---- grid search ------------------------------------------------------------------------

struct ParameterGrid {
  std::vector<Index> m;
  std::vector<double> w_gen;
  std::vector<Index> experts;
};

struct GridPoint {
  std::string model;
  std::string param;
  /// Mean test MSE at the last checkpoint over every successful replicate/fold.
  double mean_mse = std::numeric_limits<double>::quiet_NaN();
  Index count = 0;
};

struct GridResult {
  std::vector<MetricRecord> records;
  std::vector<GridPoint> points;
  /// Lowest mean MSE per model.
  std::map<std::string, GridPoint> best;
  /// With two or more w_gen values: whether mean MSE never increases as
  /// w_gen decreases.
  std::optional<bool> wgen_monotone;
};

inline std::vector<GridPoint> grid_points(const std::vector<MetricRecord>& records) {
  std::map<std::pair<std::string, std::string>, Index> last;
  for (const auto& r : records) {
    auto& n = last[{r.model, r.param}];
    n = std::max(n, r.n);
  }
  std::map<std::pair<std::string, std::string>, std::pair<double, Index>> acc;
  for (const auto& r : records) {
    if (r.n != last[{r.model, r.param}]) continue;
    auto& [sum, count] = acc[{r.model, r.param}];
    if (r.ok() && std::isfinite(r.mse)) {
      sum += r.mse;
      ++count;
    }
  }
  std::vector<GridPoint> out;
  for (const auto& [key, v] : acc) {
    GridPoint p;
    p.model = key.first;
    p.param = key.second;
    p.count = v.second;
    if (v.second > 0) p.mean_mse = v.first / static_cast<double>(v.second);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::optional<bool> wgen_trend(const std::vector<GridPoint>& points) {
  std::vector<std::pair<double, double>> curve;  // (w_gen, mse)
  for (const auto& p : points) {
    if (p.model != "localgp" || p.param.rfind("wgen=", 0) != 0) continue;
    curve.emplace_back(kv::to_double(std::string_view(p.param).substr(5), "wgen"), p.mean_mse);
  }
  if (curve.size() < 2) return std::nullopt;
  std::sort(curve.begin(), curve.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (!(curve[i].second <= curve[i - 1].second)) return false;
  }
  return true;
}

/// run_experiment over the grid, which replaces the config's parameter
/// lists where non-empty.
inline GridResult grid_search(ExperimentConfig cfg, const ParameterGrid& grid = {}) {
  if (!grid.m.empty()) cfg.m = grid.m;
  if (!grid.w_gen.empty()) cfg.w_gen = grid.w_gen;
  if (!grid.experts.empty()) cfg.experts = grid.experts;
  GridResult out;
  out.records = run_experiment(cfg);
  out.points = grid_points(out.records);
  for (const auto& p : out.points) {
    if (!std::isfinite(p.mean_mse)) continue;
    auto it = out.best.find(p.model);
    if (it == out.best.end() || p.mean_mse < it->second.mean_mse) out.best[p.model] = p;
  }
  out.wgen_monotone = wgen_trend(out.points);
  return out;
}

inline void write_grid_report(const GridResult& g, std::ostream& out) {
  out << "model,param,mean_mse,count,best\n";
  for (const auto& p : g.points) {
    const auto it = g.best.find(p.model);
    const bool best = it != g.best.end() && it->second.param == p.param;
    out << p.model << ',' << p.param << ',' << kv::format_double(p.mean_mse) << ',' << p.count << ','
        << (best ? "yes" : "") << '\n';
  }
  if (g.wgen_monotone) {
    out << "# wgen_monotone=" << (*g.wgen_monotone ? "true" : "false") << '\n';
  }
}

}  // namespace splitgp

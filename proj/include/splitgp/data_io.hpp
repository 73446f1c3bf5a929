#pragma once

// Datasets: the synthetic benchmark surface, CSV ingestion, duplicate
// removal, response centering and seeded fold / holdout splits. Every random
// choice is drawn from a SeedPlan so that all models compared within one
// replicate see identical data (common random numbers).

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "splitgp/errors.hpp"
#include "splitgp/kernel.hpp"
#include "splitgp/kv.hpp"

namespace splitgp {

struct Dataset {
  Matrix X;
  Vector Y;
  std::string name;
  /// Offset already subtracted from Y.
  double y_center = 0.0;

  Index size() const { return Y.size(); }
  Index dims() const { return X.cols(); }

  void validate() const {
    if (X.rows() != Y.size()) throw DataError(name + ": X rows and Y length differ");
    if (!X.allFinite() || !Y.allFinite()) throw DataError(name + ": non-finite entries");
  }

  Dataset subset(const std::vector<Index>& rows) const {
    Dataset out{Matrix(static_cast<Index>(rows.size()), X.cols()),
                Vector(static_cast<Index>(rows.size())), name, y_center};
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.X.row(static_cast<Index>(k)) = X.row(rows[k]);
      out.Y[static_cast<Index>(k)] = Y[rows[k]];
    }
    return out;
  }
};

// ---- seeds ------------------------------------------------------------------

enum class SeedPurpose : std::uint64_t {
  kSampling = 1,
  kNoise = 2,
  kFolds = 3,
  kAssignment = 4,
};

/// Master seed plus deterministic per-purpose streams.
struct SeedPlan {
  std::uint64_t master = 0;

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t derive(SeedPurpose purpose, std::uint64_t replicate = 0,
                       std::uint64_t stream = 0) const {
    std::uint64_t h = mix(master);
    h = mix(h ^ static_cast<std::uint64_t>(purpose));
    h = mix(h ^ replicate);
    return mix(h ^ stream);
  }
};

namespace detail {

inline std::vector<Index> shuffled_indices(Index n, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace detail

// ---- synthetic benchmark ----------------------------------------------------

/// f(x1, x2) = 5 sin(x1^2 + x2^2) + 3 x1
inline double synth_latent(double x1, double x2) {
  return 5.0 * std::sin(x1 * x1 + x2 * x2) + 3.0 * x1;
}

inline constexpr Index kSynthGridSide = 100;

/// The 100 x 100 grid over [-1, 1]^2 (x1 major) with latent values.
inline Dataset synth_grid() {
  const Index side = kSynthGridSide;
  Dataset grid{Matrix(side * side, 2), Vector(side * side), "synthetic-grid", 0.0};
  for (Index i = 0; i < side; ++i) {
    const double x1 = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(side - 1);
    for (Index j = 0; j < side; ++j) {
      const double x2 = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(side - 1);
      const Index r = i * side + j;
      grid.X(r, 0) = x1;
      grid.X(r, 1) = x2;
      grid.Y[r] = synth_latent(x1, x2);
    }
  }
  return grid;
}

/// Noise standard deviation: 5% of the latent maximum over the grid.
inline double synth_noise_sd() { return 0.05 * synth_grid().Y.maxCoeff(); }

/// n grid points drawn without replacement, plus iid Gaussian noise.
inline Dataset synth_dataset(Index n_samples, const SeedPlan& seeds, std::uint64_t replicate = 0) {
  Dataset grid = synth_grid();
  if (n_samples < 0 || n_samples > grid.size()) {
    throw DataError("synth_dataset: requested " + std::to_string(n_samples) +
                    " samples from a grid of " + std::to_string(grid.size()));
  }
  const double sd = 0.05 * grid.Y.maxCoeff();
  auto idx = detail::shuffled_indices(grid.size(), seeds.derive(SeedPurpose::kSampling, replicate));
  idx.resize(static_cast<std::size_t>(n_samples));
  Dataset out = grid.subset(idx);
  out.name = "synthetic";
  std::mt19937_64 rng(seeds.derive(SeedPurpose::kNoise, replicate));
  std::normal_distribution<double> noise(0.0, sd);
  for (Index r = 0; r < out.size(); ++r) out.Y[r] += noise(rng);
  return out;
}

// ---- CSV ----------------------------------------------------------------------

struct CsvSchema {
  /// Response column; negative counts from the end (-1 = last).
  Index response = -1;
  /// Predictor columns; empty means every column except the response.
  std::vector<Index> predictors;
};

namespace detail {

inline std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> cells;
  if (delim == ',') {
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      cells.emplace_back(kv::trim(std::string_view(line).substr(
          start, pos == std::string::npos ? std::string::npos : pos - start)));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
  } else {
    std::istringstream in(line);
    std::string cell;
    while (in >> cell) cells.push_back(cell);
  }
  return cells;
}

inline bool parse_cell(std::string_view text, double& value) {
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc{} && ptr == end && !text.empty();
}

}  // namespace detail

/// Comma- or whitespace-delimited numeric table. A first row containing a
/// non-numeric cell is taken as a header.
inline Dataset read_csv(std::istream& in, const CsvSchema& schema = {}, std::string name = "csv") {
  std::string line;
  std::size_t line_no = 0;
  char delim = 0;
  std::optional<std::size_t> width;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (kv::trim(line).empty()) continue;
    if (delim == 0) delim = line.find(',') != std::string::npos ? ',' : ' ';
    const auto cells = detail::split_row(line, delim);
    std::vector<double> values(cells.size());
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size(); ++c) numeric = numeric && detail::parse_cell(cells[c], values[c]);
    if (first) {
      first = false;
      width = cells.size();
      if (!numeric) continue;  // header
    }
    if (cells.size() != *width) {
      throw DataError(name + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(*width) + " columns, found " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!detail::parse_cell(cells[c], values[c])) {
        throw DataError(name + " line " + std::to_string(line_no) + ", column " +
                        std::to_string(c + 1) + ": not a number: '" + cells[c] + "'");
      }
      if (!std::isfinite(values[c])) {
        throw DataError(name + " line " + std::to_string(line_no) + ", column " +
                        std::to_string(c + 1) + ": non-finite value");
      }
    }
    rows.push_back(std::move(values));
  }
  const auto cols = static_cast<Index>(width.value_or(0));
  if (cols < 2) throw DataError(name + ": need at least one predictor and one response column");
  const Index response = schema.response < 0 ? cols + schema.response : schema.response;
  if (response < 0 || response >= cols) throw DataError(name + ": response column out of range");
  std::vector<Index> predictors = schema.predictors;
  if (predictors.empty()) {
    for (Index c = 0; c < cols; ++c) {
      if (c != response) predictors.push_back(c);
    }
  }
  for (const Index c : predictors) {
    if (c < 0 || c >= cols || c == response) throw DataError(name + ": bad predictor column");
  }
  Dataset ds{Matrix(static_cast<Index>(rows.size()), static_cast<Index>(predictors.size())),
             Vector(static_cast<Index>(rows.size())), std::move(name), 0.0};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t p = 0; p < predictors.size(); ++p) {
      ds.X(static_cast<Index>(r), static_cast<Index>(p)) = rows[r][static_cast<std::size_t>(predictors[p])];
    }
    ds.Y[static_cast<Index>(r)] = rows[r][static_cast<std::size_t>(response)];
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in, schema, path);
}

/// Header x1..xM,y then one row per observation (responses include y_center).
inline void write_csv(const Dataset& ds, std::ostream& out) {
  for (Index d = 0; d < ds.dims(); ++d) out << 'x' << (d + 1) << ',';
  out << "y\n";
  for (Index r = 0; r < ds.size(); ++r) {
    for (Index d = 0; d < ds.dims(); ++d) out << kv::format_double(ds.X(r, d)) << ',';
    out << kv::format_double(ds.Y[r] + ds.y_center) << '\n';
  }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(ds, out);
  if (!out) throw DataError("write to '" + path + "' failed");
}

// ---- preprocessing ------------------------------------------------------------

/// Drops rows whose (x, y) is bitwise equal to an earlier row; order kept.
inline Dataset dedup_exact(const Dataset& ds) {
  std::set<std::vector<std::uint64_t>> seen;
  std::vector<Index> keep;
  for (Index r = 0; r < ds.size(); ++r) {
    std::vector<std::uint64_t> key(static_cast<std::size_t>(ds.dims() + 1));
    for (Index d = 0; d < ds.dims(); ++d) {
      key[static_cast<std::size_t>(d)] = std::bit_cast<std::uint64_t>(ds.X(r, d));
    }
    key.back() = std::bit_cast<std::uint64_t>(ds.Y[r]);
    if (seen.insert(std::move(key)).second) keep.push_back(r);
  }
  return ds.subset(keep);
}

/// Subtracts the training mean from both sets and records it in y_center.
inline void center_response(Dataset& train, Dataset& test) {
  const double mean = train.size() > 0 ? train.Y.mean() : 0.0;
  train.Y.array() -= mean;
  test.Y.array() -= mean;
  train.y_center += mean;
  test.y_center += mean;
}

/// Per-column affine map fitted on training inputs.
struct InputScaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static InputScaler fit(const Matrix& X) {
    InputScaler s;
    s.mean = X.colwise().mean();
    const Matrix centered = X.rowwise() - s.mean;
    s.scale = (centered.colwise().squaredNorm() / std::max<double>(1.0, static_cast<double>(X.rows() - 1)))
                  .cwiseSqrt();
    for (Index d = 0; d < s.scale.size(); ++d) {
      if (!(s.scale[d] > 0.0)) s.scale[d] = 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& X) const {
    return (X.rowwise() - mean).array().rowwise() / scale.array();
  }
};

// ---- splits -----------------------------------------------------------------------

struct FoldIndices {
  std::vector<Index> train;
  std::vector<Index> test;
};

/// k disjoint test folds over a seeded permutation; fold sizes differ by at
/// most one. Training rows keep the permuted order.
inline std::vector<FoldIndices> kfold_indices(Index n, Index k, std::uint64_t seed) {
  if (k < 2) throw DataError("kfold: k must be at least 2");
  if (k > n) throw DataError("kfold: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  const auto perm = detail::shuffled_indices(n, seed);
  std::vector<FoldIndices> folds(static_cast<std::size_t>(k));
  const Index base = n / k;
  const Index extra = n % k;
  Index pos = 0;
  std::vector<Index> fold_of(static_cast<std::size_t>(n));
  for (Index f = 0; f < k; ++f) {
    const Index len = base + (f < extra ? 1 : 0);
    for (Index j = 0; j < len; ++j) fold_of[static_cast<std::size_t>(pos + j)] = f;
    pos += len;
  }
  for (Index p = 0; p < n; ++p) {
    const Index f = fold_of[static_cast<std::size_t>(p)];
    for (Index g = 0; g < k; ++g) {
      auto& target = g == f ? folds[static_cast<std::size_t>(g)].test : folds[static_cast<std::size_t>(g)].train;
      target.push_back(perm[static_cast<std::size_t>(p)]);
    }
  }
  return folds;
}

inline std::vector<std::pair<Dataset, Dataset>> kfold(const Dataset& ds, Index k,
                                                      const SeedPlan& seeds,
                                                      std::uint64_t replicate = 0) {
  std::vector<std::pair<Dataset, Dataset>> out;
  for (const auto& f : kfold_indices(ds.size(), k, seeds.derive(SeedPurpose::kFolds, replicate))) {
    out.emplace_back(ds.subset(f.train), ds.subset(f.test));
  }
  return out;
}

inline FoldIndices holdout_indices(Index n, Index n_train, Index n_test, std::uint64_t seed) {
  if (n_train < 0 || n_test < 0 || n_train + n_test > n) {
    throw DataError("train_test_split: " + std::to_string(n_train) + "+" + std::to_string(n_test) +
                    " rows requested from " + std::to_string(n));
  }
  const auto perm = detail::shuffled_indices(n, seed);
  FoldIndices out;
  out.train.assign(perm.begin(), perm.begin() + n_train);
  out.test.assign(perm.begin() + n_train, perm.begin() + n_train + n_test);
  return out;
}

inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, Index n_train, Index n_test,
                                                    const SeedPlan& seeds,
                                                    std::uint64_t replicate = 0) {
  const auto f = holdout_indices(ds.size(), n_train, n_test,
                                 seeds.derive(SeedPurpose::kFolds, replicate));
  return {ds.subset(f.train), ds.subset(f.test)};
}

/// Training share rounded to the nearest row; the rest is test.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                                    const SeedPlan& seeds,
                                                    std::uint64_t replicate = 0) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw DataError("train_test_split: fraction must lie in [0, 1]");
  }
  const auto n_train = static_cast<Index>(std::llround(train_fraction * static_cast<double>(ds.size())));
  return train_test_split(ds, n_train, ds.size() - n_train, seeds, replicate);
}

}  // namespace splitgp

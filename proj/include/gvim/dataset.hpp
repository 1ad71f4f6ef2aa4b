#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gvim/error.hpp"
#include "gvim/rng.hpp"

namespace gvim {

using IndexSet = std::vector<std::size_t>;

enum class FeatureKind { Continuous, Categorical };

struct FeatureMeta {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  int levels = 0;  // categorical only; labels are 1..levels

  static FeatureMeta continuous(std::string name) {
    return {std::move(name), FeatureKind::Continuous, 0};
  }
  static FeatureMeta categorical(std::string name, int levels) {
    return {std::move(name), FeatureKind::Categorical, levels};
  }

  bool is_categorical() const noexcept { return kind == FeatureKind::Categorical; }
  bool operator==(const FeatureMeta&) const = default;
};

// Column-oriented table with a continuous response. Immutable: "mutating"
// operations return a new Dataset that shares every untouched column.
class Dataset {
 public:
  using Column = std::vector<double>;

  Dataset() = default;

  Dataset(std::vector<FeatureMeta> features, std::vector<Column> columns, Column response,
          std::string response_name = "y")
      : features_(std::move(features)), response_name_(std::move(response_name)) {
    if (columns.size() != features_.size()) {
      throw SchemaError("dataset has " + std::to_string(features_.size()) + " features but " +
                        std::to_string(columns.size()) + " columns");
    }
    n_ = response.size();
    response_ = std::make_shared<const Column>(std::move(response));
    columns_.reserve(columns.size());
    for (auto& c : columns) columns_.push_back(std::make_shared<const Column>(std::move(c)));
    validate();
  }

  std::size_t rows() const noexcept { return n_; }
  std::size_t num_features() const noexcept { return features_.size(); }
  const std::vector<FeatureMeta>& features() const noexcept { return features_; }
  const FeatureMeta& feature(std::size_t j) const { return features_.at(j); }
  const std::string& response_name() const noexcept { return response_name_; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t j = 0; j < features_.size(); ++j) {
      if (features_[j].name == name) return j;
    }
    return std::nullopt;
  }

  std::size_t index_of(const std::string& name) const {
    if (auto j = find(name)) return *j;
    throw FeatureError("unknown feature '" + name + "'");
  }

  std::span<const double> column(std::size_t j) const { return *columns_.at(j); }
  std::span<const double> column(const std::string& name) const { return column(index_of(name)); }
  std::span<const double> response() const { return *response_; }

  // Copy with column j replaced.
  Dataset with_column(std::size_t j, Column values) const {
    if (values.size() != n_) throw SchemaError("replacement column has wrong length");
    Dataset out = *this;
    out.columns_.at(j) = std::make_shared<const Column>(std::move(values));
    out.validate_column(j);
    return out;
  }

  Dataset with_response(Column values) const {
    if (values.size() != n_) throw SchemaError("replacement response has wrong length");
    Dataset out = *this;
    out.response_ = std::make_shared<const Column>(std::move(values));
    return out;
  }

  // New dataset made of the given rows, in order; duplicates allowed.
  Dataset select_rows(std::span<const std::size_t> rows) const {
    std::vector<Column> cols(columns_.size());
    for (std::size_t j = 0; j < columns_.size(); ++j) {
      cols[j].reserve(rows.size());
      for (auto r : rows) cols[j].push_back((*columns_[j]).at(r));
    }
    Column y;
    y.reserve(rows.size());
    for (auto r : rows) y.push_back(response_->at(r));
    return Dataset(features_, std::move(cols), std::move(y), response_name_);
  }

  // Copy restricted to a subset of features (in the given order).
  Dataset select_features(std::span<const std::string> names) const {
    Dataset out;
    out.n_ = n_;
    out.response_ = response_;
    out.response_name_ = response_name_;
    for (const auto& name : names) {
      const auto j = index_of(name);
      out.features_.push_back(features_[j]);
      out.columns_.push_back(columns_[j]);
    }
    out.validate();
    return out;
  }

  IndexSet all_rows() const {
    IndexSet idx(n_);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }

 private:
  void validate() const {
    std::unordered_set<std::string> seen;
    for (std::size_t j = 0; j < features_.size(); ++j) {
      const auto& f = features_[j];
      if (f.name.empty()) throw SchemaError("feature " + std::to_string(j) + " has an empty name");
      if (!seen.insert(f.name).second) throw SchemaError("duplicate feature name '" + f.name + "'");
      if (f.is_categorical() && f.levels < 2) {
        throw SchemaError("categorical feature '" + f.name + "' needs at least 2 levels");
      }
      if (columns_[j]->size() != n_) {
        throw SchemaError("column '" + f.name + "' has " + std::to_string(columns_[j]->size()) +
                          " entries, expected " + std::to_string(n_));
      }
      validate_column(j);
    }
  }

  void validate_column(std::size_t j) const {
    const auto& f = features_[j];
    if (!f.is_categorical()) return;
    const auto& col = *columns_[j];
    for (std::size_t i = 0; i < col.size(); ++i) {
      const double v = col[i];
      if (v != std::floor(v) || v < 1 || v > f.levels) {
        throw SchemaError("categorical feature '" + f.name + "' row " + std::to_string(i) +
                          ": value outside 1.." + std::to_string(f.levels));
      }
    }
  }

  std::vector<FeatureMeta> features_;
  std::vector<std::shared_ptr<const Column>> columns_;
  std::shared_ptr<const Column> response_ = std::make_shared<const Column>();
  std::string response_name_ = "y";
  std::size_t n_ = 0;
};

struct SplitPlan {
  double train_fraction = 2.0 / 3.0;
  std::size_t n_splits = 1;  // m

  // m = 1 for n >= 500, otherwise 10 subsample splits.
  static SplitPlan default_for(std::size_t n) {
    SplitPlan plan;
    plan.n_splits = n >= 500 ? 1 : 10;
    return plan;
  }

  // floor(train_fraction * n); the 1e-9 guard keeps e.g. (2/3) * 75 at 50.
  std::size_t train_size(std::size_t n) const {
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  }

  // Smallest dataset size whose training partition has at least n_train rows.
  std::size_t dataset_size_for_training(std::size_t n_train) const {
    auto n = static_cast<std::size_t>(std::ceil(static_cast<double>(n_train) / train_fraction));
    while (n > 0 && train_size(n - 1) >= n_train) --n;
    while (train_size(n) < n_train) ++n;
    return n;
  }
};

struct Split {
  IndexSet train;
  IndexSet valid;
};

// Random train/validation partitions; split s draws from rng.child(s).
inline std::vector<Split> make_split(std::size_t n, const SplitPlan& plan, const RngStream& rng) {
  if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) {
    throw SplitError("train_fraction must lie in (0, 1)");
  }
  if (plan.n_splits < 1) throw SplitError("n_splits must be at least 1");
  const std::size_t n_train = plan.train_size(n);
  if (n < 3 || n_train < 1 || n_train >= n) {
    throw SplitError("dataset of " + std::to_string(n) + " rows is too small for train fraction " +
                     std::to_string(plan.train_fraction));
  }
  std::vector<Split> out(plan.n_splits);
  for (std::size_t s = 0; s < plan.n_splits; ++s) {
    IndexSet idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto stream = rng.child(s);
    stream.shuffle(std::span<std::size_t>(idx));
    out[s].train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out[s].valid.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(out[s].train.begin(), out[s].train.end());
    std::sort(out[s].valid.begin(), out[s].valid.end());
  }
  return out;
}

inline std::vector<Split> make_split(const Dataset& data, const SplitPlan& plan,
                                     const RngStream& rng) {
  return make_split(data.rows(), plan, rng);
}

// Uniform random permutation of one feature's values within `rows`. Fixed
// points are allowed. Every other cell is shared with the input.
inline Dataset permute_column(const Dataset& data, std::size_t feature,
                              std::span<const std::size_t> rows, RngStream& rng) {
  if (feature >= data.num_features()) {
    throw FeatureError("feature index " + std::to_string(feature) + " out of range");
  }
  const auto col = data.column(feature);
  std::vector<double> picked;
  picked.reserve(rows.size());
  for (auto r : rows) {
    if (r >= data.rows()) throw SplitError("row index " + std::to_string(r) + " out of range");
    picked.push_back(col[r]);
  }
  rng.shuffle(std::span<double>(picked));
  std::vector<double> values(col.begin(), col.end());
  for (std::size_t i = 0; i < rows.size(); ++i) values[rows[i]] = picked[i];
  return data.with_column(feature, std::move(values));
}

inline Dataset permute_column(const Dataset& data, const std::string& feature,
                              std::span<const std::size_t> rows, RngStream& rng) {
  return permute_column(data, data.index_of(feature), rows, rng);
}

// n row indices drawn with replacement.
inline IndexSet bootstrap_rows(std::size_t n, RngStream& rng) {
  IndexSet rows(n);
  for (auto& r : rows) r = static_cast<std::size_t>(rng.bounded(n));
  return rows;
}

}  // namespace gvim

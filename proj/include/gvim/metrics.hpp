#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gvim/dataset.hpp"
#include "gvim/error.hpp"
#include "gvim/rng.hpp"

namespace gvim {

// Anything that maps (dataset, rows) to one prediction per row.
template <typename P>
concept Predictor = requires(const P& p, const Dataset& d, std::span<const std::size_t> rows) {
  { p(d, rows) } -> std::convertible_to<std::vector<double>>;
};

// Mean squared error of precomputed predictions over `rows`.
inline double mean_squared_error(std::span<const double> predictions, const Dataset& data,
                                 std::span<const std::size_t> rows) {
  if (rows.empty()) throw MetricError("empty row set");
  if (predictions.size() != rows.size()) throw MetricError("prediction count does not match row count");
  const auto y = data.response();
  double sum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!std::isfinite(predictions[i])) {
      throw NumericError("non-finite prediction at row " + std::to_string(rows[i]));
    }
    const double r = y[rows[i]] - predictions[i];
    sum += r * r;
  }
  return sum / static_cast<double>(rows.size());
}

template <Predictor P>
double e_orig_hat(const P& predict, const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw MetricError("empty row set");
  const std::vector<double> pred = predict(data, rows);
  return mean_squared_error(pred, data, rows);
}

struct SwitchLoss {
  double e_orig = 0.0;
  double e_switch = 0.0;  // mean over permutation repetitions
  double gvim = 0.0;      // e_switch - e_orig
};

namespace detail {

inline void check_multiset(const Dataset& before, const Dataset& after, std::size_t feature,
                           std::span<const std::size_t> rows) {
  std::vector<double> a, b;
  a.reserve(rows.size());
  b.reserve(rows.size());
  for (auto r : rows) {
    a.push_back(before.column(feature)[r]);
    b.push_back(after.column(feature)[r]);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) throw NumericError("permutation changed the value multiset of '" + before.feature(feature).name + "'");
}

}  // namespace detail

// Switched loss for one feature, sharing e_orig across repetitions. Each
// repetition permutes the feature within `rows` only.
template <Predictor P>
SwitchLoss switch_loss(const P& predict, const Dataset& data, std::span<const std::size_t> rows,
                       std::size_t feature, RngStream& rng, double e_orig, int repetitions = 1) {
  if (rows.empty()) throw MetricError("empty row set");
  if (repetitions < 1) throw MetricError("permutation repetitions must be at least 1");
  SwitchLoss out;
  out.e_orig = e_orig;
  double switch_sum = 0.0;
  for (int rep = 0; rep < repetitions; ++rep) {
    const Dataset switched = permute_column(data, feature, rows, rng);
    detail::check_multiset(data, switched, feature, rows);
    const std::vector<double> pred = predict(switched, rows);
    const double e = mean_squared_error(pred, switched, rows);
    switch_sum += e;
  }
  out.e_switch = switch_sum / repetitions;
  // Equal to the mean of per-repetition differences; stored this way so that
  // gvim == e_switch - e_orig holds exactly.
  out.gvim = out.e_switch - e_orig;
  return out;
}

template <Predictor P>
double e_switch_hat(const P& predict, const Dataset& data, std::span<const std::size_t> rows,
                    const std::string& feature, RngStream& rng, int repetitions = 1) {
  const auto j = data.index_of(feature);
  const double e0 = e_orig_hat(predict, data, rows);
  return switch_loss(predict, data, rows, j, rng, e0, repetitions).e_switch;
}

// Estimated GVIM: switched minus original loss on the same permutation draw.
// Negative values are possible in finite samples and are returned as-is.
template <Predictor P>
double gvim_hat(const P& predict, const Dataset& data, std::span<const std::size_t> rows,
                const std::string& feature, RngStream& rng, int repetitions = 1) {
  const auto j = data.index_of(feature);
  const double e0 = e_orig_hat(predict, data, rows);
  return switch_loss(predict, data, rows, j, rng, e0, repetitions).gvim;
}

struct LossReport {
  double e_orig = 0.0;
  std::map<std::string, double> e_switch;
  std::map<std::string, double> gvim;
  std::size_t n_valid = 0;
};

// Losses for several features. Feature j (dataset index) draws its
// permutations from rng.child(j), so results do not depend on which other
// features are requested or on evaluation order.
template <Predictor P>
LossReport loss_report(const P& predict, const Dataset& data, std::span<const std::size_t> rows,
                       std::span<const std::string> features, const RngStream& rng,
                       int repetitions = 1) {
  LossReport report;
  report.n_valid = rows.size();
  report.e_orig = e_orig_hat(predict, data, rows);
  for (const auto& name : features) {
    const auto j = data.index_of(name);
    auto stream = rng.child(j);
    const auto s = switch_loss(predict, data, rows, j, stream, report.e_orig, repetitions);
    report.e_switch[name] = s.e_switch;
    report.gvim[name] = s.gvim;
  }
  return report;
}

// Per-row pieces of the switched-minus-original loss for one shared
// permutation draw. With r = y - f and d = f - f' (f' on switched inputs):
//   (y - f')^2 - (y - f)^2 = d^2 + 2 r d,
// so gvim == mean_sq_change + cross_term up to rounding, and cross_term is
// exactly zero when y == f. Sums are compensated so the identity holds to
// near machine precision on large row sets.
struct SwitchDecomposition {
  double e_orig = 0.0;
  double e_switch = 0.0;
  double gvim = 0.0;            // e_switch - e_orig
  double mean_sq_change = 0.0;  // mean (f - f')^2
  double cross_term = 0.0;      // 2 mean (y - f)(f - f')
};

namespace detail {

// Neumaier summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

template <Predictor P>
SwitchDecomposition switch_decomposition(const P& predict, const Dataset& data, std::span<const std::size_t> rows,
                                         std::size_t feature, RngStream& rng) {
  if (rows.empty()) throw MetricError("empty row set");
  const Dataset switched = permute_column(data, feature, rows, rng);
  const auto f = predict(data, rows);
  const auto g = predict(switched, rows);
  const auto y = data.response();
  detail::CompensatedSum orig, sw, sq, cross;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double r = y[rows[i]] - f[i];
    const double rs = y[rows[i]] - g[i];
    const double d = f[i] - g[i];
    orig.add(r * r);
    sw.add(rs * rs);
    sq.add(d * d);
    cross.add(2.0 * r * d);
  }
  const auto n = static_cast<double>(rows.size());
  SwitchDecomposition out;
  out.e_orig = orig.value() / n;
  out.e_switch = sw.value() / n;
  out.gvim = out.e_switch - out.e_orig;
  out.mean_sq_change = sq.value() / n;
  out.cross_term = cross.value() / n;
  return out;
}

// Relative bias in percent: 100 * (estimate - truth) / truth.
inline double pct_bias(double estimate, double truth) {
  if (truth == 0.0) throw BiasUndefined("true value is zero");
  return 100.0 * (estimate - truth) / truth;
}

}  // namespace gvim

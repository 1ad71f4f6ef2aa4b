#pragma once

// Split-sample GVIM estimation with subsample aggregation and bootstrap
// standard errors.
//
//   1. split rows into training and validation parts (m times),
//   2. fit on the training part; on the validation part compute the
//      original loss and, per feature, the loss after permuting that feature,
//   3. average (switched - original) over the m splits,
//   4. optionally repeat 1-3 on M bootstrap resamples and report the
//      standard deviation of the M averages.
//
// Random streams: split s uses rng.child(s) (partition draw, then its
// children 0 = model fit and 1 = permutations); bootstrap replicate b uses
// rng.child(1'000'000 + b).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gvim/csv.hpp"
#include "gvim/dataset.hpp"
#include "gvim/error.hpp"
#include "gvim/learners/model.hpp"
#include "gvim/metrics.hpp"
#include "gvim/parallel.hpp"
#include "gvim/rng.hpp"

namespace gvim {

inline constexpr std::uint64_t kBootstrapStreamOffset = 1'000'000;

struct GvimEstimate {
  std::string feature;
  double point = 0.0;             // mean of per_split
  std::vector<double> per_split;  // e_switch - e_orig on each split
  std::optional<double> bootstrap_se;
  std::size_t bootstrap_replicates = 0;  // M
};

struct EstimatorOptions {
  int permutation_repetitions = 1;
  unsigned threads = 1;
};

struct EstimationResult {
  std::vector<GvimEstimate> estimates;  // in the order features were requested
  std::vector<double> e_orig;           // per split

  double mean_e_orig() const {
    double s = 0.0;
    for (double e : e_orig) s += e;
    return e_orig.empty() ? 0.0 : s / static_cast<double>(e_orig.size());
  }
};

namespace detail {

struct SplitOutcome {
  double e_orig = 0.0;
  std::vector<double> gvim;  // per requested feature
};

inline SplitOutcome evaluate_split(const Dataset& data, const ModelSpec& spec, const Split& split,
                                   std::span<const std::string> features, const RngStream& stream,
                                   int repetitions) {
  const FittedModel model = fit_model(spec, data, split.train, stream.child(0));
  const ModelPredictor predictor{&model};
  SplitOutcome out;
  out.e_orig = e_orig_hat(predictor, data, split.valid);
  const RngStream perm = stream.child(1);
  out.gvim.reserve(features.size());
  for (const auto& name : features) {
    const auto j = data.index_of(name);
    if (!uses_feature(model, name)) {
      // Permuting an unused feature leaves every prediction unchanged.
      out.gvim.push_back(0.0);
      continue;
    }
    auto s = perm.child(j);
    out.gvim.push_back(switch_loss(predictor, data, split.valid, j, s, out.e_orig, repetitions).gvim);
  }
  return out;
}

inline EstimationResult aggregate(std::span<const std::string> features, const std::vector<SplitOutcome>& outcomes) {
  EstimationResult result;
  for (const auto& o : outcomes) result.e_orig.push_back(o.e_orig);
  for (std::size_t f = 0; f < features.size(); ++f) {
    GvimEstimate e;
    e.feature = features[f];
    double sum = 0.0;
    for (const auto& o : outcomes) {
      e.per_split.push_back(o.gvim[f]);
      sum += o.gvim[f];
    }
    e.point = sum / static_cast<double>(outcomes.size());
    result.estimates.push_back(std::move(e));
  }
  return result;
}

}  // namespace detail

inline EstimationResult estimate_gvim(const Dataset& data, const ModelSpec& spec, const SplitPlan& plan,
                                      std::span<const std::string> features, const RngStream& rng,
                                      const EstimatorOptions& options = {}) {
  for (const auto& f : features) data.index_of(f);
  const auto splits = make_split(data, plan, rng);
  std::vector<detail::SplitOutcome> outcomes(splits.size());
  parallel_for(splits.size(), options.threads, [&](std::size_t s) {
    try {
      outcomes[s] = detail::evaluate_split(data, spec, splits[s], features, rng.child(s),
                                           options.permutation_repetitions);
    } catch (const EstimationError&) {
      throw;
    } catch (const std::exception& e) {
      throw EstimationError("split " + std::to_string(s) + ": " + e.what());
    }
  });
  return detail::aggregate(features, outcomes);
}

// In-sample variant: fit and evaluate on all rows (m = 1).
inline EstimationResult estimate_gvim_fullset(const Dataset& data, const ModelSpec& spec,
                                              std::span<const std::string> features, const RngStream& rng,
                                              const EstimatorOptions& options = {}) {
  for (const auto& f : features) data.index_of(f);
  Split all{data.all_rows(), data.all_rows()};
  std::vector<detail::SplitOutcome> outcomes(1);
  try {
    outcomes[0] = detail::evaluate_split(data, spec, all, features, rng.child(0), options.permutation_repetitions);
  } catch (const std::exception& e) {
    throw EstimationError(std::string("full set: ") + e.what());
  }
  return detail::aggregate(features, outcomes);
}

// Point estimates plus bootstrap standard errors from M resample-then-split
// replicates.
inline EstimationResult bootstrap_se(const Dataset& data, const ModelSpec& spec, const SplitPlan& plan,
                                     std::span<const std::string> features, std::size_t replicates,
                                     const RngStream& rng, const EstimatorOptions& options = {}) {
  if (replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  EstimationResult result = estimate_gvim(data, spec, plan, features, rng, options);

  std::vector<std::vector<double>> points(replicates);
  EstimatorOptions inner = options;
  inner.threads = 1;
  parallel_for(replicates, options.threads, [&](std::size_t b) {
    RngStream stream = rng.child(kBootstrapStreamOffset + b);
    const auto rows = bootstrap_rows(data.rows(), stream);
    const Dataset resampled = data.select_rows(rows);
    try {
      const auto r = estimate_gvim(resampled, spec, plan, features, stream.child(0), inner);
      for (const auto& e : r.estimates) points[b].push_back(e.point);
    } catch (const std::exception& e) {
      throw EstimationError("bootstrap replicate " + std::to_string(b) + ": " + e.what());
    }
  });

  for (std::size_t f = 0; f < features.size(); ++f) {
    double mean = 0.0;
    for (std::size_t b = 0; b < replicates; ++b) mean += points[b][f];
    mean /= static_cast<double>(replicates);
    double ss = 0.0;
    for (std::size_t b = 0; b < replicates; ++b) ss += (points[b][f] - mean) * (points[b][f] - mean);
    result.estimates[f].bootstrap_se = std::sqrt(ss / static_cast<double>(replicates - 1));
    result.estimates[f].bootstrap_replicates = replicates;
  }
  return result;
}

// Columns: feature, point, per_split (';'-separated), se, m, M, seed.
inline void write_estimates_csv(const EstimationResult& result, std::uint64_t seed, std::ostream& out) {
  out << "feature,point,per_split,se,m,M,seed\n";
  for (const auto& e : result.estimates) {
    out << e.feature << ',' << format_double(e.point) << ',';
    for (std::size_t s = 0; s < e.per_split.size(); ++s) out << (s ? ";" : "") << format_double(e.per_split[s]);
    out << ',' << (e.bootstrap_se ? format_double(*e.bootstrap_se) : std::string()) << ',' << e.per_split.size()
        << ',' << e.bootstrap_replicates << ',' << seed << '\n';
  }
}

inline void write_estimates_csv(const EstimationResult& result, std::uint64_t seed, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_estimates_csv(result, seed, out);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace gvim

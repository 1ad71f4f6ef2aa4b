#pragma once

// Simulation studies: bias of estimated importance across training sizes and
// learners, and the in-sample versus split-sample comparison on the
// overfitting design. Replicates run in parallel, are cached on disk keyed by
// a configuration fingerprint, and are reduced in replicate order.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gvim/csv.hpp"
#include "gvim/dataset.hpp"
#include "gvim/dgp.hpp"
#include "gvim/error.hpp"
#include "gvim/estimator.hpp"
#include "gvim/learners/model.hpp"
#include "gvim/parallel.hpp"
#include "gvim/rng.hpp"

namespace gvim {

// Top-level stream ids under the master seed.
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kEstimationStream = 2;
inline constexpr std::uint64_t kPopulationStream = 3;
inline constexpr std::uint64_t kTruthStream = 4;

struct ExperimentModel {
  std::string name;
  std::string type;  // oracle | linear | spline_additive | gbt | overfit_linear | overfit_quadratic
  ModelSpec spec;

  // Overfit term lists depend on the number of nuisance columns.
  ModelSpec resolve(std::size_t n_nuisance) const {
    if (type == "overfit_linear") return ModelSpec::linear_terms(name, overfit_linear_terms(n_nuisance));
    if (type == "overfit_quadratic") return ModelSpec::linear_terms(name, overfit_quadratic_terms(n_nuisance));
    return spec;
  }
};

struct ExperimentConfig {
  enum class Study { Bias, Fullset };
  enum class Validation { Split, Population };

  Study study = Study::Bias;
  FriedmanDgpSpec friedman;
  OverfitDgpSpec overfit;
  std::vector<ExperimentModel> models;
  std::vector<std::size_t> training_sizes{50, 500, 5000};
  std::vector<std::size_t> nuisance_counts{1, 10, 20, 40};
  std::size_t n_replicates = 200;
  double train_fraction = 2.0 / 3.0;
  std::size_t n_splits = 0;  // 0: 10 below 500 rows, else 1
  std::size_t bootstrap = 0;  // M; 0 disables standard errors
  std::uint64_t seed = 1;
  Validation validation = Validation::Split;
  std::size_t n_pop = 100'000;
  std::vector<std::string> features;  // empty: every feature (bias) or X1, X2, Z1 (fullset)
  int permutation_repetitions = 1;
  int true_gvim_repetitions = 10;
  bool resume = true;
  double max_failure_fraction = 0.10;

  SplitPlan plan_for(std::size_t n) const {
    SplitPlan p = SplitPlan::default_for(n);
    p.train_fraction = train_fraction;
    if (n_splits > 0) p.n_splits = n_splits;
    return p;
  }

  void validate() const {
    if (n_replicates < 1) throw ConfigError("n_replicates must be at least 1");
    if (models.empty()) throw ConfigError("at least one model is required");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (permutation_repetitions < 1 || true_gvim_repetitions < 1) throw ConfigError("repetitions must be at least 1");
    if (bootstrap == 1) throw ConfigError("bootstrap needs at least 2 replicates");
    std::set<std::string> names;
    for (const auto& m : models) {
      if (m.name.empty() || m.name.find_first_of(",\n\"") != std::string::npos) {
        throw ConfigError("model name '" + m.name + "' is empty or contains a reserved character");
      }
      if (!names.insert(m.name).second) throw ConfigError("duplicate model name '" + m.name + "'");
      const bool overfit_type = m.type == "overfit_linear" || m.type == "overfit_quadratic";
      if ((study == Study::Fullset) != overfit_type && !(study == Study::Fullset && m.type == "linear")) {
        throw ConfigError("model type '" + m.type + "' does not fit this study");
      }
    }
    if (study == Study::Bias) {
      friedman.validate();
      if (training_sizes.empty()) throw ConfigError("training_sizes must be nonempty");
      for (auto s : training_sizes)
        if (s < 2) throw ConfigError("training sizes must be at least 2");
      if (validation == Validation::Population && n_pop < 10'000) throw ConfigError("n_pop must be at least 10000");
    } else {
      if (nuisance_counts.empty()) throw ConfigError("nuisance_counts must be nonempty");
      for (auto k : nuisance_counts) {
        OverfitDgpSpec s = overfit;
        s.n_nuisance = k;
        s.validate();
      }
    }
  }
};

// ---------------------------------------------------------------------------
// JSON configuration

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

inline GbtHyper gbt_hyper_from_json(const nlohmann::json& j) {
  check_keys(j, {"max_train_size", "learning_rate", "max_depth", "n_trees", "min_samples_leaf"}, "gbt hyperparameters");
  GbtHyper h;
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.max_depth = j.value("max_depth", h.max_depth);
  h.n_trees = j.value("n_trees", h.n_trees);
  h.min_samples_leaf = j.value("min_samples_leaf", h.min_samples_leaf);
  h.validate();
  return h;
}

inline nlohmann::json gbt_hyper_to_json(const GbtHyper& h) {
  return {{"learning_rate", h.learning_rate},
          {"max_depth", h.max_depth},
          {"n_trees", h.n_trees},
          {"min_samples_leaf", h.min_samples_leaf}};
}

inline ExperimentModel model_from_config(const nlohmann::json& j) {
  if (j.is_string()) return model_from_config(nlohmann::json{{"type", j.get<std::string>()}});
  check_keys(j, {"name", "type", "terms", "features", "interior_knots", "lambda_grid_points", "lambda_min_exponent",
                 "lambda_max_exponent", "hyper", "schedule"},
             "model");
  ExperimentModel m;
  m.type = j.at("type").get<std::string>();
  m.name = j.value("name", m.type);
  if (m.type == "oracle") {
    m.spec = ModelSpec::linear_terms(m.name, friedman_oracle_terms());
  } else if (m.type == "linear") {
    std::vector<Term> terms;
    for (const auto& t : j.at("terms")) terms.push_back(term_from_json(t));
    m.spec = ModelSpec::linear_terms(m.name, std::move(terms));
  } else if (m.type == "spline_additive") {
    SplineOptions o;
    o.interior_knots = j.value("interior_knots", o.interior_knots);
    o.lambda_grid_points = j.value("lambda_grid_points", o.lambda_grid_points);
    o.lambda_min_exponent = j.value("lambda_min_exponent", o.lambda_min_exponent);
    o.lambda_max_exponent = j.value("lambda_max_exponent", o.lambda_max_exponent);
    m.spec = ModelSpec::spline_additive(m.name, o);
  } else if (m.type == "gbt") {
    std::optional<GbtHyper> hyper;
    if (j.contains("hyper")) hyper = gbt_hyper_from_json(j.at("hyper"));
    GbtSchedule schedule = GbtSchedule::standard();
    if (j.contains("schedule")) {
      schedule.rows.clear();
      for (const auto& row : j.at("schedule")) {
        schedule.rows.push_back({row.value("max_train_size", std::numeric_limits<std::size_t>::max()),
                                 gbt_hyper_from_json(row)});
      }
      if (schedule.rows.empty()) throw ConfigError("gbt schedule is empty");
    }
    m.spec = ModelSpec::gbt(m.name, hyper, schedule);
  } else if (m.type == "overfit_linear" || m.type == "overfit_quadratic") {
    m.spec.name = m.name;
  } else {
    throw ConfigError("unknown model type '" + m.type + "'");
  }
  if (j.contains("features")) m.spec.features = j.at("features").get<std::vector<std::string>>();
  return m;
}

inline nlohmann::json model_to_config(const ExperimentModel& m) {
  nlohmann::json j{{"name", m.name}, {"type", m.type}};
  if (m.type == "linear") {
    j["terms"] = nlohmann::json::array();
    for (const auto& t : m.spec.terms) j["terms"].push_back(term_to_json(t));
  } else if (m.type == "spline_additive") {
    j["interior_knots"] = m.spec.spline.interior_knots;
    j["lambda_grid_points"] = m.spec.spline.lambda_grid_points;
    j["lambda_min_exponent"] = m.spec.spline.lambda_min_exponent;
    j["lambda_max_exponent"] = m.spec.spline.lambda_max_exponent;
  } else if (m.type == "gbt") {
    if (m.spec.gbt_hyper) j["hyper"] = gbt_hyper_to_json(*m.spec.gbt_hyper);
    j["schedule"] = nlohmann::json::array();
    for (const auto& row : m.spec.gbt_schedule.rows) {
      auto r = gbt_hyper_to_json(row.hyper);
      r["max_train_size"] = row.max_train_size;
      j["schedule"].push_back(r);
    }
  }
  if (!m.spec.features.empty()) j["features"] = m.spec.features;
  return j;
}

}  // namespace detail

inline ExperimentConfig default_bias_config() {
  ExperimentConfig c;
  c.models = {detail::model_from_config({{"name", "oracle"}, {"type", "oracle"}}),
              detail::model_from_config({{"name", "gam"}, {"type", "spline_additive"}}),
              detail::model_from_config({{"name", "gbt"}, {"type", "gbt"}})};
  return c;
}

inline ExperimentConfig default_fullset_config() {
  ExperimentConfig c;
  c.study = ExperimentConfig::Study::Fullset;
  c.models = {detail::model_from_config({{"name", "linear"}, {"type", "overfit_linear"}}),
              detail::model_from_config({{"name", "quadratic"}, {"type", "overfit_quadratic"}})};
  return c;
}

// Unlisted keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    detail::check_keys(j,
                       {"study", "seed", "n_replicates", "training_sizes", "nuisance_counts", "dgp", "models",
                        "features", "split", "bootstrap", "validation", "n_pop", "permutation_repetitions",
                        "true_gvim_repetitions", "resume", "max_failure_fraction"},
                       "config");
    const std::string study = j.value("study", std::string("bias"));
    ExperimentConfig c;
    if (study == "bias") {
      c = default_bias_config();
    } else if (study == "fullset") {
      c = default_fullset_config();
    } else {
      throw ConfigError("study must be 'bias' or 'fullset'");
    }
    c.seed = j.value("seed", c.seed);
    c.n_replicates = j.value("n_replicates", c.n_replicates);
    if (j.contains("training_sizes")) c.training_sizes = j.at("training_sizes").get<std::vector<std::size_t>>();
    if (j.contains("nuisance_counts")) c.nuisance_counts = j.at("nuisance_counts").get<std::vector<std::size_t>>();
    if (j.contains("features")) c.features = j.at("features").get<std::vector<std::string>>();
    if (j.contains("dgp")) {
      const auto& d = j.at("dgp");
      detail::check_keys(d, {"type", "n", "sigma_eps2", "sigma_nu2", "n_nuisance", "c2_probs", "c1_prob"}, "dgp");
      const std::string type = d.value("type", study == "bias" ? std::string("friedman") : std::string("overfit"));
      if ((type == "friedman") != (c.study == ExperimentConfig::Study::Bias)) {
        throw ConfigError("dgp type '" + type + "' does not fit study '" + study + "'");
      }
      if (type == "friedman") {
        auto& f = c.friedman;
        f.sigma_eps2 = d.value("sigma_eps2", f.sigma_eps2);
        f.sigma_nu2 = d.value("sigma_nu2", f.sigma_nu2);
        f.n_nuisance = d.value("n_nuisance", f.n_nuisance);
        f.c1_prob = d.value("c1_prob", f.c1_prob);
        if (d.contains("c2_probs")) {
          const auto p = d.at("c2_probs").get<std::vector<double>>();
          if (p.size() != 3) throw ConfigError("c2_probs needs 3 entries");
          std::copy(p.begin(), p.end(), f.c2_probs.begin());
        }
      } else if (type == "overfit") {
        c.overfit.n = d.value("n", c.overfit.n);
        c.overfit.sigma_eps2 = d.value("sigma_eps2", c.overfit.sigma_eps2);
      } else {
        throw ConfigError("unknown dgp type '" + type + "'");
      }
    }
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& m : j.at("models")) c.models.push_back(detail::model_from_config(m));
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::check_keys(s, {"train_fraction", "n_splits"}, "split");
      c.train_fraction = s.value("train_fraction", c.train_fraction);
      c.n_splits = s.value("n_splits", c.n_splits);
    }
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    const std::string validation = j.value("validation", std::string("split"));
    if (validation == "split") {
      c.validation = ExperimentConfig::Validation::Split;
    } else if (validation == "population") {
      c.validation = ExperimentConfig::Validation::Population;
    } else {
      throw ConfigError("validation must be 'split' or 'population'");
    }
    c.n_pop = j.value("n_pop", c.n_pop);
    c.permutation_repetitions = j.value("permutation_repetitions", c.permutation_repetitions);
    c.true_gvim_repetitions = j.value("true_gvim_repetitions", c.true_gvim_repetitions);
    c.resume = j.value("resume", c.resume);
    c.max_failure_fraction = j.value("max_failure_fraction", c.max_failure_fraction);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// Canonical form: every setting that influences results, so that the
// fingerprint identifies cached replicates.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  const bool bias = c.study == ExperimentConfig::Study::Bias;
  j["study"] = bias ? "bias" : "fullset";
  j["seed"] = c.seed;
  j["n_replicates"] = c.n_replicates;
  if (bias) {
    j["training_sizes"] = c.training_sizes;
    j["dgp"] = {{"type", "friedman"},
                {"sigma_eps2", c.friedman.sigma_eps2},
                {"sigma_nu2", c.friedman.sigma_nu2},
                {"n_nuisance", c.friedman.n_nuisance},
                {"c2_probs", c.friedman.c2_probs},
                {"c1_prob", c.friedman.c1_prob}};
    j["validation"] = c.validation == ExperimentConfig::Validation::Split ? "split" : "population";
    j["n_pop"] = c.n_pop;
    j["true_gvim_repetitions"] = c.true_gvim_repetitions;
  } else {
    j["nuisance_counts"] = c.nuisance_counts;
    j["dgp"] = {{"type", "overfit"}, {"n", c.overfit.n}, {"sigma_eps2", c.overfit.sigma_eps2}};
  }
  j["models"] = nlohmann::json::array();
  for (const auto& m : c.models) j["models"].push_back(detail::model_to_config(m));
  j["features"] = c.features;
  j["split"] = {{"train_fraction", c.train_fraction}, {"n_splits", c.n_splits}};
  j["bootstrap"] = c.bootstrap;
  j["permutation_repetitions"] = c.permutation_repetitions;
  j["max_failure_fraction"] = c.max_failure_fraction;
  return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_fingerprint(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config_to_json(c).dump());
  return os.str();
}

// ---------------------------------------------------------------------------
// Replicate records and cache

struct ReplicateRecord {
  std::string model;
  std::size_t size = 0;  // training size (bias) or nuisance count (fullset)
  std::size_t replicate = 0;
  std::string mode;  // "split" / "population" (bias) or "full" / "split" (fullset)
  bool ok = true;
  std::string error;
  double e_orig = 0.0;
  std::vector<std::pair<std::string, double>> estimates;
  std::vector<std::pair<std::string, double>> se;  // empty without bootstrap
};

namespace detail {

inline nlohmann::json record_to_json(const ReplicateRecord& r) {
  nlohmann::json j{{"model", r.model}, {"size", r.size},   {"replicate", r.replicate}, {"mode", r.mode},
                   {"ok", r.ok},       {"error", r.error}, {"e_orig", r.e_orig}};
  j["estimates"] = nlohmann::json::array();
  for (const auto& [f, v] : r.estimates) j["estimates"].push_back({f, v});
  j["se"] = nlohmann::json::array();
  for (const auto& [f, v] : r.se) j["se"].push_back({f, v});
  return j;
}

inline ReplicateRecord record_from_json(const nlohmann::json& j) {
  ReplicateRecord r;
  r.model = j.at("model");
  r.size = j.at("size");
  r.replicate = j.at("replicate");
  r.mode = j.at("mode");
  r.ok = j.at("ok");
  r.error = j.at("error");
  r.e_orig = j.at("e_orig");
  for (const auto& e : j.at("estimates")) r.estimates.emplace_back(e.at(0), e.at(1));
  for (const auto& e : j.at("se")) r.se.emplace_back(e.at(0), e.at(1));
  return r;
}

class ReplicateCache {
 public:
  ReplicateCache() = default;
  ReplicateCache(std::filesystem::path dir, bool enabled) : dir_(std::move(dir)), enabled_(enabled) {
    if (enabled_) {
      std::error_code ec;
      std::filesystem::create_directories(dir_, ec);
      if (ec) throw IoError("cannot create cache directory '" + dir_.string() + "': " + ec.message());
    }
  }

  std::optional<std::vector<ReplicateRecord>> load(const std::string& key) const {
    if (!enabled_) return std::nullopt;
    std::ifstream in(dir_ / (key + ".json"));
    if (!in) return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(in);
      std::vector<ReplicateRecord> out;
      for (const auto& r : j) out.push_back(record_from_json(r));
      return out;
    } catch (const std::exception&) {
      return std::nullopt;  // unreadable entries are recomputed
    }
  }

  void store(const std::string& key, const std::vector<ReplicateRecord>& records) const {
    if (!enabled_) return;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : records) j.push_back(record_to_json(r));
    const auto path = dir_ / (key + ".json");
    const auto tmp = dir_ / (key + ".json.tmp");
    {
      std::ofstream out(tmp);
      if (!out) throw IoError("cannot write '" + tmp.string() + "'");
      out << j.dump();
      if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
  }

 private:
  std::filesystem::path dir_;
  bool enabled_ = false;
};

inline double lookup(const std::vector<std::pair<std::string, double>>& v, const std::string& key) {
  for (const auto& [k, x] : v)
    if (k == key) return x;
  throw FeatureError("no value for '" + key + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Bias study

struct BiasRow {
  std::string feature;
  std::size_t training_size = 0;
  std::string model;
  double true_gvim = 0.0;
  double mean_estimate = 0.0;
  std::optional<double> pct_bias;  // undefined when the true value is 0
  double e_orig_ratio = 0.0;       // mean e_orig estimate / true e_orig
  std::size_t n_replicates = 0;    // successful replicates
  std::optional<double> mean_se;   // with bootstrap only

  bool operator==(const BiasRow&) const = default;
};

struct BiasStudyResult {
  std::vector<BiasRow> rows;
  std::vector<ReplicateRecord> replicates;  // ordered by model, size, replicate
  TrueGvimTable truth;
  std::size_t failed = 0;
  std::size_t reused = 0;  // replicates loaded from the cache
};

struct StudyOptions {
  unsigned threads = 1;
  std::optional<std::filesystem::path> cache_dir;
};

// Reduction shared by the study and by report recomputation. Replicates are
// visited in stored order.
inline std::vector<BiasRow> aggregate_bias(const std::vector<ReplicateRecord>& records, const TrueGvimTable& truth,
                                           const std::vector<std::string>& features,
                                           const std::vector<std::string>& models,
                                           const std::vector<std::size_t>& sizes) {
  std::vector<BiasRow> rows;
  for (const auto& feature : features) {
    for (auto size : sizes) {
      for (const auto& model : models) {
        BiasRow row;
        row.feature = feature;
        row.training_size = size;
        row.model = model;
        row.true_gvim = truth.at(feature);
        double sum = 0.0, sum_e = 0.0, sum_se = 0.0;
        bool any_se = false;
        for (const auto& r : records) {
          if (!r.ok || r.model != model || r.size != size) continue;
          ++row.n_replicates;
          sum += detail::lookup(r.estimates, feature);
          sum_e += r.e_orig;
          if (!r.se.empty()) {
            any_se = true;
            sum_se += detail::lookup(r.se, feature);
          }
        }
        if (row.n_replicates > 0) {
          const auto n = static_cast<double>(row.n_replicates);
          row.mean_estimate = sum / n;
          row.e_orig_ratio = sum_e / n / truth.e_orig_true;
          if (any_se) row.mean_se = sum_se / n;
          if (row.true_gvim != 0.0) row.pct_bias = pct_bias(row.mean_estimate, row.true_gvim);
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

namespace detail {

inline void check_failures(const std::vector<ReplicateRecord>& records, double max_fraction) {
  std::map<std::tuple<std::string, std::size_t, std::string>, std::pair<std::size_t, std::size_t>> counts;
  const ReplicateRecord* first_failure = nullptr;
  for (const auto& r : records) {
    auto& c = counts[{r.model, r.size, r.mode}];
    ++c.second;
    if (!r.ok) {
      ++c.first;
      if (!first_failure) first_failure = &r;
    }
  }
  for (const auto& [key, c] : counts) {
    if (static_cast<double>(c.first) > max_fraction * static_cast<double>(c.second)) {
      throw EstimationError("study aborted: " + std::to_string(c.first) + " of " + std::to_string(c.second) +
                            " replicates failed for model '" + std::get<0>(key) + "' at size " +
                            std::to_string(std::get<1>(key)) + " (first error: " + first_failure->error + ")");
    }
  }
}

inline ReplicateRecord failed_record(std::string model, std::size_t size, std::size_t rep, std::string mode,
                                     const std::string& error) {
  ReplicateRecord r;
  r.model = std::move(model);
  r.size = size;
  r.replicate = rep;
  r.mode = std::move(mode);
  r.ok = false;
  r.error = error;
  return r;
}

}  // namespace detail

// Fit on one dataset and evaluate on another (no splitting).
inline EstimationResult estimate_gvim_external(const Dataset& train, const Dataset& valid, const ModelSpec& spec,
                                               std::span<const std::string> features, const RngStream& rng,
                                               const EstimatorOptions& options = {}) {
  const auto train_rows = train.all_rows();
  const auto valid_rows = valid.all_rows();
  const FittedModel model = fit_model(spec, train, train_rows, rng.child(0));
  const ModelPredictor predictor{&model};
  EstimationResult result;
  result.e_orig.push_back(e_orig_hat(predictor, valid, valid_rows));
  const RngStream perm = rng.child(1);
  for (const auto& name : features) {
    const auto j = valid.index_of(name);
    GvimEstimate e;
    e.feature = name;
    if (uses_feature(model, name)) {
      auto s = perm.child(j);
      e.point = switch_loss(predictor, valid, valid_rows, j, s, result.e_orig[0], options.permutation_repetitions).gvim;
    }
    e.per_split.push_back(e.point);
    result.estimates.push_back(std::move(e));
  }
  return result;
}

// Replicate r at training size s draws its data from
// RngStream(seed, kDataStream).child(s).child(r) and its splits and
// permutations from RngStream(seed, kEstimationStream).child(s).child(r); all
// models see the same data and splits.
inline BiasStudyResult run_bias_study(const ExperimentConfig& config, const StudyOptions& options = {}) {
  config.validate();
  if (config.study != ExperimentConfig::Study::Bias) throw ConfigError("not a bias study configuration");
  const bool population = config.validation == ExperimentConfig::Validation::Population;

  std::vector<std::string> features = config.features;
  if (features.empty()) {
    for (const auto& f : friedman_features(config.friedman.n_nuisance)) features.push_back(f.name);
  }
  FriedmanDgpSpec truth_spec = config.friedman;
  truth_spec.seed = RngStream(config.seed, kTruthStream).child(0).next_u64();
  BiasStudyResult result;
  result.truth = true_gvim_table(truth_spec, config.n_pop, features, config.true_gvim_repetitions, options.threads);

  std::optional<Dataset> pop;
  if (population) {
    FriedmanDgpSpec s = config.friedman;
    s.n = config.n_pop;
    pop = gen_friedman(s, RngStream(config.seed, kPopulationStream), options.threads);
  }

  const detail::ReplicateCache cache =
      options.cache_dir ? detail::ReplicateCache(*options.cache_dir / config_fingerprint(config), config.resume)
                        : detail::ReplicateCache();

  struct Task {
    std::size_t model, size, rep;
  };
  std::vector<Task> tasks;
  for (std::size_t m = 0; m < config.models.size(); ++m)
    for (auto size : config.training_sizes)
      for (std::size_t r = 0; r < config.n_replicates; ++r) tasks.push_back({m, size, r});

  std::vector<ReplicateRecord> records(tasks.size());
  std::vector<char> reused(tasks.size(), 0);
  const std::string mode = population ? "population" : "split";
  parallel_for(tasks.size(), options.threads, [&](std::size_t t) {
    const auto& task = tasks[t];
    const auto& model = config.models[task.model];
    const std::string key = model.name + "_" + std::to_string(task.size) + "_" + std::to_string(task.rep);
    if (auto cached = cache.load(key); cached && cached->size() == 1) {
      records[t] = cached->front();
      reused[t] = 1;
      return;
    }
    ReplicateRecord rec;
    rec.model = model.name;
    rec.size = task.size;
    rec.replicate = task.rep;
    rec.mode = mode;
    try {
      FriedmanDgpSpec spec = config.friedman;
      const SplitPlan probe = config.plan_for(task.size);
      spec.n = population ? task.size : probe.dataset_size_for_training(task.size);
      const Dataset data = gen_friedman(spec, RngStream(config.seed, kDataStream).child(task.size).child(task.rep));
      const RngStream est = RngStream(config.seed, kEstimationStream).child(task.size).child(task.rep);
      const SplitPlan plan = config.plan_for(spec.n);
      EstimatorOptions eo;
      eo.permutation_repetitions = config.permutation_repetitions;
      EstimationResult r;
      if (population) {
        r = estimate_gvim_external(data, *pop, model.spec, features, est, eo);
      } else if (config.bootstrap >= 2) {
        r = bootstrap_se(data, model.spec, plan, features, config.bootstrap, est, eo);
      } else {
        r = estimate_gvim(data, model.spec, plan, features, est, eo);
      }
      rec.e_orig = r.mean_e_orig();
      for (const auto& e : r.estimates) {
        rec.estimates.emplace_back(e.feature, e.point);
        if (e.bootstrap_se) rec.se.emplace_back(e.feature, *e.bootstrap_se);
      }
    } catch (const Error& e) {
      rec = detail::failed_record(model.name, task.size, task.rep, mode, e.what());
    }
    records[t] = rec;
    cache.store(key, {rec});
  });

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    result.failed += records[t].ok ? 0 : 1;
    result.reused += static_cast<std::size_t>(reused[t]);
  }
  detail::check_failures(records, config.max_failure_fraction);
  std::vector<std::string> model_names;
  for (const auto& m : config.models) model_names.push_back(m.name);
  result.rows = aggregate_bias(records, result.truth, features, model_names, config.training_sizes);
  result.replicates = std::move(records);
  return result;
}

// ---------------------------------------------------------------------------
// Full-set versus split study

struct FullsetRow {
  std::size_t n_nuisance = 0;
  std::string model;
  std::string mode;  // "full" or "split"
  std::string feature;
  double mean_gvim = 0.0;
  std::size_t n_replicates = 0;

  bool operator==(const FullsetRow&) const = default;
};

struct FullsetStudyResult {
  std::vector<FullsetRow> rows;
  std::vector<ReplicateRecord> replicates;
  std::size_t failed = 0;
  std::size_t reused = 0;
};

inline std::vector<FullsetRow> aggregate_fullset(const std::vector<ReplicateRecord>& records,
                                                 const std::vector<std::size_t>& counts,
                                                 const std::vector<std::string>& models,
                                                 const std::vector<std::string>& features) {
  std::vector<FullsetRow> rows;
  for (auto k : counts) {
    for (const auto& model : models) {
      for (const std::string mode : {"full", "split"}) {
        for (const auto& feature : features) {
          FullsetRow row{k, model, mode, feature};
          double sum = 0.0;
          for (const auto& r : records) {
            if (!r.ok || r.size != k || r.model != model || r.mode != mode) continue;
            ++row.n_replicates;
            sum += detail::lookup(r.estimates, feature);
          }
          if (row.n_replicates > 0) row.mean_gvim = sum / static_cast<double>(row.n_replicates);
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

// Replicate r draws its data from RngStream(seed, kDataStream).child(r) and
// its splits from RngStream(seed, kEstimationStream).child(r) for every
// nuisance count, so the first columns, the response and the splits are
// shared across counts.
inline FullsetStudyResult run_fullset_study(const ExperimentConfig& config, const StudyOptions& options = {}) {
  config.validate();
  if (config.study != ExperimentConfig::Study::Fullset) throw ConfigError("not a full-set study configuration");
  const std::vector<std::string> features =
      config.features.empty() ? std::vector<std::string>{"X1", "X2", "Z1"} : config.features;

  const detail::ReplicateCache cache =
      options.cache_dir ? detail::ReplicateCache(*options.cache_dir / config_fingerprint(config), config.resume)
                        : detail::ReplicateCache();

  struct Task {
    std::size_t k, rep;
  };
  std::vector<Task> tasks;
  for (auto k : config.nuisance_counts)
    for (std::size_t r = 0; r < config.n_replicates; ++r) tasks.push_back({k, r});

  std::vector<std::vector<ReplicateRecord>> per_task(tasks.size());
  std::vector<char> reused(tasks.size(), 0);
  const std::size_t expected = config.models.size() * 2;
  parallel_for(tasks.size(), options.threads, [&](std::size_t t) {
    const auto& task = tasks[t];
    const std::string key = "k" + std::to_string(task.k) + "_" + std::to_string(task.rep);
    if (auto cached = cache.load(key); cached && cached->size() == expected) {
      per_task[t] = std::move(*cached);
      reused[t] = 1;
      return;
    }
    OverfitDgpSpec spec = config.overfit;
    spec.n_nuisance = task.k;
    std::optional<Dataset> data;
    std::string data_error;
    try {
      data = gen_overfit(spec, RngStream(config.seed, kDataStream).child(task.rep));
    } catch (const Error& e) {
      data_error = e.what();
    }
    const RngStream est = RngStream(config.seed, kEstimationStream).child(task.rep);
    EstimatorOptions eo;
    eo.permutation_repetitions = config.permutation_repetitions;
    for (const auto& model : config.models) {
      const ModelSpec ms = model.resolve(task.k);
      for (const std::string mode : {"full", "split"}) {
        if (!data) {
          per_task[t].push_back(detail::failed_record(model.name, task.k, task.rep, mode, data_error));
          continue;
        }
        ReplicateRecord rec;
        rec.model = model.name;
        rec.size = task.k;
        rec.replicate = task.rep;
        rec.mode = mode;
        try {
          const auto r = mode == "full" ? estimate_gvim_fullset(*data, ms, features, est, eo)
                                        : estimate_gvim(*data, ms, config.plan_for(data->rows()), features, est, eo);
          rec.e_orig = r.mean_e_orig();
          for (const auto& e : r.estimates) rec.estimates.emplace_back(e.feature, e.point);
        } catch (const Error& e) {
          rec = detail::failed_record(model.name, task.k, task.rep, mode, e.what());
        }
        per_task[t].push_back(std::move(rec));
      }
    }
    cache.store(key, per_task[t]);
  });

  FullsetStudyResult result;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    result.reused += static_cast<std::size_t>(reused[t]);
    for (auto& r : per_task[t]) {
      result.failed += r.ok ? 0 : 1;
      result.replicates.push_back(std::move(r));
    }
  }
  detail::check_failures(result.replicates, config.max_failure_fraction);
  std::vector<std::string> model_names;
  for (const auto& m : config.models) model_names.push_back(m.name);
  result.rows = aggregate_fullset(result.replicates, config.nuisance_counts, model_names, features);
  return result;
}

// ---------------------------------------------------------------------------
// Report emission

enum class ReportFormat { Csv, Text };

namespace detail {

inline std::string opt_double(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline std::optional<double> parse_opt_double(const std::string& s, const std::string& where) {
  if (s == "NA") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": bad number '" + s + "'");
  }
}

inline std::vector<std::string> report_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Rows of a headered CSV file, checking the header and field count.
inline std::vector<std::vector<std::string>> read_table(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != header) throw ParseError(path.string() + ":1: unexpected header");
  const auto width = report_fields(header).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = report_fields(line);
    if (fields.size() != width) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                       " fields, found " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::size_t parse_count(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError(where + ": bad count '" + s + "'");
  }
}

}  // namespace detail

inline constexpr const char* kBiasHeader =
    "feature,training_size,model,true_gvim,mean_estimate,pct_bias,e_orig_ratio,n_replicates,mean_se";
inline constexpr const char* kReplicateHeader = "replicate,feature,size,model,estimate,se";
inline constexpr const char* kReplicateLossHeader = "replicate,size,model,mode,status,e_orig,error";
inline constexpr const char* kFullsetHeader = "n_nuisance,model,mode,feature,mean_gvim,n_replicates";
inline constexpr const char* kFullsetReplicateHeader = "replicate,n_nuisance,model,mode,feature,estimate";

inline void write_bias_table(const std::vector<BiasRow>& rows, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::Csv) {
    out << kBiasHeader << '\n';
    for (const auto& r : rows) {
      out << r.feature << ',' << r.training_size << ',' << r.model << ',' << format_double(r.true_gvim) << ','
          << format_double(r.mean_estimate) << ',' << detail::opt_double(r.pct_bias) << ','
          << format_double(r.e_orig_ratio) << ',' << r.n_replicates << ',' << detail::opt_double(r.mean_se) << '\n';
    }
    return;
  }
  auto fixed = [](double v, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
  };
  out << std::left << std::setw(10) << "feature" << std::right << std::setw(8) << "size" << "  " << std::left
      << std::setw(12) << "model" << std::right << std::setw(10) << "true" << std::setw(12) << "estimate"
      << std::setw(10) << "%bias" << std::setw(10) << "e_ratio" << std::setw(6) << "reps" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.feature << std::right << std::setw(8) << r.training_size << "  "
        << std::left << std::setw(12) << r.model << std::right << std::setw(10) << fixed(r.true_gvim, 3)
        << std::setw(12) << fixed(r.mean_estimate, 3) << std::setw(10)
        << (r.pct_bias ? fixed(*r.pct_bias, 2) : std::string("NA")) << std::setw(10) << fixed(r.e_orig_ratio, 3)
        << std::setw(6) << r.n_replicates << '\n';
  }
}

inline std::vector<BiasRow> read_bias_table(const std::filesystem::path& path) {
  std::vector<BiasRow> rows;
  for (const auto& f : detail::read_table(path, kBiasHeader)) {
    const std::string where = path.string();
    BiasRow r;
    r.feature = f[0];
    r.training_size = detail::parse_count(f[1], where);
    r.model = f[2];
    r.true_gvim = detail::parse_opt_double(f[3], where).value_or(0.0);
    r.mean_estimate = detail::parse_opt_double(f[4], where).value_or(0.0);
    r.pct_bias = detail::parse_opt_double(f[5], where);
    r.e_orig_ratio = detail::parse_opt_double(f[6], where).value_or(0.0);
    r.n_replicates = detail::parse_count(f[7], where);
    r.mean_se = detail::parse_opt_double(f[8], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Writes bias_table.csv, bias_table.txt, replicates.csv (long format, one
// row per replicate and feature), replicate_losses.csv and true_gvim.csv.
inline void emit_bias_report(const BiasStudyResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto format : {ReportFormat::Csv, ReportFormat::Text}) {
    const auto path = dir / (format == ReportFormat::Csv ? "bias_table.csv" : "bias_table.txt");
    auto out = detail::open_out(path);
    write_bias_table(result.rows, format, out);
    detail::close_out(out, path);
  }
  {
    const auto path = dir / "replicates.csv";
    auto out = detail::open_out(path);
    out << kReplicateHeader << '\n';
    for (const auto& r : result.replicates) {
      if (!r.ok) continue;
      for (const auto& [feature, value] : r.estimates) {
        out << r.replicate << ',' << feature << ',' << r.size << ',' << r.model << ',' << format_double(value) << ','
            << (r.se.empty() ? std::string("NA") : format_double(detail::lookup(r.se, feature))) << '\n';
      }
    }
    detail::close_out(out, path);
  }
  {
    const auto path = dir / "replicate_losses.csv";
    auto out = detail::open_out(path);
    out << kReplicateLossHeader << '\n';
    for (const auto& r : result.replicates) {
      std::string err = r.error;
      std::replace_if(err.begin(), err.end(), [](char c) { return c == ',' || c == '\n'; }, ';');
      out << r.replicate << ',' << r.size << ',' << r.model << ',' << r.mode << ',' << (r.ok ? "ok" : "failed")
          << ',' << (r.ok ? format_double(r.e_orig) : std::string("NA")) << ',' << err << '\n';
    }
    detail::close_out(out, path);
  }
  TrueGvimTable truth = result.truth;
  write_true_gvim_csv(truth, dir / "true_gvim.csv");
  {
    const auto path = dir / "true_e_orig.txt";
    auto out = detail::open_out(path);
    out << format_double(truth.e_orig_true) << '\n';
    detail::close_out(out, path);
  }
}

// Rebuilds the bias table from the persisted per-replicate files.
inline std::vector<BiasRow> recompute_bias_report(const std::filesystem::path& dir) {
  TrueGvimTable truth = read_true_gvim_csv(dir / "true_gvim.csv");
  {
    std::ifstream in(dir / "true_e_orig.txt");
    std::string s;
    if (!in || !std::getline(in, s)) throw IoError("cannot read '" + (dir / "true_e_orig.txt").string() + "'");
    truth.e_orig_true = detail::parse_opt_double(s, (dir / "true_e_orig.txt").string()).value_or(0.0);
  }
  // Record order, sizes and models follow first appearance in the loss file,
  // which is the order the study wrote them in.
  std::vector<ReplicateRecord> records;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::size_t> index;
  std::vector<std::string> models;
  std::vector<std::size_t> sizes;
  const std::string losses = (dir / "replicate_losses.csv").string();
  for (const auto& f : detail::read_table(dir / "replicate_losses.csv", kReplicateLossHeader)) {
    ReplicateRecord r;
    r.replicate = detail::parse_count(f[0], losses);
    r.size = detail::parse_count(f[1], losses);
    r.model = f[2];
    r.mode = f[3];
    r.ok = f[4] == "ok";
    r.e_orig = detail::parse_opt_double(f[5], losses).value_or(0.0);
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(sizes.begin(), sizes.end(), r.size) == sizes.end()) sizes.push_back(r.size);
    index[{r.model, r.size, r.replicate}] = records.size();
    records.push_back(std::move(r));
  }
  std::vector<std::string> features;
  const std::string reps = (dir / "replicates.csv").string();
  for (const auto& f : detail::read_table(dir / "replicates.csv", kReplicateHeader)) {
    const auto key = std::tuple{f[3], detail::parse_count(f[2], reps), detail::parse_count(f[0], reps)};
    const auto it = index.find(key);
    if (it == index.end()) throw ParseError(reps + ": replicate without a loss record");
    auto& r = records[it->second];
    r.estimates.emplace_back(f[1], detail::parse_opt_double(f[4], reps).value_or(0.0));
    if (const auto se = detail::parse_opt_double(f[5], reps)) r.se.emplace_back(f[1], *se);
    if (std::find(features.begin(), features.end(), f[1]) == features.end()) features.push_back(f[1]);
  }
  return aggregate_bias(records, truth, features, models, sizes);
}

inline void write_fullset_table(const std::vector<FullsetRow>& rows, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::Csv) {
    out << kFullsetHeader << '\n';
    for (const auto& r : rows) {
      out << r.n_nuisance << ',' << r.model << ',' << r.mode << ',' << r.feature << ',' << format_double(r.mean_gvim)
          << ',' << r.n_replicates << '\n';
    }
    return;
  }
  out << std::right << std::setw(10) << "nuisance" << "  " << std::left << std::setw(12) << "model" << std::setw(7)
      << "mode" << std::setw(9) << "feature" << std::right << std::setw(12) << "mean_gvim" << std::setw(6) << "reps"
      << '\n';
  for (const auto& r : rows) {
    std::ostringstream v;
    v << std::fixed << std::setprecision(4) << r.mean_gvim;
    out << std::right << std::setw(10) << r.n_nuisance << "  " << std::left << std::setw(12) << r.model
        << std::setw(7) << r.mode << std::setw(9) << r.feature << std::right << std::setw(12) << v.str()
        << std::setw(6) << r.n_replicates << '\n';
  }
}

// Writes fullset_table.csv, fullset_table.txt and fullset_replicates.csv.
inline void emit_fullset_report(const FullsetStudyResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto format : {ReportFormat::Csv, ReportFormat::Text}) {
    const auto path = dir / (format == ReportFormat::Csv ? "fullset_table.csv" : "fullset_table.txt");
    auto out = detail::open_out(path);
    write_fullset_table(result.rows, format, out);
    detail::close_out(out, path);
  }
  const auto path = dir / "fullset_replicates.csv";
  auto out = detail::open_out(path);
  out << kFullsetReplicateHeader << '\n';
  for (const auto& r : result.replicates) {
    if (!r.ok) continue;
    for (const auto& [feature, value] : r.estimates) {
      out << r.replicate << ',' << r.size << ',' << r.model << ',' << r.mode << ',' << feature << ','
          << format_double(value) << '\n';
    }
  }
  detail::close_out(out, path);
}

}  // namespace gvim

#pragma once

// One fit/predict contract over the three learner families.

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gvim/dataset.hpp"
#include "gvim/error.hpp"
#include "gvim/learners/gbt.hpp"
#include "gvim/learners/linear.hpp"
#include "gvim/learners/spline.hpp"
#include "gvim/rng.hpp"

namespace gvim {

enum class ModelKind { Linear, SplineAdditive, Gbt };

struct ModelSpec {
  ModelKind kind = ModelKind::Linear;
  std::string name = "linear";  // label used in reports

  std::vector<Term> terms;  // Linear
  LinearFitOptions linear;

  SplineOptions spline;
  // Spline and GBT: features to use; empty means every feature in the data.
  std::vector<std::string> features;

  std::optional<GbtHyper> gbt_hyper;  // fixed hyperparameters, else the schedule
  GbtSchedule gbt_schedule = GbtSchedule::standard();

  static ModelSpec linear_terms(std::string name, std::vector<Term> terms) {
    ModelSpec s;
    s.kind = ModelKind::Linear;
    s.name = std::move(name);
    s.terms = std::move(terms);
    return s;
  }
  static ModelSpec spline_additive(std::string name, SplineOptions options = {}) {
    ModelSpec s;
    s.kind = ModelKind::SplineAdditive;
    s.name = std::move(name);
    s.spline = options;
    return s;
  }
  static ModelSpec gbt(std::string name, std::optional<GbtHyper> hyper = std::nullopt,
                       GbtSchedule schedule = GbtSchedule::standard()) {
    ModelSpec s;
    s.kind = ModelKind::Gbt;
    s.name = std::move(name);
    s.gbt_hyper = hyper;
    s.gbt_schedule = std::move(schedule);
    return s;
  }

  GbtHyper gbt_for_size(std::size_t n_train) const {
    return gbt_hyper ? *gbt_hyper : gbt_schedule.for_size(n_train);
  }
};

using FittedModel = std::variant<LinearTermModel, SplineAdditiveModel, GbtModel>;

inline FittedModel fit_model(const ModelSpec& spec, const Dataset& data, std::span<const std::size_t> rows,
                             const RngStream& rng = {}) {
  const Dataset& input = data;
  std::optional<Dataset> subset;
  if (!spec.features.empty() && spec.kind != ModelKind::Linear) subset = data.select_features(spec.features);
  const Dataset& d = subset ? *subset : input;
  switch (spec.kind) {
    case ModelKind::Linear: return fit_linear(d, rows, spec.terms, spec.linear);
    case ModelKind::SplineAdditive: return fit_spline_additive(d, rows, spec.spline);
    case ModelKind::Gbt: return fit_gbt(d, rows, spec.gbt_for_size(rows.size()), rng);
  }
  throw ConfigError("unknown model kind");
}

inline std::vector<double> predict(const FittedModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<double> out = std::visit([&](const auto& m) { return m.predict(data, rows); }, model);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw NumericError("non-finite prediction at row " + std::to_string(rows[i]));
  }
  return out;
}

inline bool uses_feature(const FittedModel& model, const std::string& name) {
  return std::visit([&](const auto& m) { return m.uses_feature(name); }, model);
}

// Predictor adaptor for the metrics functions.
struct ModelPredictor {
  const FittedModel* model;
  std::vector<double> operator()(const Dataset& data, std::span<const std::size_t> rows) const {
    return predict(*model, data, rows);
  }
};

inline nlohmann::json model_to_json(const FittedModel& model) {
  return std::visit([](const auto& m) { return to_json(m); }, model);
}

inline FittedModel model_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "linear") return linear_model_from_json(j);
    if (type == "spline_additive") return spline_model_from_json(j);
    if (type == "gbt") return gbt_model_from_json(j);
    throw ParseError("unknown model type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
}

}  // namespace gvim

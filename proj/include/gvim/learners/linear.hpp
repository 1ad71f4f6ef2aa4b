#pragma once

// Least-squares regression on a list of transformed terms. Used for the
// correctly specified ("oracle") models, where the terms reproduce the true
// functional form, and for plain linear / quadratic fits.

#include <cmath>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gvim/dataset.hpp"
#include "gvim/error.hpp"

namespace gvim {

struct Term {
  enum class Kind { Identity, Power, LogAbsProduct, SinPiProduct, Indicator, Interaction };

  Kind kind = Kind::Identity;
  std::string feature;    // first (or only) feature
  std::string feature_b;  // second feature of a product term
  double exponent = 1.0;  // Power: (x - offset)^exponent
  double offset = 0.0;
  int level = 0;          // Indicator: 1{x == level}
  std::vector<Term> factors;  // Interaction: product of two terms

  static Term make(Kind kind, std::string f = {}) {
    Term t;
    t.kind = kind;
    t.feature = std::move(f);
    return t;
  }
  static Term identity(std::string f) { return make(Kind::Identity, std::move(f)); }
  static Term power(std::string f, double exponent, double offset = 0.0) {
    Term t = make(Kind::Power, std::move(f));
    t.exponent = exponent;
    t.offset = offset;
    return t;
  }
  // log|a * b|
  static Term log_abs_product(std::string a, std::string b) {
    Term t = make(Kind::LogAbsProduct, std::move(a));
    t.feature_b = std::move(b);
    return t;
  }
  // sin(pi * a * b)
  static Term sin_pi_product(std::string a, std::string b) {
    Term t = make(Kind::SinPiProduct, std::move(a));
    t.feature_b = std::move(b);
    return t;
  }
  static Term indicator(std::string f, int level) {
    Term t = make(Kind::Indicator, std::move(f));
    t.level = level;
    return t;
  }
  static Term interaction(Term a, Term b) {
    Term t = make(Kind::Interaction);
    t.factors = {std::move(a), std::move(b)};
    return t;
  }

  void collect_features(std::set<std::string>& out) const {
    if (kind == Kind::Interaction) {
      for (const auto& f : factors) f.collect_features(out);
      return;
    }
    out.insert(feature);
    if (kind == Kind::LogAbsProduct || kind == Kind::SinPiProduct) out.insert(feature_b);
  }

  std::string describe() const {
    switch (kind) {
      case Kind::Identity: return feature;
      case Kind::Power: return "(" + feature + "-" + std::to_string(offset) + ")^" + std::to_string(exponent);
      case Kind::LogAbsProduct: return "log|" + feature + "*" + feature_b + "|";
      case Kind::SinPiProduct: return "sin(pi*" + feature + "*" + feature_b + ")";
      case Kind::Indicator: return "1{" + feature + "==" + std::to_string(level) + "}";
      case Kind::Interaction: return factors.at(0).describe() + ":" + factors.at(1).describe();
    }
    return {};
  }

  bool operator==(const Term&) const = default;
};

namespace detail {

inline std::size_t term_column(const Term& t, const std::string& name, const Dataset& data) {
  const auto j = data.find(name);
  if (!j) throw SchemaError("term " + t.describe() + " references missing feature '" + name + "'");
  return *j;
}

inline void validate_term(const Term& t, const Dataset& data) {
  if (t.kind == Term::Kind::Interaction) {
    if (t.factors.size() != 2) throw ConfigError("interaction term needs exactly two factors");
    for (const auto& f : t.factors) validate_term(f, data);
    return;
  }
  const auto j = term_column(t, t.feature, data);
  if (t.kind == Term::Kind::Indicator) {
    const auto& meta = data.feature(j);
    if (!meta.is_categorical()) throw SchemaError("indicator term on non-categorical feature '" + t.feature + "'");
    if (t.level < 1 || t.level > meta.levels) throw SchemaError("indicator level out of range for '" + t.feature + "'");
  }
  if (t.kind == Term::Kind::LogAbsProduct || t.kind == Term::Kind::SinPiProduct) {
    term_column(t, t.feature_b, data);
  }
}

}  // namespace detail

// Term values on `rows`.
inline std::vector<double> evaluate_term(const Term& t, const Dataset& data,
                                         std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  if (t.kind == Term::Kind::Interaction) {
    if (t.factors.size() != 2) throw ConfigError("interaction term needs exactly two factors");
    const auto a = evaluate_term(t.factors[0], data, rows);
    const auto b = evaluate_term(t.factors[1], data, rows);
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = a[i] * b[i];
    return out;
  }
  const auto x = data.column(detail::term_column(t, t.feature, data));
  switch (t.kind) {
    case Term::Kind::Identity:
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] = x[rows[i]];
      break;
    case Term::Kind::Power:
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] = std::pow(x[rows[i]] - t.offset, t.exponent);
      break;
    case Term::Kind::LogAbsProduct: {
      const auto b = data.column(detail::term_column(t, t.feature_b, data));
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] = std::log(std::abs(x[rows[i]] * b[rows[i]]));
      break;
    }
    case Term::Kind::SinPiProduct: {
      const auto b = data.column(detail::term_column(t, t.feature_b, data));
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] = std::sin(std::numbers::pi * x[rows[i]] * b[rows[i]]);
      break;
    }
    case Term::Kind::Indicator:
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] = x[rows[i]] == t.level ? 1.0 : 0.0;
      break;
    case Term::Kind::Interaction:
      break;
  }
  return out;
}

// Design matrix with a leading intercept column.
inline Eigen::MatrixXd design_matrix(std::span<const Term> terms, const Dataset& data,
                                     std::span<const std::size_t> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(terms.size() + 1));
  x.col(0).setOnes();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto v = evaluate_term(terms[k], data, rows);
    for (std::size_t i = 0; i < rows.size(); ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + 1)) = v[i];
  }
  return x;
}

struct LinearTermModel {
  std::vector<Term> terms;
  std::vector<double> coefficients;  // intercept first; size == terms.size() + 1

  std::vector<double> predict(const Dataset& data, std::span<const std::size_t> rows) const {
    if (coefficients.size() != terms.size() + 1) throw SchemaError("coefficient count does not match terms");
    for (const auto& t : terms) detail::validate_term(t, data);
    std::vector<double> out(rows.size(), coefficients[0]);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const auto v = evaluate_term(terms[k], data, rows);
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] += coefficients[k + 1] * v[i];
    }
    return out;
  }

  bool uses_feature(const std::string& name) const {
    std::set<std::string> used;
    for (const auto& t : terms) t.collect_features(used);
    return used.contains(name);
  }
};

struct LinearFitOptions {
  bool ridge_fallback = true;
  double ridge_lambda = 1e-8;
};

inline LinearTermModel fit_linear(const Dataset& data, std::span<const std::size_t> rows,
                                  std::vector<Term> terms, const LinearFitOptions& options = {}) {
  for (const auto& t : terms) detail::validate_term(t, data);
  if (rows.empty()) throw SingularDesign("no training rows");
  const Eigen::MatrixXd x = design_matrix(terms, data, rows);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  const auto resp = data.response();
  for (std::size_t i = 0; i < rows.size(); ++i) y(static_cast<Eigen::Index>(i)) = resp[rows[i]];
  if (!x.allFinite()) throw NumericError("design matrix contains non-finite values");

  Eigen::VectorXd beta;
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == x.cols()) {
    beta = qr.solve(y);
  } else {
    if (!options.ridge_fallback) {
      throw SingularDesign("design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(x.cols()) + " columns");
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += options.ridge_lambda;
    beta = gram.ldlt().solve(x.transpose() * y);
  }
  if (!beta.allFinite()) throw SingularDesign("least-squares solution is not finite");

  LinearTermModel model;
  model.terms = std::move(terms);
  model.coefficients.assign(beta.data(), beta.data() + beta.size());
  return model;
}

// JSON: {"kind": "power", "feature": "X4", "exponent": 3, "offset": 0.5}, ...
inline nlohmann::json term_to_json(const Term& t) {
  nlohmann::json j;
  switch (t.kind) {
    case Term::Kind::Identity: j["kind"] = "identity"; j["feature"] = t.feature; break;
    case Term::Kind::Power:
      j["kind"] = "power"; j["feature"] = t.feature; j["exponent"] = t.exponent; j["offset"] = t.offset;
      break;
    case Term::Kind::LogAbsProduct: j["kind"] = "log_abs_product"; j["features"] = {t.feature, t.feature_b}; break;
    case Term::Kind::SinPiProduct: j["kind"] = "sin_pi_product"; j["features"] = {t.feature, t.feature_b}; break;
    case Term::Kind::Indicator: j["kind"] = "indicator"; j["feature"] = t.feature; j["level"] = t.level; break;
    case Term::Kind::Interaction:
      j["kind"] = "interaction";
      j["factors"] = {term_to_json(t.factors.at(0)), term_to_json(t.factors.at(1))};
      break;
  }
  return j;
}

inline Term term_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "identity") return Term::identity(j.at("feature"));
  if (kind == "power") return Term::power(j.at("feature"), j.at("exponent"), j.value("offset", 0.0));
  if (kind == "log_abs_product") return Term::log_abs_product(j.at("features").at(0), j.at("features").at(1));
  if (kind == "sin_pi_product") return Term::sin_pi_product(j.at("features").at(0), j.at("features").at(1));
  if (kind == "indicator") return Term::indicator(j.at("feature"), j.at("level"));
  if (kind == "interaction") {
    return Term::interaction(term_from_json(j.at("factors").at(0)), term_from_json(j.at("factors").at(1)));
  }
  throw ConfigError("unknown term kind '" + kind + "'");
}

inline nlohmann::json to_json(const LinearTermModel& m) {
  nlohmann::json j;
  j["type"] = "linear";
  j["terms"] = nlohmann::json::array();
  for (const auto& t : m.terms) j["terms"].push_back(term_to_json(t));
  j["coefficients"] = m.coefficients;
  return j;
}

inline LinearTermModel linear_model_from_json(const nlohmann::json& j) {
  LinearTermModel m;
  for (const auto& t : j.at("terms")) m.terms.push_back(term_from_json(t));
  m.coefficients = j.at("coefficients").get<std::vector<double>>();
  if (m.coefficients.size() != m.terms.size() + 1) throw ParseError("linear model: coefficient count mismatch");
  return m;
}

}  // namespace gvim

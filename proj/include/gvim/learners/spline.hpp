#pragma once

// Additive model with one natural cubic regression spline per continuous
// feature and level effects for categorical features. No interactions.
//
// Each continuous feature is rescaled so its boundary knots sit at 0 and 1,
// and expanded in the truncated-power natural spline basis
//   t,  d_k(t) - d_{K-1}(t)  (k = 1..K-2),
//   d_k(t) = ((t - tau_k)^3_+ - (t - tau_K)^3_+) / (tau_K - tau_k),
// which is C2, cubic between knots and linear outside [tau_1, tau_K].
// Basis columns are centred on the training mean so that the intercept is
// the only constant. Coefficients minimise
//   ||y - B beta||^2 + lambda * sum_f int (f_f'')^2,
// with lambda picked by generalized cross-validation on a fixed grid.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gvim/dataset.hpp"
#include "gvim/error.hpp"

namespace gvim {

struct SplineTerm {
  std::string feature;
  std::vector<double> knots;    // original scale, strictly increasing
  std::vector<double> centers;  // training mean of each basis column
  std::vector<double> coefficients;

  std::size_t basis_size() const { return knots.size() - 1; }

  // Uncentred basis row for a raw feature value.
  void basis(double x, std::span<double> out) const {
    const double lo = knots.front();
    const double width = knots.back() - lo;
    const std::size_t k_count = knots.size();
    const double t = (x - lo) / width;
    auto tau = [&](std::size_t k) { return (knots[k] - lo) / width; };
    auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    const double tail = cube_plus(t - 1.0);
    auto d = [&](std::size_t k) { return (cube_plus(t - tau(k)) - tail) / (1.0 - tau(k)); };
    out[0] = t;
    const double last = d(k_count - 2);
    for (std::size_t k = 0; k + 2 < k_count; ++k) out[k + 1] = d(k) - last;
  }

  double evaluate(double x) const {
    std::vector<double> b(basis_size());
    basis(x, b);
    double s = 0.0;
    for (std::size_t c = 0; c < b.size(); ++c) s += coefficients[c] * (b[c] - centers[c]);
    return s;
  }
};

struct CategoricalTerm {
  std::string feature;
  std::vector<double> effects;  // effect of level k at index k-1; level 1 is the reference (0)
};

struct SplineAdditiveModel {
  double intercept = 0.0;
  std::vector<SplineTerm> splines;
  std::vector<CategoricalTerm> categoricals;
  double lambda = 0.0;
  double effective_df = 0.0;

  std::vector<double> predict(const Dataset& data, std::span<const std::size_t> rows) const {
    std::vector<double> out(rows.size(), intercept);
    for (const auto& s : splines) {
      const auto j = data.find(s.feature);
      if (!j || data.feature(*j).is_categorical()) throw SchemaError("spline model needs continuous feature '" + s.feature + "'");
      const auto x = data.column(*j);
      std::vector<double> b(s.basis_size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        s.basis(x[rows[i]], b);
        double v = 0.0;
        for (std::size_t c = 0; c < b.size(); ++c) v += s.coefficients[c] * (b[c] - s.centers[c]);
        out[i] += v;
      }
    }
    for (const auto& c : categoricals) {
      const auto j = data.find(c.feature);
      if (!j || !data.feature(*j).is_categorical() ||
          data.feature(*j).levels != static_cast<int>(c.effects.size())) {
        throw SchemaError("spline model needs categorical feature '" + c.feature + "' with " +
                          std::to_string(c.effects.size()) + " levels");
      }
      const auto x = data.column(*j);
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] += c.effects[static_cast<std::size_t>(x[rows[i]]) - 1];
    }
    return out;
  }

  bool uses_feature(const std::string& name) const {
    for (const auto& s : splines) if (s.feature == name) return true;
    for (const auto& c : categoricals) if (c.feature == name) return true;
    return false;
  }
};

struct SplineOptions {
  int interior_knots = 10;
  int lambda_grid_points = 10;
  double lambda_min_exponent = -8.0;  // grid spans 10^min .. 10^max, times tr(B'B)/tr(S)
  double lambda_max_exponent = 1.0;
};

namespace detail {

// Knots at training quantiles (linear interpolation between order statistics).
// Falls back to quantiles of the distinct values when ties collapse knots.
inline std::vector<double> quantile_knots(std::vector<double> values, int interior) {
  std::sort(values.begin(), values.end());
  auto quantiles = [interior](const std::vector<double>& v) {
    std::vector<double> q;
    const int count = interior + 2;
    for (int i = 0; i < count; ++i) {
      const double pos = static_cast<double>(i) / (count - 1) * static_cast<double>(v.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, v.size() - 1);
      q.push_back(v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]));
    }
    return q;
  };
  auto strictly_increasing = [](const std::vector<double>& q) {
    return std::adjacent_find(q.begin(), q.end(), [](double a, double b) { return !(a < b); }) == q.end();
  };
  auto knots = quantiles(values);
  if (strictly_increasing(knots)) return knots;
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return quantiles(values);
}

// Penalty block int_0^1 N_a''(t) N_b''(t) dt in the scaled coordinate.
// Second derivatives are piecewise linear, so Simpson's rule per knot
// interval is exact.
inline Eigen::MatrixXd spline_penalty(const SplineTerm& term) {
  const std::size_t p = term.basis_size();
  const double lo = term.knots.front();
  const double width = term.knots.back() - lo;
  std::vector<double> tau(term.knots.size());
  for (std::size_t k = 0; k < tau.size(); ++k) tau[k] = (term.knots[k] - lo) / width;
  const std::size_t k_count = tau.size();

  auto second = [&](double t, std::vector<double>& out) {
    auto dd = [&](std::size_t k) { return 6.0 * std::max(0.0, t - tau[k]) / (1.0 - tau[k]); };
    out[0] = 0.0;
    const double last = dd(k_count - 2);
    for (std::size_t k = 0; k + 2 < k_count; ++k) out[k + 1] = dd(k) - last;
  };

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  std::vector<double> f0(p), fm(p), f1(p);
  for (std::size_t k = 0; k + 1 < k_count; ++k) {
    const double a = tau[k], b = tau[k + 1];
    second(a, f0);
    second(0.5 * (a + b), fm);
    second(b, f1);
    const double h = (b - a) / 6.0;
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < p; ++c) {
        s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) +=
            h * (f0[r] * f0[c] + 4.0 * fm[r] * fm[c] + f1[r] * f1[c]);
      }
    }
  }
  return s;
}

}  // namespace detail

inline SplineAdditiveModel fit_spline_additive(const Dataset& data, std::span<const std::size_t> rows,
                                               const SplineOptions& options = {}) {
  if (options.interior_knots < 1) throw ConfigError("spline needs at least one interior knot");
  if (options.lambda_grid_points < 1) throw ConfigError("lambda grid must not be empty");
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 2) throw SplineError("too few training rows");

  SplineAdditiveModel model;
  Eigen::Index p = 1;  // intercept
  for (std::size_t j = 0; j < data.num_features(); ++j) {
    const auto& meta = data.feature(j);
    const auto col = data.column(j);
    if (meta.is_categorical()) {
      CategoricalTerm c{meta.name, std::vector<double>(static_cast<std::size_t>(meta.levels), 0.0)};
      model.categoricals.push_back(std::move(c));
      p += meta.levels - 1;
      continue;
    }
    std::vector<double> values;
    values.reserve(rows.size());
    for (auto r : rows) values.push_back(col[r]);
    std::vector<double> distinct = values;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < static_cast<std::size_t>(options.interior_knots + 4)) {
      throw SplineError("feature '" + meta.name + "' has " + std::to_string(distinct.size()) +
                        " distinct training values; need at least " + std::to_string(options.interior_knots + 4));
    }
    SplineTerm s;
    s.feature = meta.name;
    s.knots = detail::quantile_knots(std::move(values), options.interior_knots);
    model.splines.push_back(std::move(s));
    p += static_cast<Eigen::Index>(model.splines.back().basis_size());
  }

  // Design matrix and penalty.
  Eigen::MatrixXd b(n, p);
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Zero(p, p);
  b.col(0).setOnes();
  Eigen::Index col = 1;
  for (auto& s : model.splines) {
    const auto x = data.column(s.feature);
    const auto width = static_cast<Eigen::Index>(s.basis_size());
    std::vector<double> row(s.basis_size());
    for (Eigen::Index i = 0; i < n; ++i) {
      s.basis(x[rows[static_cast<std::size_t>(i)]], row);
      for (Eigen::Index c = 0; c < width; ++c) b(i, col + c) = row[static_cast<std::size_t>(c)];
    }
    s.centers.resize(s.basis_size());
    for (Eigen::Index c = 0; c < width; ++c) {
      const double mean = b.col(col + c).mean();
      s.centers[static_cast<std::size_t>(c)] = mean;
      b.col(col + c).array() -= mean;
    }
    penalty.block(col, col, width, width) = detail::spline_penalty(s);
    col += width;
  }
  for (const auto& c : model.categoricals) {
    const auto x = data.column(c.feature);
    for (std::size_t level = 2; level <= c.effects.size(); ++level) {
      for (Eigen::Index i = 0; i < n; ++i) {
        b(i, col) = x[rows[static_cast<std::size_t>(i)]] == static_cast<double>(level) ? 1.0 : 0.0;
      }
      ++col;
    }
  }

  Eigen::VectorXd y(n);
  const auto resp = data.response();
  for (Eigen::Index i = 0; i < n; ++i) y(i) = resp[rows[static_cast<std::size_t>(i)]];

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(b.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  const Eigen::VectorXd by = b.transpose() * y;
  const double yy = y.squaredNorm();

  // B'B = L L' (jittered when rank deficient); diagonalise L^-1 S L^-T.
  const double diag_scale = std::max(gram.diagonal().maxCoeff(), 1.0);
  double jitter = 1e-12 * diag_scale;
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd g = gram;
    g.diagonal().array() += jitter;
    llt.compute(g);
    if (llt.info() == Eigen::Success) break;
    jitter *= 100.0;
  }
  if (llt.info() != Eigen::Success) throw SplineError("normal equations are not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  Eigen::MatrixXd m = l.triangularView<Eigen::Lower>().solve(penalty);
  m = l.triangularView<Eigen::Lower>().solve(m.transpose()).transpose();
  m = 0.5 * (m + m.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw SplineError("eigen decomposition failed");
  const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd& u = eig.eigenvectors();
  const Eigen::VectorXd c = u.transpose() * l.triangularView<Eigen::Lower>().solve(by);

  const double trace_s = penalty.trace();
  const double scale = trace_s > 0.0 ? gram.trace() / trace_s : 1.0;
  const double nn = static_cast<double>(n);
  double best_gcv = std::numeric_limits<double>::infinity();
  double best_lambda = 0.0;
  double best_edf = 0.0;
  for (int g = 0; g < options.lambda_grid_points; ++g) {
    const double frac = options.lambda_grid_points == 1 ? 0.0 : static_cast<double>(g) / (options.lambda_grid_points - 1);
    const double exponent = options.lambda_min_exponent + frac * (options.lambda_max_exponent - options.lambda_min_exponent);
    const double lambda = scale * std::pow(10.0, exponent);
    double edf = 0.0, wc = 0.0, ww = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double shrink = 1.0 / (1.0 + lambda * d(i));
      const double w = shrink * c(i);
      edf += shrink;
      wc += w * c(i);
      ww += w * w;
    }
    const double rss = std::max(0.0, yy - 2.0 * wc + ww);
    const double denom = std::max(nn - edf, 1e-8 * nn);
    const double gcv = nn * rss / (denom * denom);
    if (gcv < best_gcv) {
      best_gcv = gcv;
      best_lambda = lambda;
      best_edf = edf;
    }
  }

  Eigen::VectorXd w(p);
  for (Eigen::Index i = 0; i < p; ++i) w(i) = c(i) / (1.0 + best_lambda * d(i));
  const Eigen::VectorXd beta = l.transpose().triangularView<Eigen::Upper>().solve(u * w);
  if (!beta.allFinite()) throw SplineError("spline coefficients are not finite");

  model.lambda = best_lambda;
  model.effective_df = best_edf;
  model.intercept = beta(0);
  col = 1;
  for (auto& s : model.splines) {
    s.coefficients.resize(s.basis_size());
    for (auto& coef : s.coefficients) coef = beta(col++);
  }
  for (auto& cat : model.categoricals) {
    for (std::size_t level = 2; level <= cat.effects.size(); ++level) cat.effects[level - 1] = beta(col++);
  }
  return model;
}

inline nlohmann::json to_json(const SplineAdditiveModel& m) {
  nlohmann::json j;
  j["type"] = "spline_additive";
  j["intercept"] = m.intercept;
  j["lambda"] = m.lambda;
  j["effective_df"] = m.effective_df;
  j["splines"] = nlohmann::json::array();
  for (const auto& s : m.splines) {
    j["splines"].push_back({{"feature", s.feature}, {"knots", s.knots}, {"centers", s.centers},
                            {"coefficients", s.coefficients}});
  }
  j["categoricals"] = nlohmann::json::array();
  for (const auto& c : m.categoricals) j["categoricals"].push_back({{"feature", c.feature}, {"effects", c.effects}});
  return j;
}

inline SplineAdditiveModel spline_model_from_json(const nlohmann::json& j) {
  SplineAdditiveModel m;
  m.intercept = j.at("intercept");
  m.lambda = j.value("lambda", 0.0);
  m.effective_df = j.value("effective_df", 0.0);
  for (const auto& s : j.at("splines")) {
    SplineTerm t;
    t.feature = s.at("feature");
    t.knots = s.at("knots").get<std::vector<double>>();
    t.centers = s.at("centers").get<std::vector<double>>();
    t.coefficients = s.at("coefficients").get<std::vector<double>>();
    if (t.knots.size() < 3 || t.centers.size() != t.basis_size() || t.coefficients.size() != t.basis_size()) {
      throw ParseError("spline model: inconsistent table for '" + t.feature + "'");
    }
    m.splines.push_back(std::move(t));
  }
  for (const auto& c : j.at("categoricals")) {
    m.categoricals.push_back({c.at("feature"), c.at("effects").get<std::vector<double>>()});
  }
  return m;
}

}  // namespace gvim

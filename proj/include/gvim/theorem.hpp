#pragma once

// Exact and Monte Carlo checks that importance computed by switching a
// treatment equals the weighted expected squared conditional treatment
// effect.
//
// Discrete case: X on K levels, Z on L levels, Y | X=k, Z=z with mean mu[k][z]
// and variance var[k][z]. With the true regression function f(k, z) = mu[k][z],
//   switch - orig = sum_{k != j} p_k p_j E_{Z|X=k} (mu[k][Z] - mu[j][Z])^2.
// Both sides are computed here by exact enumeration along separate paths.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gvim/error.hpp"
#include "gvim/parallel.hpp"
#include "gvim/rng.hpp"

namespace gvim {

struct DiscreteJoint {
  std::vector<double> p_x;                       // K
  std::vector<std::vector<double>> p_z_given_x;  // K x L, rows sum to 1
  std::vector<std::vector<double>> mu;           // K x L
  std::vector<std::vector<double>> var;          // K x L, >= 0

  std::size_t x_levels() const { return p_x.size(); }
  std::size_t z_levels() const { return p_z_given_x.empty() ? 0 : p_z_given_x[0].size(); }

  void validate(bool require_positivity = false) const {
    const std::size_t k = x_levels(), l = z_levels();
    if (k < 2) throw ConfigError("joint needs at least two treatment levels");
    if (l < 1) throw ConfigError("joint needs at least one covariate level");
    auto check_dist = [&](const std::vector<double>& p, const char* what) {
      double s = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) throw ConfigError(std::string(what) + " has a negative entry");
        if (require_positivity && !(v > 0.0)) throw ConfigError(std::string(what) + " violates positivity");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-12) throw ConfigError(std::string(what) + " does not sum to 1");
    };
    check_dist(p_x, "p_x");
    if (p_z_given_x.size() != k || mu.size() != k || var.size() != k) throw ConfigError("joint tables need K rows");
    for (std::size_t a = 0; a < k; ++a) {
      if (p_z_given_x[a].size() != l || mu[a].size() != l || var[a].size() != l) {
        throw ConfigError("joint tables need L columns");
      }
      check_dist(p_z_given_x[a], "p_z_given_x row");
      for (double v : var[a])
        if (!(v >= 0.0)) throw ConfigError("conditional variance is negative");
    }
  }
};

// Seeded random joint with strictly positive cell probabilities.
inline DiscreteJoint random_joint(RngStream& rng, std::size_t k, std::size_t l) {
  auto simplex = [&](std::size_t size) {
    std::vector<double> p(size);
    double s = 0.0;
    for (auto& v : p) s += (v = 0.05 + rng.uniform());
    for (auto& v : p) v /= s;
    return p;
  };
  DiscreteJoint j;
  j.p_x = simplex(k);
  for (std::size_t a = 0; a < k; ++a) {
    j.p_z_given_x.push_back(simplex(l));
    std::vector<double> m(l), v(l);
    for (std::size_t z = 0; z < l; ++z) {
      m[z] = rng.normal(0.0, 2.0);
      v[z] = rng.uniform(0.0, 2.0);
    }
    j.mu.push_back(std::move(m));
    j.var.push_back(std::move(v));
  }
  return j;
}

struct ExactLosses {
  double e_orig = 0.0;
  double e_switch = 0.0;
};

// Expected squared error of f(k, z) = mu[k][z] on original and switched
// inputs. Switched input: (X^(b), Z^(a)) with X^(b) independent of (X^(a), Z^(a), Y).
// Uses only second moments E[Y^2 | k, z] = var + mu^2, never the CATE form.
inline ExactLosses exact_losses(const DiscreteJoint& joint) {
  joint.validate();
  const std::size_t kk = joint.x_levels(), ll = joint.z_levels();
  ExactLosses out;
  for (std::size_t k = 0; k < kk; ++k) {
    for (std::size_t z = 0; z < ll; ++z) {
      const double w = joint.p_x[k] * joint.p_z_given_x[k][z];
      const double m = joint.mu[k][z];
      const double second = joint.var[k][z] + m * m;
      out.e_orig += w * (second - 2.0 * m * m + m * m);
      for (std::size_t j = 0; j < kk; ++j) {
        const double f = joint.mu[j][z];
        out.e_switch += w * joint.p_x[j] * (second - 2.0 * m * f + f * f);
      }
    }
  }
  return out;
}

inline double gvim_exact_switch(const DiscreteJoint& joint) {
  const auto l = exact_losses(joint);
  return l.e_switch - l.e_orig;
}

// sum_{k != j} p_k p_j sum_z P(z | k) (mu[k][z] - mu[j][z])^2, with mu read as
// potential-outcome means under conditional ignorability.
inline double gvim_cate_formula(const DiscreteJoint& joint) {
  joint.validate();
  const std::size_t kk = joint.x_levels(), ll = joint.z_levels();
  double total = 0.0;
  for (std::size_t k = 0; k < kk; ++k) {
    for (std::size_t j = 0; j < kk; ++j) {
      if (j == k) continue;
      double inner = 0.0;
      for (std::size_t z = 0; z < ll; ++z) {
        const double cate = joint.mu[k][z] - joint.mu[j][z];
        inner += joint.p_z_given_x[k][z] * cate * cate;
      }
      total += joint.p_x[k] * joint.p_x[j] * inner;
    }
  }
  return total;
}

// sum_k p_k E_{Z|X=k} V(Y | X=k, Z).
inline double e_orig_variance_form(const DiscreteJoint& joint) {
  joint.validate();
  double total = 0.0;
  for (std::size_t k = 0; k < joint.x_levels(); ++k) {
    double inner = 0.0;
    for (std::size_t z = 0; z < joint.z_levels(); ++z) inner += joint.p_z_given_x[k][z] * joint.var[k][z];
    total += joint.p_x[k] * inner;
  }
  return total;
}

// Binary treatment: Var(X) * sum_x E_{Z|X=x} CATE(Z)^2 with Var(X) = p0 p1.
inline double binary_treatment_form(const DiscreteJoint& joint) {
  joint.validate();
  if (joint.x_levels() != 2) throw ConfigError("binary form needs exactly two treatment levels");
  const double var_x = joint.p_x[0] * joint.p_x[1];
  double sum = 0.0;
  for (std::size_t x = 0; x < 2; ++x) {
    for (std::size_t z = 0; z < joint.z_levels(); ++z) {
      const double cate = joint.mu[1][z] - joint.mu[0][z];
      sum += joint.p_z_given_x[x][z] * cate * cate;
    }
  }
  return var_x * sum;
}

// ---------------------------------------------------------------------------
// Continuous treatment

struct ContinuousScenario {
  std::string name;
  std::function<std::pair<double, double>(RngStream&)> sample_xz;  // (x, z)
  std::function<double(double, double)> mean;                      // f(x, z) = E[Y | x, z]
  std::function<double(double, double)> noise_sd;                  // sd(Y | x, z)
  std::size_t n_mc = 100'000;
};

struct McComparison {
  double switch_estimate = 0.0;
  double cate_estimate = 0.0;
  double mc_se = 0.0;  // standard error of the difference

  double discrepancy() const { return std::abs(switch_estimate - cate_estimate); }
  bool agrees(double k = 3.0) const { return discrepancy() <= k * mc_se; }
};

// Two independent Monte Carlo estimates:
//   switch: mean of (Y - f(X^(b), Z))^2 - (Y - f(X, Z))^2 with simulated Y,
//   cate:   mean of (f(X, Z) - f(X^(b), Z))^2, the potential-outcome functional.
// Streams rng.child(0) and rng.child(1) respectively.
inline McComparison gvim_mc_continuous(const ContinuousScenario& s, const RngStream& rng) {
  if (s.n_mc < 1000) throw ConfigError("n_mc must be at least 1000");
  auto moments = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / static_cast<double>(v.size() - 1)};
  };

  std::vector<double> d(s.n_mc), c(s.n_mc);
  RngStream a = rng.child(0);
  for (auto& v : d) {
    const auto [x, z] = s.sample_xz(a);
    const double y = s.mean(x, z) + s.noise_sd(x, z) * a.normal();
    const double xb = s.sample_xz(a).first;
    const double r0 = y - s.mean(x, z), r1 = y - s.mean(xb, z);
    v = r1 * r1 - r0 * r0;
  }
  RngStream b = rng.child(1);
  for (auto& v : c) {
    const auto [x, z] = s.sample_xz(b);
    const double xb = s.sample_xz(b).first;
    const double effect = s.mean(x, z) - s.mean(xb, z);
    v = effect * effect;
  }
  const auto [md, vd] = moments(d);
  const auto [mc, vc] = moments(c);
  const auto n = static_cast<double>(s.n_mc);
  return {md, mc, std::sqrt(vd / n + vc / n)};
}

// Seeded scenario with a confounded treatment X = a Z + sqrt(1 - a^2) e and
// one of five regression-function families.
inline ContinuousScenario random_scenario(RngStream& rng, std::size_t index, std::size_t n_mc = 100'000) {
  const double a = rng.uniform(-0.8, 0.8);
  const double beta = rng.uniform(0.5, 2.0);
  const double gamma = rng.uniform(-1.0, 1.0);
  const double sd = rng.uniform(0.5, 2.0);
  const double rho = std::sqrt(1.0 - a * a);
  ContinuousScenario s;
  s.n_mc = n_mc;
  s.sample_xz = [a, rho](RngStream& r) {
    const double z = r.normal();
    return std::pair{a * z + rho * r.normal(), z};
  };
  s.noise_sd = [sd](double, double) { return sd; };
  switch (index % 5) {
    case 0:
      s.name = "linear";
      s.mean = [beta, gamma](double x, double z) { return beta * x + gamma * z; };
      break;
    case 1:
      s.name = "interaction";
      s.mean = [beta, gamma](double x, double z) { return beta * x * (1.0 + z) + gamma * z; };
      break;
    case 2:
      s.name = "quadratic";
      s.mean = [beta, gamma](double x, double z) { return beta * x * x + gamma * z; };
      break;
    case 3:
      s.name = "sine";
      s.mean = [beta](double x, double z) { return std::sin(beta * x) + z * z; };
      break;
    default:
      s.name = "heteroscedastic";
      s.mean = [beta, gamma](double x, double z) { return beta * std::tanh(x + gamma * z); };
      s.noise_sd = [sd](double x, double) { return sd * (0.5 + std::abs(x)); };
      break;
  }
  s.name += "#" + std::to_string(index);
  return s;
}

struct TheoremReport {
  std::size_t discrete_cases = 0;
  double max_discrete_discrepancy = 0.0;
  double max_e_orig_discrepancy = 0.0;
  std::size_t continuous_cases = 0;
  std::size_t continuous_agree = 0;
  std::vector<std::pair<std::string, McComparison>> continuous;
};

// Joint i uses rng.child(i) with K, L drawn in [2,5] x [1,5]; scenario s uses
// rng.child(1'000'000 + s) for its parameters and its child(0) for sampling.
inline TheoremReport verify_theorems(const RngStream& rng, std::size_t n_joints, std::size_t n_scenarios,
                                     std::size_t n_mc, unsigned threads = 1) {
  TheoremReport report;
  std::vector<double> diff(n_joints), diff_orig(n_joints);
  parallel_for(n_joints, threads, [&](std::size_t i) {
    RngStream s = rng.child(i);
    const auto k = 2 + s.bounded(4), l = 1 + s.bounded(5);
    const auto joint = random_joint(s, k, l);
    diff[i] = std::abs(gvim_exact_switch(joint) - gvim_cate_formula(joint));
    diff_orig[i] = std::abs(exact_losses(joint).e_orig - e_orig_variance_form(joint));
  });
  report.discrete_cases = n_joints;
  for (std::size_t i = 0; i < n_joints; ++i) {
    report.max_discrete_discrepancy = std::max(report.max_discrete_discrepancy, diff[i]);
    report.max_e_orig_discrepancy = std::max(report.max_e_orig_discrepancy, diff_orig[i]);
  }

  report.continuous.resize(n_scenarios);
  parallel_for(n_scenarios, threads, [&](std::size_t i) {
    RngStream s = rng.child(1'000'000 + i);
    const auto scenario = random_scenario(s, i, n_mc);
    report.continuous[i] = {scenario.name, gvim_mc_continuous(scenario, s.child(0))};
  });
  report.continuous_cases = n_scenarios;
  for (const auto& [name, cmp] : report.continuous) report.continuous_agree += cmp.agrees() ? 1 : 0;
  return report;
}

}  // namespace gvim

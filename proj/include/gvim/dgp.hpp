#pragma once

// Simulation designs and their true importance values.
//
// Friedman-type design:
//   Y = 2 X1 - 4 X1 C1 + 2 C1 + 2 log|X2 X3| + (X4 - 0.5)^3 - 2 X5
//       + 2 sin(pi U1 U2) - 1{C2 = 2} + 2 1{C2 = 3} + eps
//   X1 = -0.5 + C1 - 0.5 X2 + 0.5 X3 + 0.3 X4 - 0.3 X5 + nu
// with X2..X5 ~ N(0,1), U1, U2 ~ U(-1,1), C1 ~ Bernoulli(p), C2 on three
// levels, nu ~ N(0, sigma_nu^2), eps ~ N(0, sigma_eps^2), plus independent
// N(0,1) nuisance columns X8, X9, ....
//
// C1 is stored as a two-level categorical: level 1 means C1 = 0 and level 2
// means C1 = 1.
//
// Overfitting design:
//   Y = X1 + 2 X1^2 + 2 X2 + eps, eps ~ N(0, sigma_eps^2),
// with N(0,1) nuisance columns Z1..Zk that do not enter the response.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gvim/csv.hpp"
#include "gvim/dataset.hpp"
#include "gvim/error.hpp"
#include "gvim/learners/linear.hpp"
#include "gvim/metrics.hpp"
#include "gvim/parallel.hpp"
#include "gvim/rng.hpp"

namespace gvim {

inline constexpr std::size_t kDgpBlockRows = 4096;

// ---------------------------------------------------------------------------
// Friedman-type design

struct FriedmanDgpSpec {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double sigma_eps2 = 1.0;
  double sigma_nu2 = 0.066;
  std::size_t n_nuisance = 45;
  std::array<double, 3> c2_probs{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double c1_prob = 0.5;

  void validate() const {
    if (!(sigma_eps2 > 0.0) || !(sigma_nu2 > 0.0)) throw ConfigError("variances must be positive");
    if (!(c1_prob > 0.0 && c1_prob < 1.0)) throw ConfigError("c1_prob must lie in (0, 1)");
    double sum = 0.0;
    for (double p : c2_probs) {
      if (!(p >= 0.0)) throw ConfigError("c2_probs must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("c2_probs must sum to 1");
  }
};

inline std::vector<std::string> friedman_nuisance_names(std::size_t n_nuisance) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n_nuisance; ++i) out.push_back("X" + std::to_string(8 + i));
  return out;
}

// Column order: X1..X5, nuisance, U1, U2, C1, C2.
inline std::vector<FeatureMeta> friedman_features(std::size_t n_nuisance) {
  std::vector<FeatureMeta> out;
  for (int i = 1; i <= 5; ++i) out.push_back(FeatureMeta::continuous("X" + std::to_string(i)));
  for (auto& name : friedman_nuisance_names(n_nuisance)) out.push_back(FeatureMeta::continuous(name));
  out.push_back(FeatureMeta::continuous("U1"));
  out.push_back(FeatureMeta::continuous("U2"));
  out.push_back(FeatureMeta::categorical("C1", 2));
  out.push_back(FeatureMeta::categorical("C2", 3));
  return out;
}

inline std::vector<std::string> friedman_important_features() {
  return {"X1", "C1", "X2", "X3", "X4", "X5", "U1", "U2", "C2"};
}

// Noise-free conditional mean; c1_level and c2_level are the stored codes.
inline double friedman_mean(double x1, double x2, double x3, double x4, double x5, double u1, double u2,
                            double c1_level, double c2_level) {
  const double c1 = c1_level == 2.0 ? 1.0 : 0.0;
  const double d = x4 - 0.5;
  return 2.0 * x1 - 4.0 * x1 * c1 + 2.0 * c1 + 2.0 * std::log(std::abs(x2 * x3)) + d * d * d - 2.0 * x5 +
         2.0 * std::sin(std::numbers::pi * u1 * u2) - (c2_level == 2.0 ? 1.0 : 0.0) +
         (c2_level == 3.0 ? 2.0 : 0.0);
}

// Exact conditional mean as a predictor.
struct FriedmanTruth {
  std::vector<double> operator()(const Dataset& data, std::span<const std::size_t> rows) const {
    const auto x1 = data.column("X1"), x2 = data.column("X2"), x3 = data.column("X3"), x4 = data.column("X4"),
               x5 = data.column("X5"), u1 = data.column("U1"), u2 = data.column("U2"), c1 = data.column("C1"),
               c2 = data.column("C2");
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = rows[i];
      out[i] = friedman_mean(x1[r], x2[r], x3[r], x4[r], x5[r], u1[r], u2[r], c1[r], c2[r]);
    }
    return out;
  }
};

// Rows are generated in blocks of kDgpBlockRows; block b draws its core
// variables from rng.child(2b) and its nuisance columns from rng.child(2b+1),
// so output does not depend on `threads`.
inline Dataset gen_friedman(const FriedmanDgpSpec& spec, const RngStream& rng, unsigned threads = 1) {
  spec.validate();
  const std::size_t n = spec.n;
  const std::size_t k = spec.n_nuisance;
  auto features = friedman_features(k);
  std::vector<std::vector<double>> cols(features.size(), std::vector<double>(n));
  std::vector<double> y(n);
  const std::size_t iu1 = 5 + k, iu2 = iu1 + 1, ic1 = iu1 + 2, ic2 = iu1 + 3;
  const double sd_nu = std::sqrt(spec.sigma_nu2), sd_eps = std::sqrt(spec.sigma_eps2);

  const std::size_t blocks = (n + kDgpBlockRows - 1) / kDgpBlockRows;
  parallel_for(blocks, threads, [&](std::size_t b) {
    RngStream core = rng.child(2 * b);
    RngStream noise = rng.child(2 * b + 1);
    const std::size_t end = std::min(n, (b + 1) * kDgpBlockRows);
    for (std::size_t r = b * kDgpBlockRows; r < end; ++r) {
      const double x2 = core.normal(), x3 = core.normal(), x4 = core.normal(), x5 = core.normal();
      const double u1 = core.uniform(-1.0, 1.0), u2 = core.uniform(-1.0, 1.0);
      const double c1 = core.bernoulli(spec.c1_prob) ? 1.0 : 0.0;
      const double c2 = static_cast<double>(core.categorical(spec.c2_probs) + 1);
      const double x1 = -0.5 + c1 - 0.5 * x2 + 0.5 * x3 + 0.3 * x4 - 0.3 * x5 + sd_nu * core.normal();
      const double c1_level = c1 + 1.0;
      cols[0][r] = x1;
      cols[1][r] = x2;
      cols[2][r] = x3;
      cols[3][r] = x4;
      cols[4][r] = x5;
      cols[iu1][r] = u1;
      cols[iu2][r] = u2;
      cols[ic1][r] = c1_level;
      cols[ic2][r] = c2;
      y[r] = friedman_mean(x1, x2, x3, x4, x5, u1, u2, c1_level, c2) + sd_eps * core.normal();
      for (std::size_t j = 0; j < k; ++j) cols[5 + j][r] = noise.normal();
    }
  });
  return Dataset(std::move(features), std::move(cols), std::move(y), "y");
}

inline Dataset gen_friedman(const FriedmanDgpSpec& spec, unsigned threads = 1) {
  return gen_friedman(spec, RngStream(spec.seed, 0), threads);
}

// Correctly specified term list. The C1 main effect is included because the
// response contains 2 C1.
inline std::vector<Term> friedman_oracle_terms() {
  return {
      Term::identity("X1"),
      Term::interaction(Term::identity("X1"), Term::indicator("C1", 2)),
      Term::indicator("C1", 2),
      Term::log_abs_product("X2", "X3"),
      Term::power("X4", 3.0, 0.5),
      Term::identity("X5"),
      Term::sin_pi_product("U1", "U2"),
      Term::indicator("C2", 2),
      Term::indicator("C2", 3),
  };
}

// ---------------------------------------------------------------------------
// Overfitting design

struct OverfitDgpSpec {
  std::size_t n = 100;
  double sigma_eps2 = 25.0;
  std::size_t n_nuisance = 40;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma_eps2 > 0.0)) throw ConfigError("sigma_eps2 must be positive");
    if (n_nuisance < 1 || n_nuisance > 40) throw ConfigError("n_nuisance must lie in [1, 40]");
  }
};

inline double overfit_mean(double x1, double x2) { return x1 + 2.0 * x1 * x1 + 2.0 * x2; }

struct OverfitTruth {
  std::vector<double> operator()(const Dataset& data, std::span<const std::size_t> rows) const {
    const auto x1 = data.column("X1"), x2 = data.column("X2");
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = overfit_mean(x1[rows[i]], x2[rows[i]]);
    return out;
  }
};

// Block b draws X1, X2 and eps from rng.child(b).child(0) and nuisance column
// Zj from rng.child(b).child(j). The first k nuisance columns are therefore
// identical across designs that differ only in n_nuisance.
inline Dataset gen_overfit(const OverfitDgpSpec& spec, const RngStream& rng, unsigned threads = 1) {
  spec.validate();
  const std::size_t n = spec.n, k = spec.n_nuisance;
  std::vector<FeatureMeta> features{FeatureMeta::continuous("X1"), FeatureMeta::continuous("X2")};
  for (std::size_t j = 1; j <= k; ++j) features.push_back(FeatureMeta::continuous("Z" + std::to_string(j)));
  std::vector<std::vector<double>> cols(features.size(), std::vector<double>(n));
  std::vector<double> y(n);
  const double sd = std::sqrt(spec.sigma_eps2);

  const std::size_t blocks = (n + kDgpBlockRows - 1) / kDgpBlockRows;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const RngStream block = rng.child(b);
    RngStream core = block.child(0);
    const std::size_t begin = b * kDgpBlockRows, end = std::min(n, (b + 1) * kDgpBlockRows);
    for (std::size_t r = begin; r < end; ++r) {
      cols[0][r] = core.normal();
      cols[1][r] = core.normal();
      y[r] = overfit_mean(cols[0][r], cols[1][r]) + sd * core.normal();
    }
    for (std::size_t j = 1; j <= k; ++j) {
      RngStream z = block.child(j);
      for (std::size_t r = begin; r < end; ++r) cols[1 + j][r] = z.normal();
    }
  });
  return Dataset(std::move(features), std::move(cols), std::move(y), "y");
}

inline Dataset gen_overfit(const OverfitDgpSpec& spec, unsigned threads = 1) {
  return gen_overfit(spec, RngStream(spec.seed, 0), threads);
}

// Linear in every column.
inline std::vector<Term> overfit_linear_terms(std::size_t n_nuisance) {
  std::vector<Term> t{Term::identity("X1"), Term::identity("X2")};
  for (std::size_t j = 1; j <= n_nuisance; ++j) t.push_back(Term::identity("Z" + std::to_string(j)));
  return t;
}

// Linear terms plus X1^2.
inline std::vector<Term> overfit_quadratic_terms(std::size_t n_nuisance) {
  auto t = overfit_linear_terms(n_nuisance);
  t.insert(t.begin() + 1, Term::power("X1", 2.0));
  return t;
}

// E[(g(X) - g(X'))^2] = 2 Var(g(X)) with g(x) = x + 2x^2: 2 (1 + 8) = 18.
inline constexpr double kOverfitTrueGvimX1 = 18.0;
inline constexpr double kOverfitTrueGvimX2 = 8.0;

// ---------------------------------------------------------------------------
// True importance values

namespace detail {

// Si(x) = int_0^x sin(t)/t dt by composite Simpson.
inline double sine_integral(double x, int panels = 4000) {
  auto f = [](double t) { return t == 0.0 ? 1.0 : std::sin(t) / t; };
  const double h = x / panels;
  double s = f(0.0) + f(x);
  for (int i = 1; i < panels; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// E[(Z - a)^k] for Z ~ N(0,1).
inline double shifted_normal_moment(int k, double a) {
  auto z_moment = [](int i) {
    if (i % 2) return 0.0;
    double m = 1.0;
    for (int j = i - 1; j > 0; j -= 2) m *= j;
    return m;
  };
  double total = 0.0, binom = 1.0;
  for (int i = 0; i <= k; ++i) {
    total += binom * std::pow(-a, k - i) * z_moment(i);
    binom = binom * (k - i) / (i + 1);
  }
  return total;
}

}  // namespace detail

// Closed-form importance in the Friedman-type design; nullopt where no closed
// form is implemented (C1, whose effect depends on the joint with X1).
inline std::optional<double> true_gvim_analytic(const std::string& feature, const FriedmanDgpSpec& spec = {}) {
  spec.validate();
  const double p = spec.c1_prob;
  if (feature == "X1") {
    // Slope of X1 is 2 - 4 C1 = +-2, so 4 E[(X1 - X1')^2] = 8 Var(X1).
    const double var_x1 = p * (1.0 - p) + 0.25 + 0.25 + 0.09 + 0.09 + spec.sigma_nu2;
    return 8.0 * var_x1;
  }
  if (feature == "X2" || feature == "X3") {
    // 2 Var(2 log|Z|) with Var(log|Z|) = pi^2 / 8.
    return std::numbers::pi * std::numbers::pi;
  }
  if (feature == "X4") {
    const double m3 = detail::shifted_normal_moment(3, 0.5), m6 = detail::shifted_normal_moment(6, 0.5);
    return 2.0 * (m6 - m3 * m3);
  }
  if (feature == "X5") return 8.0;
  if (feature == "U1" || feature == "U2") {
    // E over independent u, u1, u1' in (-1,1) of 4 (sin(pi u u1) - sin(pi u u1'))^2.
    const double two_pi = 2.0 * std::numbers::pi;
    return 4.0 - 4.0 * detail::sine_integral(two_pi) / two_pi;
  }
  if (feature == "C2") {
    const std::array<double, 3> effect{0.0, -1.0, 2.0};
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      for (int j = 0; j < 3; ++j) {
        const double d = effect[k] - effect[j];
        s += spec.c2_probs[k] * spec.c2_probs[j] * d * d;
      }
    }
    return s;
  }
  if (feature.size() > 1 && feature[0] == 'X') {
    const int idx = std::stoi(feature.substr(1));
    if (idx >= 8 && static_cast<std::size_t>(idx) < 8 + spec.n_nuisance) return 0.0;
  }
  return std::nullopt;
}

struct TrueGvimEntry {
  std::string feature;
  double value = 0.0;
  std::string method;  // "analytic" or "empirical"
};

struct TrueGvimTable {
  std::vector<TrueGvimEntry> entries;
  std::size_t n_pop = 0;
  double e_orig_true = 0.0;

  std::optional<double> find(const std::string& feature) const {
    for (const auto& e : entries)
      if (e.feature == feature) return e.value;
    return std::nullopt;
  }
  double at(const std::string& feature) const {
    const auto v = find(feature);
    if (!v) throw FeatureError("no true GVIM for '" + feature + "'");
    return *v;
  }
};

// Population importance with the exact conditional mean as the predictor.
// Feature j's permutations come from RngStream(spec.seed, 1).child(j).
inline TrueGvimTable true_gvim_empirical(const FriedmanDgpSpec& spec, std::size_t n_pop,
                                         std::vector<std::string> features = {}, int repetitions = 10,
                                         unsigned threads = 1) {
  if (n_pop < 10'000) throw ConfigError("population size must be at least 10000");
  FriedmanDgpSpec pop_spec = spec;
  pop_spec.n = n_pop;
  const Dataset pop = gen_friedman(pop_spec, threads);
  if (features.empty()) {
    for (const auto& f : pop.features()) features.push_back(f.name);
  }
  const FriedmanTruth truth;
  const auto rows = pop.all_rows();
  TrueGvimTable table;
  table.n_pop = n_pop;
  table.e_orig_true = e_orig_hat(truth, pop, rows);
  table.entries.resize(features.size());
  const RngStream perm(spec.seed, 1);
  parallel_for(features.size(), threads, [&](std::size_t f) {
    const auto j = pop.index_of(features[f]);
    RngStream s = perm.child(j);
    const auto loss = switch_loss(truth, pop, rows, j, s, table.e_orig_true, repetitions);
    table.entries[f] = {features[f], loss.gvim, "empirical"};
  });
  return table;
}

// Analytic values where available, otherwise population values.
inline TrueGvimTable true_gvim_table(const FriedmanDgpSpec& spec, std::size_t n_pop,
                                     const std::vector<std::string>& features, int repetitions = 10,
                                     unsigned threads = 1) {
  std::vector<std::string> missing;
  for (const auto& f : features)
    if (!true_gvim_analytic(f, spec)) missing.push_back(f);
  TrueGvimTable empirical;
  if (!missing.empty()) {
    empirical = true_gvim_empirical(spec, n_pop, missing, repetitions, threads);
  }
  TrueGvimTable table;
  table.n_pop = n_pop;
  table.e_orig_true = spec.sigma_eps2;
  for (const auto& f : features) {
    if (const auto v = true_gvim_analytic(f, spec)) {
      table.entries.push_back({f, *v, "analytic"});
    } else {
      table.entries.push_back({f, empirical.at(f), "empirical"});
    }
  }
  return table;
}

inline void write_true_gvim_csv(const TrueGvimTable& table, std::ostream& out) {
  out << "feature,true_gvim,method\n";
  for (const auto& e : table.entries) out << e.feature << ',' << format_double(e.value) << ',' << e.method << '\n';
}

inline void write_true_gvim_csv(const TrueGvimTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_true_gvim_csv(table, out);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline TrueGvimTable read_true_gvim_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "feature,true_gvim,method") {
    throw ParseError(path.string() + ":1: unexpected header");
  }
  TrueGvimTable table;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string feature, value, method;
    if (!std::getline(ss, feature, ',') || !std::getline(ss, value, ',') || !std::getline(ss, method)) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      table.entries.push_back({feature, std::stod(value), method});
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + value + "'");
    }
  }
  return table;
}

}  // namespace gvim

// Command-line front end for the gvim library.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration
// error, 3 parse or I/O error, 4 numerical or estimation failure,
// 5 verification check failed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gvim/gvim.hpp"

namespace fs = std::filesystem;
using namespace gvim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitVerification = 5;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Schema:
    case ErrorKind::Feature:
    case ErrorKind::Split:
    case ErrorKind::Unavailable:
      return kExitUsage;
    case ErrorKind::Parse:
    case ErrorKind::Io:
      return kExitIo;
    default:
      return kExitNumeric;
  }
}

struct Globals {
  std::uint64_t seed = 1;
  bool seed_set = false;
  fs::path out_dir = ".";
  unsigned threads = 1;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item += c;
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string dgp = "friedman";
  std::size_t n = 1000;
  std::optional<std::size_t> n_nuisance;
  std::optional<double> sigma_eps2;
  std::string name = "data";
};

int run_simulate(const Globals& g, const SimulateArgs& a) {
  ensure_dir(g.out_dir);
  Dataset data;
  if (a.dgp == "friedman") {
    FriedmanDgpSpec spec;
    spec.n = a.n;
    spec.seed = g.seed;
    if (a.n_nuisance) spec.n_nuisance = *a.n_nuisance;
    if (a.sigma_eps2) spec.sigma_eps2 = *a.sigma_eps2;
    data = gen_friedman(spec, g.threads);
  } else if (a.dgp == "overfit") {
    OverfitDgpSpec spec;
    spec.n = a.n;
    spec.seed = g.seed;
    if (a.n_nuisance) spec.n_nuisance = *a.n_nuisance;
    if (a.sigma_eps2) spec.sigma_eps2 = *a.sigma_eps2;
    data = gen_overfit(spec, g.threads);
  } else {
    throw ConfigError("unknown dgp '" + a.dgp + "' (expected friedman or overfit)");
  }
  const auto csv = g.out_dir / (a.name + ".csv");
  const auto schema = g.out_dir / (a.name + ".schema.json");
  write_csv(data, csv);
  write_schema(CsvSchema::of(data), schema);
  std::cout << "wrote " << csv.string() << " (" << data.rows() << " rows, " << data.num_features()
            << " features) and " << schema.string() << '\n';
  return kExitOk;
}

struct TrueGvimArgs {
  std::size_t n_pop = 100'000;
  int repetitions = 10;
  std::string method = "table";  // analytic | empirical | table
  std::string features;
  std::optional<std::size_t> n_nuisance;
};

int run_true_gvim(const Globals& g, const TrueGvimArgs& a) {
  ensure_dir(g.out_dir);
  FriedmanDgpSpec spec;
  spec.seed = g.seed;
  if (a.n_nuisance) spec.n_nuisance = *a.n_nuisance;
  std::vector<std::string> features = split_list(a.features);
  if (features.empty()) features = friedman_important_features();
  TrueGvimTable table;
  if (a.method == "empirical") {
    table = true_gvim_empirical(spec, a.n_pop, features, a.repetitions, g.threads);
  } else if (a.method == "analytic") {
    table.e_orig_true = spec.sigma_eps2;
    for (const auto& f : features) {
      const auto v = true_gvim_analytic(f, spec);
      if (!v) throw UnavailableError("no closed form for '" + f + "'; use --method empirical or table");
      table.entries.push_back({f, *v, "analytic"});
    }
  } else if (a.method == "table") {
    table = true_gvim_table(spec, a.n_pop, features, a.repetitions, g.threads);
  } else {
    throw ConfigError("unknown method '" + a.method + "'");
  }
  const auto path = g.out_dir / "true_gvim.csv";
  write_true_gvim_csv(table, path);
  write_true_gvim_csv(table, std::cout);
  return kExitOk;
}

struct EstimateArgs {
  fs::path data;
  fs::path schema;
  std::string model = "gbt";
  fs::path model_file;
  std::string features;
  std::size_t splits = 0;
  double train_fraction = 2.0 / 3.0;
  std::size_t bootstrap = 0;
  int repetitions = 1;
  bool fullset = false;
  fs::path save_model;
};

int run_estimate(const Globals& g, const EstimateArgs& a) {
  ensure_dir(g.out_dir);
  const CsvSchema schema = a.schema.empty() ? CsvSchema{} : read_schema(a.schema);
  const Dataset data = read_csv(a.data, schema);
  const ExperimentModel model = a.model_file.empty()
                                    ? detail::model_from_config(nlohmann::json{{"type", a.model}})
                                    : detail::model_from_config(read_json(a.model_file));
  std::vector<std::string> features = split_list(a.features);
  if (features.empty())
    for (const auto& f : data.features()) features.push_back(f.name);

  SplitPlan plan = SplitPlan::default_for(data.rows());
  plan.train_fraction = a.train_fraction;
  if (a.splits > 0) plan.n_splits = a.splits;
  EstimatorOptions opts;
  opts.permutation_repetitions = a.repetitions;
  opts.threads = g.threads;
  const RngStream rng(g.seed, kEstimationStream);

  EstimationResult result;
  if (a.fullset) {
    result = estimate_gvim_fullset(data, model.spec, features, rng, opts);
  } else if (a.bootstrap > 0) {
    result = bootstrap_se(data, model.spec, plan, features, a.bootstrap, rng, opts);
  } else {
    result = estimate_gvim(data, model.spec, plan, features, rng, opts);
  }
  const auto path = g.out_dir / "estimates.csv";
  write_estimates_csv(result, g.seed, path);
  write_estimates_csv(result, g.seed, std::cout);

  if (!a.save_model.empty()) {
    const auto rows = data.all_rows();
    const FittedModel fitted = fit_model(model.spec, data, rows, rng.child(0));
    std::ofstream out(a.save_model);
    if (!out) throw IoError("cannot open '" + a.save_model.string() + "' for writing");
    out << model_to_json(fitted).dump() << '\n';
  }
  return kExitOk;
}

struct StudyArgs {
  fs::path config;
  bool no_resume = false;
};

ExperimentConfig load_study_config(const Globals& g, const StudyArgs& a, ExperimentConfig::Study study) {
  nlohmann::json j = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
  if (!j.contains("study")) j["study"] = study == ExperimentConfig::Study::Bias ? "bias" : "fullset";
  if (g.seed_set) j["seed"] = g.seed;
  if (a.no_resume) j["resume"] = false;
  ExperimentConfig c = config_from_json(j);
  if (c.study != study) throw ConfigError("configuration is for a different study");
  return c;
}

int run_bias(const Globals& g, const StudyArgs& a) {
  const auto config = load_study_config(g, a, ExperimentConfig::Study::Bias);
  ensure_dir(g.out_dir);
  {
    std::ofstream out(g.out_dir / "config.json");
    out << config_to_json(config).dump(2) << '\n';
  }
  StudyOptions opts;
  opts.threads = g.threads;
  opts.cache_dir = g.out_dir / "cache";
  const auto result = run_bias_study(config, opts);
  emit_bias_report(result, g.out_dir);
  write_bias_table(result.rows, ReportFormat::Text, std::cout);
  std::cerr << result.replicates.size() << " replicates (" << result.reused << " reused, " << result.failed
            << " failed)\n";
  return kExitOk;
}

int run_fullset(const Globals& g, const StudyArgs& a) {
  const auto config = load_study_config(g, a, ExperimentConfig::Study::Fullset);
  ensure_dir(g.out_dir);
  {
    std::ofstream out(g.out_dir / "config.json");
    out << config_to_json(config).dump(2) << '\n';
  }
  StudyOptions opts;
  opts.threads = g.threads;
  opts.cache_dir = g.out_dir / "cache";
  const auto result = run_fullset_study(config, opts);
  emit_fullset_report(result, g.out_dir);
  write_fullset_table(result.rows, ReportFormat::Text, std::cout);
  std::cerr << result.replicates.size() << " model fits (" << result.reused << " reused tasks, " << result.failed
            << " failed)\n";
  return kExitOk;
}

struct VerifyArgs {
  std::size_t joints = 1000;
  std::size_t scenarios = 50;
  std::size_t n_mc = 100'000;
  double tolerance = 1e-12;
  std::size_t min_agree = 0;  // 0: all but 2%
};

int run_verify(const Globals& g, const VerifyArgs& a) {
  const auto report = verify_theorems(RngStream(g.seed, 0), a.joints, a.scenarios, a.n_mc, g.threads);
  const bool discrete_ok = report.max_discrete_discrepancy <= a.tolerance;
  const bool orig_ok = report.max_e_orig_discrepancy <= a.tolerance;
  std::printf("%s discrete: %zu joints, max |switch - cate| = %.3e (tol %.1e)\n", discrete_ok ? "PASS" : "FAIL",
              report.discrete_cases, report.max_discrete_discrepancy, a.tolerance);
  std::printf("%s discrete: max |e_orig - expected variance| = %.3e\n", orig_ok ? "PASS" : "FAIL",
              report.max_e_orig_discrepancy);
  for (const auto& [name, c] : report.continuous) {
    std::printf("%s %-20s switch %.6f cate %.6f |diff| %.3e (3se %.3e)\n", c.agrees() ? "PASS" : "FAIL",
                name.c_str(), c.switch_estimate, c.cate_estimate, c.discrepancy(), 3.0 * c.mc_se);
  }
  const std::size_t needed =
      a.min_agree > 0 ? a.min_agree : report.continuous_cases - report.continuous_cases / 50;
  const bool cont_ok = report.continuous_agree >= needed;
  std::printf("%s continuous: %zu/%zu within 3 standard errors (need %zu)\n", cont_ok ? "PASS" : "FAIL",
              report.continuous_agree, report.continuous_cases, needed);
  return discrete_ok && orig_ok && cont_ok ? kExitOk : kExitVerification;
}

struct ReportArgs {
  fs::path dir;
  std::string format = "text";
  double tolerance = 1e-10;
};

int run_report(const Globals& g, const ReportArgs& a) {
  const fs::path dir = a.dir.empty() ? g.out_dir : a.dir;
  if (!fs::exists(dir / "replicate_losses.csv")) {
    throw IoError("'" + dir.string() + "' holds no bias-study output (replicate_losses.csv missing)");
  }
  const auto rows = recompute_bias_report(dir);
  if (a.format == "csv") {
    write_bias_table(rows, ReportFormat::Csv, std::cout);
  } else if (a.format == "text") {
    write_bias_table(rows, ReportFormat::Text, std::cout);
  } else {
    throw ConfigError("format must be csv or text");
  }
  if (!fs::exists(dir / "bias_table.csv")) return kExitOk;
  const auto emitted = read_bias_table(dir / "bias_table.csv");
  double worst = 0.0;
  bool shape_ok = emitted.size() == rows.size();
  for (std::size_t i = 0; shape_ok && i < rows.size(); ++i) {
    const auto& x = rows[i];
    const auto& y = emitted[i];
    if (x.feature != y.feature || x.model != y.model || x.training_size != y.training_size ||
        x.pct_bias.has_value() != y.pct_bias.has_value()) {
      shape_ok = false;
      break;
    }
    worst = std::max(worst, std::abs(x.mean_estimate - y.mean_estimate));
    if (x.pct_bias) worst = std::max(worst, std::abs(*x.pct_bias - *y.pct_bias));
    worst = std::max(worst, std::abs(x.e_orig_ratio - y.e_orig_ratio));
  }
  const bool ok = shape_ok && worst <= a.tolerance;
  std::cerr << (ok ? "PASS" : "FAIL") << " recomputed table vs bias_table.csv: max |diff| = " << worst << '\n';
  return ok ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutation-based generalized variable importance: estimation and simulation studies"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Master random seed (default 1)");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads; results do not depend on this")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a dataset from a simulation design");
  simulate->add_option("--dgp", sim.dgp, "friedman or overfit")->capture_default_str();
  simulate->add_option("-n,--rows", sim.n, "Number of rows")->capture_default_str();
  simulate->add_option("--n-nuisance", sim.n_nuisance, "Number of nuisance columns");
  simulate->add_option("--sigma-eps2", sim.sigma_eps2, "Response noise variance");
  simulate->add_option("--name", sim.name, "Output file stem")->capture_default_str();

  TrueGvimArgs tg;
  auto* true_gvim = app.add_subcommand("true-gvim", "True importance values for the Friedman-type design");
  true_gvim->add_option("--method", tg.method, "analytic, empirical or table (analytic where available)")
      ->capture_default_str();
  true_gvim->add_option("--n-pop", tg.n_pop, "Population size for empirical values")->capture_default_str();
  true_gvim->add_option("--repetitions", tg.repetitions, "Permutations averaged per feature")->capture_default_str();
  true_gvim->add_option("--features", tg.features, "Comma-separated features (default: the important ones)");
  true_gvim->add_option("--n-nuisance", tg.n_nuisance, "Number of nuisance columns");

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate importance on a CSV dataset");
  estimate->add_option("--data", est.data, "Input CSV")->required();
  estimate->add_option("--schema", est.schema, "Schema JSON (response name, categorical columns)")
      ;
  estimate->add_option("--model", est.model, "oracle, spline_additive or gbt")->capture_default_str();
  estimate->add_option("--model-config", est.model_file, "Model JSON (overrides --model)");
  estimate->add_option("--features", est.features, "Comma-separated features (default: all)");
  estimate->add_option("--splits", est.splits, "Number of subsample splits m (default: 10 below 500 rows, else 1)");
  estimate->add_option("--train-fraction", est.train_fraction, "Training share of each split")->capture_default_str();
  estimate->add_option("--bootstrap", est.bootstrap, "Bootstrap replicates M for standard errors");
  estimate->add_option("--repetitions", est.repetitions, "Permutations averaged per split")->capture_default_str();
  estimate->add_flag("--fullset", est.fullset, "Fit and evaluate on all rows");
  estimate->add_option("--save-model", est.save_model, "Write the model fitted on all rows as JSON");

  StudyArgs bias_args, fullset_args;
  auto* bias = app.add_subcommand("bias-study", "Bias of estimated importance across training sizes and learners");
  bias->add_option("--config", bias_args.config, "Study configuration JSON");
  bias->add_flag("--no-resume", bias_args.no_resume, "Ignore cached replicates");
  auto* fullset = app.add_subcommand("fullset-study", "In-sample versus split-sample importance with nuisance columns");
  fullset->add_option("--config", fullset_args.config, "Study configuration JSON");
  fullset->add_flag("--no-resume", fullset_args.no_resume, "Ignore cached replicates");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify-theorems", "Check the switching and treatment-effect identities");
  verify->add_option("--joints", va.joints, "Random discrete joints")->capture_default_str();
  verify->add_option("--scenarios", va.scenarios, "Random continuous scenarios")->capture_default_str();
  verify->add_option("--n-mc", va.n_mc, "Monte Carlo draws per scenario")->capture_default_str();
  verify->add_option("--tolerance", va.tolerance, "Discrete tolerance")->capture_default_str();
  verify->add_option("--min-agree", va.min_agree, "Continuous scenarios required to agree");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Rebuild the bias table from persisted replicates");
  report->add_option("--dir", ra.dir, "Study output directory (default: --out-dir)");
  report->add_option("--format", ra.format, "csv or text")->capture_default_str();
  report->add_option("--tolerance", ra.tolerance, "Allowed difference to bias_table.csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(g, sim);
    if (*true_gvim) return run_true_gvim(g, tg);
    if (*estimate) return run_estimate(g, est);
    if (*bias) return run_bias(g, bias_args);
    if (*fullset) return run_fullset(g, fullset_args);
    if (*verify) return run_verify(g, va);
    if (*report) return run_report(g, ra);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return kExitUsage;
}

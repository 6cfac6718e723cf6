// credexp command-line driver.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "credexp/evaluation.hpp"
#include "credexp/io.hpp"

namespace fs = std::filesystem;
using namespace credexp;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string model;
  std::string data;
  std::string instance;
  std::string kernel = "exponential";
  double kernel_width = 0.0;
  std::string distance = "cosine";
  double clamp_weight = 1e6;
  double prior_n0 = 1e-6;
  double prior_sigma0 = 1e-6;
  double alpha = 0.95;
  std::string strategy = "random";  // stability defaults to focused
  std::size_t S = 50;
  std::size_t B = 10;
  std::size_t A = 500;
  std::size_t budget = 500;
  std::optional<double> stop_width;
  double temperature = 1.0;
  std::string ptg_convention = "full";
  std::uint64_t seed = 0;
  std::string out;
  bool plot = false;
  std::vector<double> targets = {0.05, 0.1, 0.2, 0.4};
  std::size_t seeds = 20;
  std::size_t calib_seeds = 1;
  std::size_t n_fit = 100;
  std::size_t n_gt = 10'000;
  std::size_t per_model = 40;
  std::size_t instances = 40;
  double noise = 0.0;
  double epsilon = 0.1;
  std::size_t neighbors = 25;
  std::vector<double> n0_grid = {1e-5, 1e-1, 1, 10, 100};
  std::vector<double> sigma0_grid = {1e-5, 1e-1, 1, 10, 100};
  std::size_t threads = 0;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--model", o.model, "Model spec (JSON)");
  cmd->add_option("--data", o.data, "Numeric CSV dataset with a header row");
  cmd->add_option("--instance", o.instance, "Row index into --data, comma-separated values, or instance JSON");
  cmd->add_option("--kernel", o.kernel, "exponential | shapley")->check(CLI::IsMember({"exponential", "shapley"}));
  cmd->add_option("--kernel-width", o.kernel_width, "Exponential kernel width (0 = 0.75 sqrt(d))");
  cmd->add_option("--distance", o.distance, "cosine | l2")->check(CLI::IsMember({"cosine", "l2"}));
  cmd->add_option("--clamp-weight", o.clamp_weight, "Shapley weight for the empty and full coalitions");
  cmd->add_option("--prior-n0", o.prior_n0, "Prior pseudo-count n0");
  cmd->add_option("--prior-sigma0", o.prior_sigma0, "Prior scale sigma0^2");
  cmd->add_option("--alpha", o.alpha, "Credible level");
  cmd->add_option("--strategy", o.strategy, "random | focused")->check(CLI::IsMember({"random", "focused"}));
  cmd->add_option("--S", o.S, "Seed perturbations");
  cmd->add_option("--B", o.B, "Batch size");
  cmd->add_option("--A", o.A, "Candidate pool size");
  cmd->add_option("--budget", o.budget, "Maximum sampled perturbations");
  cmd->add_option("--stop-width", o.stop_width, "Stop once every interval is at most this wide");
  cmd->add_option("--temperature", o.temperature, "Softmax temperature for focused sampling");
  cmd->add_option("--ptg-convention", o.ptg_convention, "full | half")->check(CLI::IsMember({"full", "half"}));
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--out", o.out, "Output directory (default: $CREDEXP_OUT or .)");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = hardware)");
}

ProximityKernel make_kernel(const Options& o) {
  if (o.kernel == "shapley") return ProximityKernel::shapley(o.clamp_weight);
  return ProximityKernel::exponential(o.kernel_width, o.distance == "l2" ? DistanceKind::L2 : DistanceKind::Cosine);
}

PriorConfig make_prior(const Options& o) {
  PriorConfig p{o.prior_n0, o.prior_sigma0};
  p.validate();
  return p;
}

WidthConvention convention(const Options& o) {
  return o.ptg_convention == "half" ? WidthConvention::Half : WidthConvention::Full;
}

SamplingConfig make_sampling(const Options& o) {
  SamplingConfig c;
  c.strategy = o.strategy == "focused" ? Strategy::Focused : Strategy::Random;
  c.S = o.S;
  c.B = o.B;
  c.A = o.A;
  c.budget = o.budget;
  c.stop_width = o.stop_width;
  c.stop_alpha = o.alpha;
  c.temperature = o.temperature;
  c.seed = o.seed;
  c.prior = make_prior(o);
  c.alpha = o.alpha;
  c.validate();
  return c;
}

fs::path output_dir(const Options& o) {
  fs::path dir = o.out;
  if (dir.empty()) {
    const char* env = std::getenv("CREDEXP_OUT");
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

Provenance provenance(const std::string& command, const Options& o) {
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v[i]);
    return s;
  };
  Provenance p = {{"command", command},
                  {"model", o.model.empty() ? "(bundled)" : o.model},
                  {"data", o.data},
                  {"instance", o.instance},
                  {"kernel", make_kernel(o).describe()},
                  {"prior_n0", format_double(o.prior_n0)},
                  {"prior_sigma0_sq", format_double(o.prior_sigma0)},
                  {"alpha", format_double(o.alpha)},
                  {"seed", std::to_string(o.seed)}};
  if (command == "explain" || command == "compare-sampling" || command == "stability") {
    p.insert(p.end(), {{"strategy", o.strategy},
                       {"S", std::to_string(o.S)},
                       {"B", std::to_string(o.B)},
                       {"A", std::to_string(o.A)},
                       {"budget", std::to_string(o.budget)},
                       {"stop_width", o.stop_width ? format_double(*o.stop_width) : "none"},
                       {"temperature", format_double(o.temperature)}});
  }
  if (command == "ptg") {
    p.insert(p.end(), {{"S", std::to_string(o.S)}, {"ptg_convention", o.ptg_convention}, {"targets", list(o.targets)}});
  }
  if (command == "compare-sampling") p.push_back({"seeds", std::to_string(o.seeds)});
  if (command == "calibrate" || command == "sensitivity") {
    p.insert(p.end(), {{"n_fit", std::to_string(o.n_fit)},
                       {"n_gt", std::to_string(o.n_gt)},
                       {"seeds", std::to_string(o.calib_seeds)},
                       {"per_model", std::to_string(o.per_model)},
                       {"noise", format_double(o.noise)}});
  }
  if (command == "sensitivity") {
    p.insert(p.end(), {{"n0_grid", list(o.n0_grid)}, {"sigma0_grid", list(o.sigma0_grid)}});
  }
  if (command == "stability") {
    p.insert(p.end(), {{"epsilon", format_double(o.epsilon)},
                       {"neighbors", std::to_string(o.neighbors)},
                       {"instances", std::to_string(o.instances)}});
  }
  return p;
}

std::unique_ptr<BlackBoxModel> require_model(const Options& o) {
  if (o.model.empty()) throw UsageError("--model is required for this command");
  return load_model(o.model);
}

std::optional<Dataset> maybe_dataset(const Options& o) {
  if (o.data.empty()) return std::nullopt;
  return load_dataset(o.data);
}

/// --instance as a dataset row index, a comma-separated vector, or a JSON file.
InstanceContext resolve_instance(const Options& o, const std::optional<Dataset>& data, std::size_t model_dim) {
  const Dataset* dp = data ? &*data : nullptr;
  const std::string& s = o.instance;
  if (s.empty()) {
    if (!dp) throw UsageError("--instance is required (or --data to explain row 0)");
    nlohmann::json j = {{"row", 0}};
    return instance_from_json(j, "--instance", dp);
  }
  if (s.find_first_not_of("0123456789") == std::string::npos) {
    if (!dp) throw UsageError("a row index for --instance needs --data");
    nlohmann::json j = {{"row", std::stoull(s)}};
    return instance_from_json(j, "--instance", dp);
  }
  if (s.find(',') != std::string::npos || s.find_first_not_of("0123456789.-+eE ") == std::string::npos) {
    nlohmann::json j;
    std::vector<double> x;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        x.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw UsageError("--instance: '" + cell + "' is not a number");
      }
    }
    j["instance"] = x;
    if (!dp) j["baseline"] = "zeros";
    auto ctx = instance_from_json(j, "--instance", dp);
    if (ctx.original_dim() != model_dim)
      throw UsageError("--instance has " + std::to_string(ctx.original_dim()) + " values, model expects " +
                       std::to_string(model_dim));
    return ctx;
  }
  return load_instance(s, dp);
}

int cmd_explain(const Options& o) {
  const auto model = require_model(o);
  const auto data = maybe_dataset(o);
  const auto ctx = resolve_instance(o, data, model->input_dim());
  const auto kernel = make_kernel(o);
  const auto cfg = make_sampling(o);
  const auto res = run_sampling(ctx, *model, kernel, cfg);
  const auto dir = output_dir(o);
  const auto prov = provenance("explain", o);
  const auto names = ctx.feature_names();

  write_text_file(dir / "explanation.json",
                  explanation_document(res.explanation, names, kernel.describe(), o.seed, prov).dump(2) + "\n");

  CsvWriter csv(dir / "explanation.csv", prov, {"feature", "phi_hat", "interval_low", "interval_high", "width"});
  const auto phi = res.explanation.feature_importances();
  const auto ivs = res.explanation.feature_intervals();
  for (std::size_t j = 0; j < names.size(); ++j)
    csv.row({names[j], format_double(phi[static_cast<Eigen::Index>(j)]),
             format_double(ivs[j].low), format_double(ivs[j].high), format_double(ivs[j].width())});
  csv.close();

  CsvWriter trace(dir / "trace.csv", prov,
                  {"strategy", "seed", "queries", "max_ci_width", "error_density", "l1_to_ref"});
  for (const auto& r : res.trace.records)
    trace.row({to_string(res.trace.strategy), std::to_string(o.seed), std::to_string(r.queries),
               format_double(r.max_ci_width), format_double(r.error_density), format_double(r.l1_to_ref)});
  trace.close();

  if (o.plot) write_text_file(dir / "explanation.svg", explanation_svg(res.explanation, names));
  std::cout << "wrote " << (dir / "explanation.json").string() << " (N=" << res.explanation.N
            << ", queries=" << res.trace.records.back().queries << ")\n";
  return 0;
}

int cmd_ptg(const Options& o) {
  const auto model = require_model(o);
  const auto data = maybe_dataset(o);
  const auto ctx = resolve_instance(o, data, model->input_dim());
  const auto kernel = make_kernel(o);
  const auto prior = make_prior(o);
  if (o.targets.empty()) throw UsageError("--targets must list at least one width");
  const auto dir = output_dir(o);
  const std::vector<std::string> header = {"W", "S", "s_sq_S", "pi_bar_S", "m", "raw", "G", "total", "capped",
                                           "observed_width"};
  CsvWriter csv(dir / "ptg.csv", provenance("ptg", o), header);
  std::cout << "W,S,s_sq_S,pi_bar_S,m,raw,G,total,capped,observed_width\n";
  for (double W : o.targets) {
    const auto run = seed_then_estimate(ctx, *model, kernel, o.S, W, o.alpha, o.seed, convention(o), prior);
    const auto post = explain_random(ctx, *model, kernel, run.estimate.total, o.seed, prior, o.alpha);
    const std::vector<std::string> row = {format_double(W),
                                          std::to_string(o.S),
                                          format_double(run.inputs.s_sq_S),
                                          format_double(run.inputs.pi_bar_S),
                                          format_double(run.estimate.multiplier),
                                          format_double(run.estimate.raw),
                                          std::to_string(run.estimate.G),
                                          std::to_string(run.estimate.total),
                                          run.estimate.capped ? "1" : "0",
                                          format_double(observed_width(post, convention(o)))};
    csv.row(row);
    for (std::size_t i = 0; i < row.size(); ++i) std::cout << (i ? "," : "") << row[i];
    std::cout << "\n";
    if (run.estimate.capped) std::cerr << "warning: G capped for W=" << W << "\n";
  }
  csv.close();
  return 0;
}

int cmd_compare(const Options& o) {
  const auto kernel = make_kernel(o);
  auto cfg = make_sampling(o);
  const auto dir = output_dir(o);
  CsvWriter csv(dir / "compare_sampling.csv", provenance("compare-sampling", o),
                {"strategy", "seed", "queries", "max_ci_width", "error_density", "l1_to_ref"});
  std::unique_ptr<BlackBoxModel> model;
  std::optional<InstanceContext> ctx;
  if (!o.model.empty()) {
    model = load_model(o.model);
    ctx = resolve_instance(o, maybe_dataset(o), model->input_dim());
  }
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t s = o.seed + k;
    const SuiteCase c = model ? SuiteCase{"user", "user", nullptr, *ctx} : heteroscedastic_case(s);
    const BlackBoxModel& m = model ? *model : *c.model;
    cfg.seed = derive_seed(s, 5);
    const Eigen::VectorXd ref =
        ground_truth_importances(c.ctx, m, kernel, std::max<std::size_t>(10'000, 10 * cfg.budget),
                                 derive_seed(s, 1), cfg.prior);
    for (Strategy st : {Strategy::Random, Strategy::Focused}) {
      cfg.strategy = st;
      const auto res = run_sampling(c.ctx, m, kernel, cfg, &ref);
      for (const auto& r : res.trace.records)
        csv.row({to_string(st), std::to_string(s), std::to_string(r.queries), format_double(r.max_ci_width),
                 format_double(r.error_density), format_double(r.l1_to_ref)});
    }
  }
  csv.close();
  std::cout << "wrote " << (dir / "compare_sampling.csv").string() << "\n";
  return 0;
}

std::vector<SuiteCase> calibration_cases(const Options& o) {
  if (o.model.empty()) {
    SuiteOptions so;
    so.per_model = o.per_model;
    so.seed = 123 + o.seed;
    so.noise_sd = o.noise;
    return synthetic_suite(so);
  }
  std::shared_ptr<const BlackBoxModel> model = load_model(o.model);
  const auto data = maybe_dataset(o);
  if (!data) throw UsageError("calibrating a user model needs --data for the instances");
  std::vector<SuiteCase> cases;
  const std::size_t n = std::min(o.per_model, data->rows.size());
  for (std::size_t k = 0; k < n; ++k) {
    const auto ctx = instance_from_json(nlohmann::json{{"row", k}}, o.data, &*data);
    cases.push_back({"user", "user#" + std::to_string(k), model, ctx});
  }
  return cases;
}

std::vector<std::uint64_t> seed_list(const Options& o) {
  std::vector<std::uint64_t> s;
  for (std::size_t k = 0; k < o.calib_seeds; ++k) s.push_back(o.seed + k);
  return s;
}

int cmd_calibrate(const Options& o) {
  const auto cases = calibration_cases(o);
  CoverageOptions co;
  co.n_fit = o.n_fit;
  co.n_gt = o.n_gt;
  co.alpha = o.alpha;
  co.prior = make_prior(o);
  co.seeds = seed_list(o);
  co.threads = o.threads;
  const auto rep = coverage_calibration(cases, make_kernel(o), co);
  const auto dir = output_dir(o);
  CsvWriter csv(dir / "calibration.csv", provenance("calibrate", o),
                {"dataset", "pairs", "hits", "coverage", "se", "alpha", "n_fit", "n_gt"});
  auto emit = [&](const std::string& name, std::size_t pairs, std::size_t hits, double cov, double se) {
    csv.row({name, std::to_string(pairs), std::to_string(hits), format_double(cov), format_double(se),
             format_double(rep.alpha), std::to_string(rep.n_fit), std::to_string(rep.n_gt)});
  };
  for (const auto& r : rep.per_dataset) emit(r.dataset, r.pairs, r.hits, r.coverage, r.se);
  emit("all", rep.pairs, rep.hits, rep.coverage, rep.se);
  csv.close();
  std::cout << "coverage " << format_double(rep.coverage) << " +/- " << format_double(rep.se) << " over " << rep.pairs
            << " pairs\n";
  return 0;
}

int cmd_sensitivity(const Options& o) {
  const auto cases = calibration_cases(o);
  CoverageOptions co;
  co.n_fit = o.n_fit;
  co.n_gt = o.n_gt;
  co.alpha = o.alpha;
  co.seeds = seed_list(o);
  co.threads = o.threads;
  const auto grid = prior_sensitivity_grid(o.n0_grid, o.sigma0_grid, cases, make_kernel(o), co);
  const auto dir = output_dir(o);
  CsvWriter csv(dir / "sensitivity.csv", provenance("sensitivity", o), {"n0", "sigma0_sq", "coverage", "se", "pairs"});
  for (const auto& c : grid)
    csv.row({format_double(c.n0), format_double(c.sigma0_sq), format_double(c.report.coverage),
             format_double(c.report.se), std::to_string(c.report.pairs)});
  csv.close();
  std::cout << "wrote " << (dir / "sensitivity.csv").string() << "\n";
  return 0;
}

int cmd_stability(const Options& o) {
  std::shared_ptr<const BlackBoxModel> model = require_model(o);
  const auto data = maybe_dataset(o);
  std::vector<InstanceContext> instances;
  StabilityOptions so;
  so.epsilon = o.epsilon;
  so.n_neighbors = o.neighbors;
  so.seed = o.seed;
  so.threads = o.threads;
  if (data) {
    for (std::size_t k = 0; k < std::min(o.instances, data->rows.size()); ++k)
      instances.push_back(instance_from_json(nlohmann::json{{"row", k}}, o.data, &*data));
    so.lower = data->mins();
    so.upper = data->maxs();
  } else {
    std::mt19937_64 rng(derive_seed(o.seed, 77));
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t k = 0; k < o.instances; ++k) {
      std::vector<double> x(model->input_dim());
      for (auto& v : x) v = 1.5 * n01(rng);
      instances.push_back(InstanceContext::tabular(x, std::vector<double>(x.size(), 0.0)));
    }
  }
  const auto kernel = make_kernel(o);
  const auto cfg = make_sampling(o);
  const auto rep = lipschitz_stability(bayes_explainer(model, kernel, cfg), plain_wls_explainer(model, kernel, cfg.budget),
                                       instances, so);
  const auto dir = output_dir(o);
  CsvWriter csv(dir / "stability.csv", provenance("stability", o),
                {"instance", "lipschitz_bayes", "lipschitz_wls", "improvement_pct"});
  for (std::size_t i = 0; i < instances.size(); ++i)
    csv.row({std::to_string(i), format_double(rep.lipschitz_a[i]), format_double(rep.lipschitz_b[i]),
             format_double(rep.improvement_pct[i])});
  csv.close();
  std::cout << "median improvement " << format_double(rep.median_improvement_pct) << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian local explanations with credible intervals"};
  app.require_subcommand(1);
  Options o;

  auto* explain = app.add_subcommand("explain", "Explain one instance");
  add_common(explain, o);
  explain->add_flag("--plot", o.plot, "Also write explanation.svg");

  auto* ptg = app.add_subcommand("ptg", "Perturbations needed for target interval widths");
  add_common(ptg, o);
  ptg->add_option("--targets", o.targets, "Target widths")->delimiter(',');

  auto* compare = app.add_subcommand("compare-sampling", "Random vs focused sampling traces");
  add_common(compare, o);
  compare->add_option("--seeds", o.seeds, "Number of paired seeds");

  auto* calibrate = app.add_subcommand("calibrate", "Credible-interval coverage");
  add_common(calibrate, o);
  calibrate->add_option("--seeds", o.calib_seeds, "Seeds per instance");
  calibrate->add_option("--n-fit", o.n_fit, "Perturbations per fit");
  calibrate->add_option("--n-gt", o.n_gt, "Perturbations for the reference fit");
  calibrate->add_option("--per-model", o.per_model, "Instances per suite family (or dataset rows)");
  calibrate->add_option("--noise", o.noise, "Logit noise sd on the suite's logistic families");

  auto* stability = app.add_subcommand("stability", "Local Lipschitz stability vs plain weighted least squares");
  add_common(stability, o);
  stability->add_option("--epsilon", o.epsilon, "L-infinity ball radius in normalised units");
  stability->add_option("--neighbors", o.neighbors, "Neighbours per instance");
  stability->add_option("--instances", o.instances, "Instances to evaluate");

  auto* sensitivity = app.add_subcommand("sensitivity", "Coverage over a (n0, sigma0^2) grid");
  add_common(sensitivity, o);
  sensitivity->add_option("--seeds", o.calib_seeds, "Seeds per instance");
  sensitivity->add_option("--n-fit", o.n_fit, "Perturbations per fit");
  sensitivity->add_option("--n-gt", o.n_gt, "Perturbations for the reference fit");
  sensitivity->add_option("--per-model", o.per_model, "Instances per suite family (or dataset rows)");
  sensitivity->add_option("--noise", o.noise, "Logit noise sd on the suite's logistic families");
  sensitivity->add_option("--n0-grid", o.n0_grid, "n0 values")->delimiter(',');
  sensitivity->add_option("--sigma0-grid", o.sigma0_grid, "sigma0^2 values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*stability && stability->count("--strategy") == 0) o.strategy = "focused";

  try {
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw UsageError("--alpha must be in (0,1)");
    if (*explain) return cmd_explain(o);
    if (*ptg) return cmd_ptg(o);
    if (*compare) return cmd_compare(o);
    if (*calibrate) return cmd_calibrate(o);
    if (*stability) return cmd_stability(o);
    if (*sensitivity) return cmd_sensitivity(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

// Command-line front end: desk-scale experiment drivers with machine-readable
// CSV/JSON outputs. Every run directory gets a config echo; exit code is 0
// only when the command's internal checks pass.

#include <CLI11.hpp>
#include <json.hpp>

#include "bilip/experiments.hpp"
#include "bilip/serialize.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bilip;

namespace {

struct RunDir {
  fs::path dir;

  void write(const std::string& name, const std::string& content) const {
    write_file((dir / name).string(), content);
  }
  std::ofstream stream(const std::string& name) const {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + (dir / name).string());
    return f;
  }
};

RunDir make_run_dir(const std::string& out_root, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
  fs::path base = fs::path(out_root) / command;
  fs::create_directories(base);
  fs::path dir = base / stamp;
  for (int k = 1; fs::exists(dir); ++k) dir = base / (std::string(stamp) + "-" + std::to_string(k));
  fs::create_directories(dir);
  return RunDir{dir};
}

// flags win over the config file; the file fills anything left at defaults
json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(read_file(path));
}

template <typename T>
void from_config(const json& cfg, const char* key, T& value, const CLI::Option* opt) {
  if (opt->count() == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

std::string json_echo(const json& j) { return j.dump(2) + "\n"; }

json solver_json(const SolverConfig& cfg) {
  json j;
  j["kind"] = to_string(cfg.kind);
  j["tol"] = cfg.tol;
  j["max_iters"] = cfg.max_iters;
  switch (cfg.step.kind) {
    case StepPolicy::Kind::decreasing: j["step"] = {{"policy", "decreasing"}, {"value", cfg.step.value}}; break;
    case StepPolicy::Kind::inverse_smoothness: j["step"] = {{"policy", "inverse_smoothness"}, {"value", cfg.step.value}}; break;
    case StepPolicy::Kind::fixed: j["step"] = {{"policy", "fixed"}, {"value", cfg.step.value}}; break;
  }
  j["adaptive_defaults"] = {{"adagrad_eps", cfg.adagrad_eps},
                            {"rmsprop_decay", cfg.rmsprop_decay},
                            {"rmsprop_eps", cfg.rmsprop_eps},
                            {"adam_beta1", cfg.adam_beta1},
                            {"adam_beta2", cfg.adam_beta2},
                            {"adam_eps", cfg.adam_eps}};
  return j;
}

int cmd_tightness(const std::string& out, const json& cfg_file, std::string model, std::vector<double> Ls,
                  int n_seeds, int epochs, std::uint64_t seed0, int threads) {
  const RunDir run = make_run_dir(out, "tightness");
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < n_seeds; ++s) seeds.push_back(seed0 + std::uint64_t(s));

  json echo{{"command", "tightness"}, {"model", model}, {"L", Ls}, {"seeds", seeds},
            {"epochs", epochs}, {"batch_size", 32}, {"outer", "adam"}, {"lr", 0.01},
            {"lr_step", {{"epoch", (7 * epochs) / 10}, {"factor", 0.1}}},
            {"estimate", {{"samples", 1000}, {"range", {-1.0, 1.0}}}}};
  (void)cfg_file;
  run.write("config.json", json_echo(echo));

  const TightnessResult res =
      run_tightness(regression_kind_from_string(model), Ls, seeds, epochs, threads);
  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"L", "seed", "lip_hat", "invlip_hat", "tightness_pct", "final_loss", "seconds"});
  for (const TightnessRow& r : res.rows)
    csv.row({r.L, double(r.seed), r.lip_hat, r.invlip_hat, r.tightness_pct, r.final_loss,
             r.seconds});

  json metrics;
  for (double L : Ls) {
    metrics["mean_tightness"][format_double(L)] = res.mean_tightness(L);
    metrics["std_tightness"][format_double(L)] = res.std_tightness(L);
  }
  run.write("metrics.json", json_echo(metrics));
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_flexibility(const std::string& out, std::string model, double L, double slope, int epochs,
                    std::uint64_t seed) {
  const RunDir run = make_run_dir(out, "flexibility");
  json echo{{"command", "flexibility"}, {"model", model}, {"L", L}, {"slope", slope},
            {"epochs", epochs}, {"seed", seed}, {"test_grid", {{"n", 2000}, {"range", {-1.0, 1.0}}}}};
  run.write("config.json", json_echo(echo));

  const FlexibilityResult res =
      run_flexibility(regression_kind_from_string(model), L, slope, epochs, seed);
  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"L", "slope", "final_train_loss", "test_mse", "lip_hat"});
  csv.row({L, slope, res.final_train_loss, res.test_mse, res.lip_hat});
  run.write("metrics.json", json_echo(json{{"final_train_loss", res.final_train_loss},
                                           {"test_mse", res.test_mse},
                                           {"lip_hat", res.lip_hat}}));
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_summary_sweep(const std::string& out, std::string model, std::vector<double> Ls,
                      double slope, int epochs, double threshold, std::uint64_t seed,
                      int threads) {
  const RunDir run = make_run_dir(out, "summary-sweep");
  json echo{{"command", "summary-sweep"}, {"model", model}, {"L", Ls}, {"slope", slope},
            {"epochs", epochs}, {"loss_threshold", threshold}, {"seed", seed}};
  run.write("config.json", json_echo(echo));

  const auto rows =
      run_summary_sweep(regression_kind_from_string(model), Ls, slope, epochs, threshold, seed,
                        threads);
  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"L", "final_loss", "first_epoch_below_threshold"});
  for (const SweepRow& r : rows) csv.row({r.L, r.final_loss, double(r.first_epoch_below)});
  run.write("metrics.json", json_echo(json{{"rows", rows.size()}}));
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_init_dist(const std::string& out, double alpha, double beta, int trials,
                  std::string activation, std::string init, double lo, double hi,
                  bool compare_uniform, std::uint64_t seed, int threads) {
  const RunDir run = make_run_dir(out, "init-dist");
  json echo{{"command", "init-dist"}, {"alpha", alpha}, {"beta", beta}, {"trials", trials},
            {"activation", activation}, {"init", init}, {"seed", seed},
            {"architecture", {{"input_dim", 2}, {"hidden", {10, 10, 10}}}},
            {"estimate_points", 200}};
  if (init == "uniform") echo["init_range"] = {lo, hi};
  run.write("config.json", json_echo(echo));

  const InitScheme scheme =
      init == "uniform" ? InitScheme::uniform(lo, hi) : InitScheme::xavier_clamp();
  const ActivationKind act = activation_from_string(activation);
  const InitDistResult res = run_init_dist(alpha, beta, trials, scheme, act, seed, 200, threads);

  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"trial", "lip_hat", "invlip_hat"});
  for (size_t i = 0; i < res.lips.size(); ++i)
    csv.row({double(i), res.lips[i], res.invlips[i]});

  json metrics{{"frac_lip_within_5pct", res.frac_lip_within(0.05)},
               {"all_within_bounds", res.all_within(alpha, alpha + beta, 1e-3)}};
  if (compare_uniform) {
    const InitDistResult alt = run_init_dist(alpha, beta, trials, InitScheme::uniform(1.0, 1.1),
                                             act, seed, 200, threads);
    metrics["ks_invlip_vs_uniform_1.0_1.1"] = ks_statistic(res.invlips, alt.invlips);
    metrics["ks_lip_vs_uniform_1.0_1.1"] = ks_statistic(res.lips, alt.lips);
  }
  run.write("metrics.json", json_echo(metrics));
  if (!res.all_within(alpha, alpha + beta, 1e-3))
    throw std::runtime_error("init-dist: estimates escaped the certified interval");
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_lft_bench(const std::string& out, std::vector<std::string> kind_names, double beta,
                  long iters, int points, std::uint64_t seed) {
  const RunDir run = make_run_dir(out, "lft-bench");
  std::vector<SolverKind> kinds;
  for (const std::string& k : kind_names) kinds.push_back(solver_kind_from_string(k));

  const LftBenchResult res = run_lft_bench(kinds, beta, 2, 10, 2, iters, points, seed);
  json echo{{"command", "lft-bench"}, {"kinds", kind_names}, {"beta", beta}, {"iters", iters},
            {"points", points}, {"seed", seed}, {"mu", res.mu}, {"gamma_hat", res.gamma_hat},
            {"architecture", {{"input_dim", 2}, {"hidden", {10, 10}}}},
            {"solver_defaults", solver_json(SolverConfig::for_kind(SolverKind::adam, res.mu,
                                                                   res.gamma_hat))}};
  run.write("config.json", json_echo(echo));

  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"kind", "t", "lip_hat", "invlip_hat"});
  for (const LftBenchTrace& tr : res.traces)
    for (size_t i = 0; i < tr.t.size(); ++i)
      csv.row_mixed({to_string(tr.kind), std::to_string(tr.t[i]), format_double(tr.lip[i]),
                     format_double(tr.invlip[i])});

  json metrics{{"mu", res.mu}, {"gamma_hat", res.gamma_hat}};
  for (const LftBenchTrace& tr : res.traces) {
    metrics["final_lip"][to_string(tr.kind)] = tr.lip.back();
    metrics["final_invlip"][to_string(tr.kind)] = tr.invlip.back();
  }
  run.write("metrics.json", json_echo(metrics));
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_anneal(const std::string& out, int epochs, double start_bound, int period,
               double closeness, double growth, std::uint64_t seed) {
  const RunDir run = make_run_dir(out, "anneal");
  json echo{{"command", "anneal"}, {"epochs", epochs}, {"start_bound", start_bound},
            {"check_period", period}, {"closeness", closeness}, {"growth", growth},
            {"seed", seed}, {"target", "exp"}};
  run.write("config.json", json_echo(echo));

  const auto rows = run_anneal(epochs, start_bound, period, closeness, growth, seed);
  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"epoch", "bound", "lip_hat", "loss"});
  for (const AnnealRow& r : rows) csv.row({double(r.epoch), r.bound, r.lip_hat, r.loss});
  run.write("metrics.json",
            json_echo(json{{"final_bound", rows.back().bound}, {"final_loss", rows.back().loss}}));
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_two_moons(const std::string& out, double alpha, double beta, int epochs, int grid,
                  std::uint64_t seed) {
  const RunDir run = make_run_dir(out, "two-moons");
  json echo{{"command", "two-moons"}, {"alpha", alpha}, {"beta", beta}, {"epochs", epochs},
            {"grid_resolution", grid}, {"seed", seed},
            {"data", {{"train", 1500}, {"test", 200}, {"noise", 0.1}}},
            {"optimizer", {{"kind", "sgd"}, {"lr", 0.01}, {"momentum", 0.9}, {"weight_decay", 1e-4}}},
            {"head", {{"classes", 2}, {"feature_dim", 40}, {"centroid_dim", 10}, {"sigma", 0.1}, {"gamma", 0.999}}}};
  run.write("config.json", json_echo(echo));

  const TwoMoonsResult res = run_two_moons(alpha, beta, epochs, seed, grid);
  auto grid_stream = run.stream("results.csv");
  CsvWriter csv(grid_stream);
  csv.header({"x", "y", "certainty"});
  for (long i = 0; i < res.report.grid.rows(); ++i)
    csv.row({res.report.grid(i, 0), res.report.grid(i, 1), res.report.grid(i, 2)});
  run.write("metrics.json", json_echo(json{{"accuracy", res.report.accuracy},
                                           {"auroc_vs_uniform", res.report.auroc_uniform},
                                           {"final_loss", res.report.final_loss}}));
  std::cout << run.dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& out, int nets, std::uint64_t seed) {
  const RunDir run = make_run_dir(out, "gradcheck");
  json echo{{"command", "gradcheck"}, {"nets", nets}, {"seed", seed}};
  run.write("config.json", json_echo(echo));

  const GradcheckResult res = run_gradcheck(nets, seed);
  auto csv_stream = run.stream("results.csv");
  CsvWriter csv(csv_stream);
  csv.header({"max_rel_err_fd", "max_rel_err_unrolled"});
  csv.row({res.max_rel_err_fd, res.max_rel_err_unrolled});
  run.write("metrics.json", json_echo(json{{"max_rel_err_fd", res.max_rel_err_fd},
                                           {"max_rel_err_unrolled", res.max_rel_err_unrolled}}));
  std::cout << run.dir.string() << "\n";
  if (res.max_rel_err_fd >= 1e-4 || res.max_rel_err_unrolled >= 1e-4)
    throw std::runtime_error("gradcheck: implicit gradients drifted past 1e-4 relative error");
  return 0;
}

int cmd_estimate(const std::string& out, std::string model_file, double lo, double hi,
                 int samples, double min_sep, std::uint64_t seed) {
  const RunDir run = make_run_dir(out, "estimate");
  const BlnnBundle bundle = blnn_from_json(read_file(model_file));
  json echo{{"command", "estimate"}, {"model_file", model_file}, {"domain", {lo, hi}},
            {"samples", samples}, {"min_sep", min_sep}, {"seed", seed},
            {"solver", solver_json(bundle.solver_defaults)}};
  run.write("config.json", json_echo(echo));

  const Blnn& model = bundle.model;
  const int d = model.dim();
  SolverConfig solver = bundle.solver_defaults;
  PairSampler sampler;
  sampler.lo = Vector::Constant(d, lo);
  sampler.hi = Vector::Constant(d, hi);
  sampler.n_samples = samples;
  sampler.seed = seed;
  sampler.min_sep = min_sep;
  const BiLipEstimate est = estimate_bilip(
      [&](const Vector& x) { return blnn_forward(model, x, solver).output; }, sampler);
  run.write("metrics.json", estimate_to_json(est) + "\n");
  if (est.invlip_hat > est.lip_hat)
    throw std::runtime_error("estimate: invariant violated (invlip > lip)");
  std::cout << run.dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bi-Lipschitz network experiments"};
  app.require_subcommand(1);

  std::string out = "runs";
  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--out", out, "output directory root");
  app.add_option("--config", config_path, "JSON config file (flags take precedence)");
  app.add_option("--seed", seed, "base seed");
  app.add_option("--threads", threads, "worker threads for sweeps");

  // tightness
  auto* tight = app.add_subcommand("tightness", "step-function fit: tightness of the budget");
  std::string t_model = "blnn";
  std::vector<double> t_L = {5.0, 10.0, 50.0};
  int t_seeds = 5, t_epochs = 2500;
  auto* t_model_o = tight->add_option("--model", t_model, "blnn or sn");
  auto* t_L_o = tight->add_option("--L", t_L, "Lipschitz budgets");
  auto* t_seeds_o = tight->add_option("--seeds", t_seeds, "number of seeds");
  auto* t_epochs_o = tight->add_option("--epochs", t_epochs, "training epochs");

  // flexibility
  auto* flex = app.add_subcommand("flexibility", "linear fit under an overestimated budget");
  std::string f_model = "blnn";
  double f_L = 1000.0, f_slope = 1.0;
  int f_epochs = 1500;
  auto* f_model_o = flex->add_option("--model", f_model, "blnn or sn");
  auto* f_L_o = flex->add_option("--L", f_L, "Lipschitz budget");
  auto* f_slope_o = flex->add_option("--slope", f_slope, "target slope");
  auto* f_epochs_o = flex->add_option("--epochs", f_epochs, "training epochs");

  // summary sweep
  auto* sweep = app.add_subcommand("summary-sweep", "loss vs budget for y = slope x");
  std::string s_model = "blnn";
  std::vector<double> s_L = {25, 35, 45, 55, 65, 75, 85, 100, 125};
  double s_slope = 50.0, s_threshold = 0.5;
  int s_epochs = 1500;
  auto* s_model_o = sweep->add_option("--model", s_model, "blnn or sn");
  auto* s_L_o = sweep->add_option("--L", s_L, "budget grid");
  auto* s_slope_o = sweep->add_option("--slope", s_slope, "target slope");
  auto* s_epochs_o = sweep->add_option("--epochs", s_epochs, "training epochs");
  auto* s_threshold_o = sweep->add_option("--threshold", s_threshold, "loss threshold");

  // init-dist
  auto* init = app.add_subcommand("init-dist", "bi-Lipschitz constants at initialization");
  double i_alpha = 4.0, i_beta = 60.0, i_lo = 0.0, i_hi = 1.0;
  int i_trials = 100;
  std::string i_act = "softplus", i_init = "xavier_clamp";
  bool i_compare = false;
  auto* i_alpha_o = init->add_option("--alpha", i_alpha, "inverse-Lipschitz parameter");
  auto* i_beta_o = init->add_option("--beta", i_beta, "Lipschitz budget minus alpha");
  auto* i_trials_o = init->add_option("--trials", i_trials, "number of models");
  auto* i_act_o = init->add_option("--activation", i_act, "softplus or relu");
  auto* i_init_o = init->add_option("--init", i_init, "xavier_clamp or uniform");
  auto* i_lo_o = init->add_option("--init-lo", i_lo, "uniform init lower bound");
  auto* i_hi_o = init->add_option("--init-hi", i_hi, "uniform init upper bound");
  init->add_flag("--compare-uniform", i_compare, "also run uniform(1.0,1.1) and report KS stats");

  // lft-bench
  auto* bench = app.add_subcommand("lft-bench", "bi-Lipschitz evolution across solver kinds");
  std::vector<std::string> b_kinds = {"gd", "agd", "newton", "adagrad", "rmsprop", "adam"};
  double b_beta = 10.0;
  long b_iters = 200;
  int b_points = 300;
  auto* b_kinds_o = bench->add_option("--kinds", b_kinds, "solver kinds");
  auto* b_beta_o = bench->add_option("--beta", b_beta, "strong-convexity budget");
  auto* b_iters_o = bench->add_option("--iters", b_iters, "iterations to trace");
  auto* b_points_o = bench->add_option("--points", b_points, "sample points");

  // anneal
  auto* anneal = app.add_subcommand("anneal", "elastic budget growth while fitting exp");
  int a_epochs = 200, a_period = 5;
  double a_start = 2.0, a_close = 0.05, a_growth = 1.5;
  auto* a_epochs_o = anneal->add_option("--epochs", a_epochs, "training epochs");
  auto* a_start_o = anneal->add_option("--start-bound", a_start, "initial budget");
  auto* a_period_o = anneal->add_option("--period", a_period, "epochs between checks");
  auto* a_close_o = anneal->add_option("--closeness", a_close, "trigger distance");
  auto* a_growth_o = anneal->add_option("--growth", a_growth, "budget growth factor");

  // two-moons
  auto* moons = app.add_subcommand("two-moons", "uncertainty head over a composite extractor");
  double m_alpha = 2.0, m_beta = 4.0;
  int m_epochs = 40, m_grid = 200;
  auto* m_alpha_o = moons->add_option("--alpha", m_alpha, "inverse-Lipschitz parameter");
  auto* m_beta_o = moons->add_option("--beta", m_beta, "budget minus alpha");
  auto* m_epochs_o = moons->add_option("--epochs", m_epochs, "training epochs");
  auto* m_grid_o = moons->add_option("--grid", m_grid, "certainty grid resolution");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "implicit gradients vs oracles");
  int g_nets = 10;
  auto* g_nets_o = grad->add_option("--nets", g_nets, "number of random nets");

  // estimate
  auto* est = app.add_subcommand("estimate", "empirical bi-Lipschitz constants of a saved model");
  std::string e_file;
  double e_lo = -1.0, e_hi = 1.0, e_min_sep = 1e-6;
  int e_samples = 5000;
  est->add_option("--model-file", e_file, "model bundle JSON")->required();
  auto* e_lo_o = est->add_option("--lo", e_lo, "box lower bound");
  auto* e_hi_o = est->add_option("--hi", e_hi, "box upper bound");
  auto* e_samples_o = est->add_option("--samples", e_samples, "sample count");
  auto* e_min_sep_o = est->add_option("--min-sep", e_min_sep, "minimum pair separation");

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config(config_path);
    if (tight->parsed()) {
      from_config(cfg, "model", t_model, t_model_o);
      from_config(cfg, "L", t_L, t_L_o);
      from_config(cfg, "seeds", t_seeds, t_seeds_o);
      from_config(cfg, "epochs", t_epochs, t_epochs_o);
      return cmd_tightness(out, cfg, t_model, t_L, t_seeds, t_epochs, seed, threads);
    }
    if (flex->parsed()) {
      from_config(cfg, "model", f_model, f_model_o);
      from_config(cfg, "L", f_L, f_L_o);
      from_config(cfg, "slope", f_slope, f_slope_o);
      from_config(cfg, "epochs", f_epochs, f_epochs_o);
      return cmd_flexibility(out, f_model, f_L, f_slope, f_epochs, seed);
    }
    if (sweep->parsed()) {
      from_config(cfg, "model", s_model, s_model_o);
      from_config(cfg, "L", s_L, s_L_o);
      from_config(cfg, "slope", s_slope, s_slope_o);
      from_config(cfg, "epochs", s_epochs, s_epochs_o);
      from_config(cfg, "threshold", s_threshold, s_threshold_o);
      return cmd_summary_sweep(out, s_model, s_L, s_slope, s_epochs, s_threshold, seed, threads);
    }
    if (init->parsed()) {
      from_config(cfg, "alpha", i_alpha, i_alpha_o);
      from_config(cfg, "beta", i_beta, i_beta_o);
      from_config(cfg, "trials", i_trials, i_trials_o);
      from_config(cfg, "activation", i_act, i_act_o);
      from_config(cfg, "init", i_init, i_init_o);
      from_config(cfg, "init_lo", i_lo, i_lo_o);
      from_config(cfg, "init_hi", i_hi, i_hi_o);
      return cmd_init_dist(out, i_alpha, i_beta, i_trials, i_act, i_init, i_lo, i_hi, i_compare,
                           seed, threads);
    }
    if (bench->parsed()) {
      from_config(cfg, "kinds", b_kinds, b_kinds_o);
      from_config(cfg, "beta", b_beta, b_beta_o);
      from_config(cfg, "iters", b_iters, b_iters_o);
      from_config(cfg, "points", b_points, b_points_o);
      return cmd_lft_bench(out, b_kinds, b_beta, b_iters, b_points, seed);
    }
    if (anneal->parsed()) {
      from_config(cfg, "epochs", a_epochs, a_epochs_o);
      from_config(cfg, "start_bound", a_start, a_start_o);
      from_config(cfg, "period", a_period, a_period_o);
      from_config(cfg, "closeness", a_close, a_close_o);
      from_config(cfg, "growth", a_growth, a_growth_o);
      return cmd_anneal(out, a_epochs, a_start, a_period, a_close, a_growth, seed);
    }
    if (moons->parsed()) {
      from_config(cfg, "alpha", m_alpha, m_alpha_o);
      from_config(cfg, "beta", m_beta, m_beta_o);
      from_config(cfg, "epochs", m_epochs, m_epochs_o);
      from_config(cfg, "grid", m_grid, m_grid_o);
      return cmd_two_moons(out, m_alpha, m_beta, m_epochs, m_grid, seed);
    }
    if (grad->parsed()) {
      from_config(cfg, "nets", g_nets, g_nets_o);
      return cmd_gradcheck(out, g_nets, seed);
    }
    if (est->parsed()) {
      from_config(cfg, "lo", e_lo, e_lo_o);
      from_config(cfg, "hi", e_hi, e_hi_o);
      from_config(cfg, "samples", e_samples, e_samples_o);
      from_config(cfg, "min_sep", e_min_sep, e_min_sep_o);
      return cmd_estimate(out, e_file, e_lo, e_hi, e_samples, e_min_sep, seed);
    }
  } catch (const std::exception& e) {
    const json failure{{"error", e.what()}};
    try {
      fs::create_directories(out);
      write_file((fs::path(out) / "failure.json").string(), failure.dump(2) + "\n");
    } catch (...) {
    }
    std::cerr << failure.dump() << "\n";
    return 1;
  }
  return 0;
}

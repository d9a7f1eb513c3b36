#ifndef BILIP_EXPERIMENTS_HPP
#define BILIP_EXPERIMENTS_HPP

#include "bilip/duq.hpp"
#include "bilip/training.hpp"

#include <map>
#include <string>
#include <vector>

namespace bilip {

enum class RegressionModelKind { blnn, sn };

RegressionModelKind regression_kind_from_string(const std::string& s);

// the 1-d regression architectures (width-64 two-layer core; 45x3 relu baseline)
Blnn make_regression_model(double alpha, double beta, std::uint64_t seed);
SnMlp make_sn_model(double L, std::uint64_t seed);
// inner solve used while training the 1-d models
SolverConfig regression_inner_solver(const Blnn& model);

// ---- tightness of the Lipschitz budget on the step-function fit ----

struct TightnessRow {
  double L = 0.0;
  std::uint64_t seed = 0;
  double lip_hat = 0.0, invlip_hat = 0.0;
  double tightness_pct = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;
};

struct TightnessResult {
  std::vector<TightnessRow> rows;
  double mean_tightness(double L) const;
  double std_tightness(double L) const;
};

TightnessResult run_tightness(RegressionModelKind kind, const std::vector<double>& Ls,
                              const std::vector<std::uint64_t>& seeds, int epochs, int threads = 1);

// ---- flexibility: fit a shallow slope under a large budget ----

struct FlexibilityResult {
  double final_train_loss = 0.0;
  double test_mse = 0.0;  // fresh 2000-point grid on [-1, 1]
  double lip_hat = 0.0;
};

FlexibilityResult run_flexibility(RegressionModelKind kind, double L, double slope, int epochs,
                                  std::uint64_t seed);

// ---- summary sweep: loss and first epoch below a threshold vs L ----

struct SweepRow {
  double L = 0.0;
  double final_loss = 0.0;
  int first_epoch_below = -1;  // -1: never reached
};

std::vector<SweepRow> run_summary_sweep(RegressionModelKind kind, const std::vector<double>& Ls,
                                        double slope, int epochs, double loss_threshold,
                                        std::uint64_t seed, int threads = 1);

// ---- distribution of bi-Lipschitz constants at initialization ----

struct InitDistResult {
  std::vector<double> lips, invlips;
  double alpha = 0.0, beta = 0.0;
  double frac_lip_within(double rel_window) const;  // share of lips within rel of alpha+beta
  bool all_within(double lo, double hi, double tol) const;
};

InitDistResult run_init_dist(double alpha, double beta, int trials, const InitScheme& scheme,
                             ActivationKind act, std::uint64_t seed0, int n_points = 200,
                             int threads = 1);

// two-sample Kolmogorov-Smirnov statistic (distribution shift diagnostics)
double ks_statistic(std::vector<double> a, std::vector<double> b);

// ---- bi-Lipschitz evolution of the iterate map across solver kinds ----

struct LftBenchTrace {
  SolverKind kind;
  std::vector<long> t;
  std::vector<double> lip, invlip;
};

struct LftBenchResult {
  std::vector<LftBenchTrace> traces;
  double mu = 0.0, gamma_hat = 0.0;
};

LftBenchResult run_lft_bench(const std::vector<SolverKind>& kinds, double beta, int dim,
                             int hidden, int layers, long iters, int n_points,
                             std::uint64_t seed);

// ---- elastic annealing while fitting exp(x) ----

struct AnnealRow {
  int epoch = 0;
  double bound = 0.0, lip_hat = 0.0, loss = 0.0;
};

std::vector<AnnealRow> run_anneal(int epochs, double start_bound, int check_period,
                                  double closeness, double growth, std::uint64_t seed);

// ---- two moons uncertainty ----

struct TwoMoonsResult {
  double alpha = 0.0, beta = 0.0;
  DuqTrainReport report;
};

TwoMoonsResult run_two_moons(double alpha, double beta, int epochs, std::uint64_t seed,
                             int grid_resolution = 200);

// ---- implicit-gradient checks over random small nets ----

struct GradcheckResult {
  double max_rel_err_fd = 0.0;        // implicit vs end-to-end finite differences
  double max_rel_err_unrolled = 0.0;  // implicit vs differentiating an unrolled solve
};

GradcheckResult run_gradcheck(int n_nets, std::uint64_t seed0);

// ---- GD iterate certification against the non-asymptotic bound ----

struct GdCertResult {
  double worst_margin = 0.0;  // max over (t, pair) of ratio / bound
  bool certified = false;
  double gamma_hat = 0.0;
};

GdCertResult run_gd_certification(int n_objectives, int n_points, long t_max,
                                  std::uint64_t seed0);

// simple index-parallel worker pool; results written by index, deterministic
void parallel_for(long n, int threads, const std::function<void(long)>& fn);

}  // namespace bilip

#endif

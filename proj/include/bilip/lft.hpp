#ifndef BILIP_LFT_HPP
#define BILIP_LFT_HPP

#include "bilip/common.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace bilip {

// A strongly convex objective F exposed as value / gradient / (optional)
// Hessian, together with its strong convexity mu and smoothness gamma
// (gamma = 0 means unknown).
struct ConvexObjective {
  int dim = 0;
  double strong_convexity = 0.0;
  double smoothness = 0.0;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hessian;  // empty when unavailable
};

enum class SolverKind { gd, agd, newton, adagrad, rmsprop, adam };

const char* to_string(SolverKind k);
SolverKind solver_kind_from_string(const std::string& s);

struct StepPolicy {
  enum class Kind { decreasing, inverse_smoothness, fixed };
  Kind kind = Kind::fixed;
  double value = 1.0;  // mu, gamma or eta depending on the kind

  static StepPolicy decreasing(double mu);
  static StepPolicy inverse_smoothness(double gamma);
  static StepPolicy fixed(double eta);

  // Step size used for the update from iterate t to t+1 (t counts from 0).
  double rate(long t) const;
};

struct SolverConfig {
  SolverKind kind = SolverKind::gd;
  StepPolicy step = StepPolicy::fixed(1.0);
  long max_iters = 1000;
  double tol = 1e-3;
  // mu/gamma as known to the caller; used by AGD momentum.
  double mu = 0.0;
  double gamma = 0.0;
  // adaptive-kind internals (library defaults, echoed in run metadata)
  double adagrad_eps = 1e-10;
  double rmsprop_decay = 0.99;
  double rmsprop_eps = 1e-8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Paper step-size mapping: 1/(mu(t+1)) for gd/adam/rmsprop, 1/mu for
  // adagrad, 1/gamma for agd, 1 for newton.
  static SolverConfig for_kind(SolverKind k, double mu, double gamma_hint);
};

struct LftResult {
  Vector y_star;
  long iters = 0;
  double residual = 0.0;  // ||x - grad F(y_star)||
  bool converged = false;
};

// Mutable per-solve state; one update per solver_step call.
struct SolverState {
  Vector y;
  long t = 0;
  Vector agd_prev;  // previous main iterate (agd)
  Vector acc;       // adagrad / rmsprop accumulator
  Vector m1, m2;    // adam moments

  explicit SolverState(const Vector& y0) : y(y0) {}
  // Point the gradient must be evaluated at for the next step.
  Vector query(const SolverConfig& cfg) const;
};

// One in-place update; grad is the gradient of the concave objective
// <y,x> - F(y) evaluated at state.query(). hessian: required iff newton.
void solver_step(const SolverConfig& cfg, SolverState& state, const Vector& grad,
                 const Matrix* hessian = nullptr);

// Maximize <y,x> - F(y). Stops when ||x - grad F(y)|| <= tol or at max_iters.
// Optional trace stream receives "iter,residual,objective_value" CSV lines.
LftResult solve_lft(const ConvexObjective& objective, const Vector& x, const SolverConfig& cfg,
                    const Vector& y0, std::ostream* trace = nullptr);

// ---- non-asymptotic bounds for the GD iterate map x -> y_t(x) ----

// h(t) with eta_t = 1/(mu(t+1)): iterate alpha_1 = 1,
// alpha_{t+1} = sqrt(1 - 2 eta_t mu + eta_t^2 gamma^2) alpha_t + eta_t mu,
// h(t) = alpha_t / mu. h(t) -> 1/mu.
double gd_lipschitz_bound(long t, double mu, double gamma);
// h(1..t_max) in one sweep.
std::vector<double> gd_lipschitz_bound_sequence(long t_max, double mu, double gamma);

// Sandwich for an inexact transform: (alpha - (e_i+e_j)/delta,
//                                     alpha + beta + (e_i+e_j)/delta).
std::pair<double, double> rough_bilip_bounds(double alpha, double beta, double eps_i,
                                             double eps_j, double delta);

// (1 - mu^2/gamma^2)^(t/2) * init_gap, the eta = 1/gamma error decay.
double gd_error_bound_smooth(long t, double mu, double gamma, double init_gap);

// Sampled gradient-difference ratios over n_pairs pairs in [lo, hi]; half the
// pairs are short-range probes of the local curvature. Diagnostic only.
double estimate_smoothness(const std::function<Vector(const Vector&)>& grad, const Vector& lo,
                           const Vector& hi, int n_pairs = 1000, std::uint64_t seed = 0);

}  // namespace bilip

#endif

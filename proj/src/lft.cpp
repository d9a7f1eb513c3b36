#include "bilip/lft.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace bilip {

const char* to_string(SolverKind k) {
  switch (k) {
    case SolverKind::gd: return "gd";
    case SolverKind::agd: return "agd";
    case SolverKind::newton: return "newton";
    case SolverKind::adagrad: return "adagrad";
    case SolverKind::rmsprop: return "rmsprop";
    case SolverKind::adam: return "adam";
  }
  return "?";
}

SolverKind solver_kind_from_string(const std::string& s) {
  for (SolverKind k : {SolverKind::gd, SolverKind::agd, SolverKind::newton, SolverKind::adagrad,
                       SolverKind::rmsprop, SolverKind::adam})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown solver kind: " + s);
}

StepPolicy StepPolicy::decreasing(double mu) {
  require(mu > 0.0, "StepPolicy::decreasing requires mu > 0");
  return {Kind::decreasing, mu};
}
StepPolicy StepPolicy::inverse_smoothness(double gamma) {
  require(gamma > 0.0, "StepPolicy::inverse_smoothness requires gamma > 0");
  return {Kind::inverse_smoothness, gamma};
}
StepPolicy StepPolicy::fixed(double eta) { return {Kind::fixed, eta}; }

double StepPolicy::rate(long t) const {
  switch (kind) {
    case Kind::decreasing: return 1.0 / (value * double(t + 1));
    case Kind::inverse_smoothness: return 1.0 / value;
    case Kind::fixed: return value;
  }
  return value;
}

SolverConfig SolverConfig::for_kind(SolverKind k, double mu, double gamma_hint) {
  SolverConfig cfg;
  cfg.kind = k;
  cfg.mu = mu;
  cfg.gamma = gamma_hint;
  switch (k) {
    case SolverKind::gd:
    case SolverKind::adam:
    case SolverKind::rmsprop:
      cfg.step = StepPolicy::decreasing(mu);
      break;
    case SolverKind::adagrad:
      cfg.step = StepPolicy::fixed(1.0 / mu);
      break;
    case SolverKind::agd:
      require(gamma_hint > 0.0, "agd needs a smoothness value for its step size");
      cfg.step = StepPolicy::inverse_smoothness(gamma_hint);
      break;
    case SolverKind::newton:
      cfg.step = StepPolicy::fixed(1.0);
      break;
  }
  return cfg;
}

Vector SolverState::query(const SolverConfig& cfg) const {
  if (cfg.kind != SolverKind::agd || t == 0) return y;
  // lookahead point y_t + m (y_t - y_{t-1})
  double m;
  if (cfg.mu > 0.0 && cfg.gamma > 0.0) {
    const double sk = std::sqrt(cfg.gamma / cfg.mu);
    m = (sk - 1.0) / (sk + 1.0);
  } else {
    m = double(t) / double(t + 3);
  }
  return y + m * (y - agd_prev);
}

void solver_step(const SolverConfig& cfg, SolverState& s, const Vector& grad,
                 const Matrix* hessian) {
  const double eta = cfg.step.rate(s.t);
  switch (cfg.kind) {
    case SolverKind::gd:
      s.y += eta * grad;
      break;
    case SolverKind::agd: {
      if (s.t == 0) s.agd_prev = s.y;
      const Vector q = s.query(cfg);
      const Vector next = q + eta * grad;
      s.agd_prev = s.y;
      s.y = next;
      break;
    }
    case SolverKind::newton: {
      require(hessian != nullptr, "newton step requires a Hessian");
      // F's Hessian is positive definite here, so LLT applies.
      s.y += eta * hessian->llt().solve(grad);
      break;
    }
    case SolverKind::adagrad: {
      if (s.acc.size() == 0) s.acc = Vector::Zero(s.y.size());
      s.acc.array() += grad.array().square();
      s.y.array() += eta * grad.array() / (s.acc.array().sqrt() + cfg.adagrad_eps);
      break;
    }
    case SolverKind::rmsprop: {
      if (s.acc.size() == 0) s.acc = Vector::Zero(s.y.size());
      s.acc = cfg.rmsprop_decay * s.acc + (1.0 - cfg.rmsprop_decay) * grad.cwiseAbs2();
      s.y.array() += eta * grad.array() / (s.acc.array().sqrt() + cfg.rmsprop_eps);
      break;
    }
    case SolverKind::adam: {
      if (s.m1.size() == 0) {
        s.m1 = Vector::Zero(s.y.size());
        s.m2 = Vector::Zero(s.y.size());
      }
      s.m1 = cfg.adam_beta1 * s.m1 + (1.0 - cfg.adam_beta1) * grad;
      s.m2 = cfg.adam_beta2 * s.m2 + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, double(s.t + 1));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, double(s.t + 1));
      s.y.array() +=
          eta * (s.m1.array() / c1) / ((s.m2.array() / c2).sqrt() + cfg.adam_eps);
      break;
    }
  }
  ++s.t;
  if (!s.y.allFinite() || s.y.norm() > 1e12)
    throw DivergenceError("lft solver diverged at iteration " + std::to_string(s.t), s.t);
}

LftResult solve_lft(const ConvexObjective& objective, const Vector& x, const SolverConfig& cfg,
                    const Vector& y0, std::ostream* trace) {
  require(cfg.max_iters >= 1, "solver: max_iters must be >= 1");
  require(cfg.tol > 0.0, "solver: tol must be positive");
  require(x.size() == objective.dim && y0.size() == objective.dim,
          "solver: dimension mismatch");
  require(y0.allFinite(), "solver: initial point must be finite");
  if (cfg.kind == SolverKind::newton)
    require(bool(objective.hessian), "newton requires an objective Hessian");

  SolverState state(y0);
  Matrix H;
  // Scalar Newton gets the certified-bracket safeguard: strong convexity
  // bounds |y - y*| by residual/mu and grad F is increasing, so residual
  // signs pin y* to a shrinking interval. Outside steps (and steps that fail
  // to halve the residual) bisect instead.
  const bool bracketed = cfg.kind == SolverKind::newton && objective.dim == 1 &&
                         objective.strong_convexity > 0.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double prev_res = std::numeric_limits<double>::infinity();
  double lm = 0.0;
  while (true) {
    const Vector r = x - objective.grad(state.y);
    if (!r.allFinite())
      throw DivergenceError("lft objective gradient became non-finite at iteration " +
                                std::to_string(state.t),
                            state.t);
    const double residual = r.norm();
    if (trace)
      (*trace) << state.t << ',' << residual << ','
               << (objective.value ? state.y.dot(x) - objective.value(state.y) : 0.0) << "\r\n";
    if (residual <= cfg.tol)
      return LftResult{state.y, state.t, residual, true};
    if (state.t >= cfg.max_iters)
      return LftResult{state.y, state.t, residual, false};

    if (bracketed) {
      const double y = state.y(0);
      const double res = r(0);
      const double inv_mu = 1.0 / objective.strong_convexity;
      if (res > 0.0) {
        lo = std::max(lo, y);
        hi = std::min(hi, y + inv_mu * res);
      } else {
        hi = std::min(hi, y);
        lo = std::max(lo, y + inv_mu * res);
      }
      const bool stalled = std::abs(res) > 0.5 * prev_res;
      prev_res = std::abs(res);
      double next = y + cfg.step.rate(state.t) * res / objective.hessian(state.y)(0, 0);
      if (next < lo || next > hi || stalled) next = 0.5 * (lo + hi);
      state.y(0) = next;
      ++state.t;
      continue;
    }

    const Vector q = state.query(cfg);
    const Vector g = (cfg.kind == SolverKind::agd && state.t > 0) ? Vector(x - objective.grad(q))
                                                                  : r;
    const Matrix* Hp = nullptr;
    if (cfg.kind == SolverKind::newton) {
      H = objective.hessian(state.y);
      // Levenberg damping against cycling on sharply varying curvature
      if (residual > prev_res)
        lm = std::max(lm * 8.0, std::max(objective.strong_convexity, 1e-12));
      else
        lm = lm > objective.strong_convexity / 64.0 ? lm * 0.5 : 0.0;
      H.diagonal().array() += lm;
      Hp = &H;
    }
    prev_res = residual;
    solver_step(cfg, state, g, Hp);
  }
}

double gd_lipschitz_bound(long t, double mu, double gamma) {
  require(mu > 0.0, "gd_lipschitz_bound: mu must be positive");
  require(mu <= gamma, "gd_lipschitz_bound: requires mu <= gamma");
  if (t <= 0) return 0.0;
  double alpha = 1.0;
  for (long s = 1; s < t; ++s) {
    const double eta = 1.0 / (mu * double(s + 1));
    const double f = 1.0 - 2.0 * eta * mu + eta * eta * gamma * gamma;
    alpha = std::sqrt(std::max(f, 0.0)) * alpha + eta * mu;
  }
  return alpha / mu;
}

std::vector<double> gd_lipschitz_bound_sequence(long t_max, double mu, double gamma) {
  require(mu > 0.0 && mu <= gamma, "gd_lipschitz_bound: requires 0 < mu <= gamma");
  std::vector<double> h;
  h.reserve(size_t(t_max));
  double alpha = 1.0;
  for (long t = 1; t <= t_max; ++t) {
    h.push_back(alpha / mu);
    const double eta = 1.0 / (mu * double(t + 1));
    const double f = 1.0 - 2.0 * eta * mu + eta * eta * gamma * gamma;
    alpha = std::sqrt(std::max(f, 0.0)) * alpha + eta * mu;
  }
  return h;
}

std::pair<double, double> rough_bilip_bounds(double alpha, double beta, double eps_i,
                                             double eps_j, double delta) {
  require(delta > 0.0, "rough_bilip_bounds: delta must be positive");
  const double slack = (eps_i + eps_j) / delta;
  return {alpha - slack, alpha + beta + slack};
}

double gd_error_bound_smooth(long t, double mu, double gamma, double init_gap) {
  require(mu > 0.0 && mu <= gamma, "gd_error_bound_smooth: requires 0 < mu <= gamma");
  if (t == 0) return init_gap;
  const double base = 1.0 - (mu * mu) / (gamma * gamma);
  return std::pow(base, double(t) / 2.0) * init_gap;
}

double estimate_smoothness(const std::function<Vector(const Vector&)>& grad, const Vector& lo,
                           const Vector& hi, int n_pairs, std::uint64_t seed) {
  require(n_pairs >= 1, "estimate_smoothness: n_pairs must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = int(lo.size());
  double best = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    Vector y1(d), y2(d);
    for (int i = 0; i < d; ++i) y1[i] = lo[i] + (hi[i] - lo[i]) * u01(rng);
    if (p % 2 == 0) {
      for (int i = 0; i < d; ++i) y2[i] = lo[i] + (hi[i] - lo[i]) * u01(rng);
    } else {
      Vector dir(d);
      for (int i = 0; i < d; ++i) dir[i] = gauss(rng);
      dir.normalize();
      y2 = y1 + 1e-4 * dir;
    }
    const double dist = (y1 - y2).norm();
    if (dist < 1e-12) continue;
    best = std::max(best, (grad(y1) - grad(y2)).norm() / dist);
  }
  return best;
}

}  // namespace bilip

#include "bilip/blnn.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>

namespace bilip {

namespace {

// Diagonal of the quadratic term's Hessian: 1/beta, or 1/b_i^2 in weighted mode.
Vector quad_diag(const BlnnConfig& c, int d) {
  if (c.weighted()) return c.b_weights.array().square().inverse().matrix();
  return Vector::Constant(d, 1.0 / c.beta);
}

// Coefficient of the skip term: alpha, or a_i^2 in weighted mode.
Vector skip_diag(const BlnnConfig& c, int d) {
  if (c.weighted()) return c.a_weights.array().square().matrix();
  return Vector::Constant(d, c.alpha);
}

void check_stationarity(const Vector& x, const Vector& grad_f, double tol, const char* who) {
  const double res = (x - grad_f).norm();
  if (res > 100.0 * tol)
    throw std::runtime_error(std::string(who) +
                             ": stationarity residual " + std::to_string(res) +
                             " exceeds 100x solver tol " + std::to_string(tol));
}

Matrix solve_spd(const Matrix& H, const Matrix& rhs, const char* who) {
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() != Eigen::Success) {
    // H >= mu I by construction, so this indicates non-finite entries.
    throw std::runtime_error(std::string(who) + ": Hessian factorization failed (diag range [" +
                             std::to_string(H.diagonal().minCoeff()) + ", " +
                             std::to_string(H.diagonal().maxCoeff()) + "])");
  }
  return llt.solve(rhs);
}

}  // namespace

void BlnnConfig::validate(int dim) const {
  if (weighted()) {
    require(a_weights.size() == dim && b_weights.size() == dim,
            "BlnnConfig: weighted vectors must match the model dimension");
    require(a_weights.minCoeff() >= 0.0, "BlnnConfig: weighted alpha entries must be >= 0");
    require(b_weights.minCoeff() > 0.0, "BlnnConfig: weighted beta entries must be > 0");
  } else {
    require(alpha >= 0.0, "BlnnConfig: alpha must be >= 0");
    require(beta > 0.0, "BlnnConfig: beta must be > 0");
  }
}

double BlnnConfig::mu() const {
  if (weighted()) return b_weights.array().square().inverse().minCoeff();
  return 1.0 / beta;
}

ConvexObjective Blnn::objective() const {
  config.validate(dim());
  ConvexObjective obj;
  obj.dim = dim();
  obj.strong_convexity = config.mu();
  obj.smoothness = 0.0;  // unknown in general
  const Vector qd = quad_diag(config, dim());
  auto core_copy = std::make_shared<IcnnParams>(core);
  auto work = std::make_shared<IcnnWork>();
  obj.value = [core_copy, work, qd](const Vector& y) {
    return icnn_value_batch(*core_copy, y, *work)(0) + 0.5 * y.dot(qd.cwiseProduct(y));
  };
  obj.grad = [core_copy, work, qd](const Vector& y) {
    return Vector(icnn_gradient_batch(*core_copy, y, *work).col(0) + qd.cwiseProduct(y));
  };
  if (core.activation == ActivationKind::softplus || (core.depth() == 1 && core.affine_head)) {
    obj.hessian = [core_copy, qd](const Vector& y) {
      Matrix H = core_copy->hessian(y);
      H.diagonal() += qd;
      return H;
    };
  }
  return obj;
}

std::optional<Vector> WarmCache::lookup(std::optional<long> key, const Vector& x,
                                        double radius) const {
  std::shared_lock lock(mutex_);
  if (key) {
    auto it = keyed_.find(*key);
    if (it != keyed_.end()) return it->second.second;
    return std::nullopt;
  }
  const Vector* best = nullptr;
  double best_dist = radius;
  auto consider = [&](const std::pair<Vector, Vector>& entry) {
    if (entry.first.size() != x.size()) return;
    const double d = (entry.first - x).norm();
    if (d <= best_dist) {
      best_dist = d;
      best = &entry.second;
    }
  };
  for (const auto& [k, entry] : keyed_) consider(entry);
  for (const auto& entry : unkeyed_) consider(entry);
  if (best) return *best;
  return std::nullopt;
}

void WarmCache::store(std::optional<long> key, const Vector& x, const Vector& y_star) {
  require(y_star.allFinite(), "WarmCache: refusing to store non-finite entry");
  std::unique_lock lock(mutex_);
  if (key)
    keyed_[*key] = {x, y_star};
  else
    unkeyed_.emplace_back(x, y_star);
}

size_t WarmCache::size() const {
  std::shared_lock lock(mutex_);
  return keyed_.size() + unkeyed_.size();
}

BlnnForward blnn_forward_objective(const ConvexObjective& objective, const BlnnConfig& config,
                                   const Vector& x, const SolverConfig& solver, WarmCache* cache,
                                   std::optional<long> key) {
  require(x.size() == objective.dim, "blnn_forward: input dimension mismatch");
  Vector y0 = Vector::Zero(objective.dim);
  if (cache) {
    if (auto warm = cache->lookup(key, x)) y0 = *warm;
  }
  LftResult lft = solve_lft(objective, x, solver, y0);
  if (cache && lft.converged) cache->store(key, x, lft.y_star);
  Vector out = lft.y_star + skip_diag(config, objective.dim).cwiseProduct(x);
  return {std::move(out), std::move(lft)};
}

BlnnForward blnn_forward(const Blnn& model, const Vector& x, const SolverConfig& solver,
                         WarmCache* cache, std::optional<long> key) {
  return blnn_forward_objective(model.objective(), model.config, x, solver, cache, key);
}

Matrix blnn_hess_f(const Blnn& model, const Vector& y_star) {
  Matrix H = model.core.hessian(y_star);
  H.diagonal() += quad_diag(model.config, model.dim());
  return H;
}

IcnnLayerGrads blnn_backward_params(const Blnn& model, const Vector& x, const Vector& y_star,
                                    const Vector& grad_out, double tol) {
  const Vector grad_f = model.core.gradient(y_star) +
                        quad_diag(model.config, model.dim()).cwiseProduct(y_star);
  check_stationarity(x, grad_f, tol, "blnn_backward_params");
  const Matrix H = blnn_hess_f(model, y_star);
  const Vector v = solve_spd(H, grad_out, "blnn_backward_params");
  IcnnLayerGrads grads = zero_grads_like(model.core);
  IcnnWork work;
  // the quadratic term carries no parameters, so only the core contributes
  icnn_grad_param_vjp_batch(model.core, y_star, v, work, &grads, -1.0, nullptr);
  return grads;
}

Vector blnn_input_vjp(const Blnn& model, const Vector& y_star, const Vector& grad_out) {
  const Matrix H = blnn_hess_f(model, y_star);
  Vector out = solve_spd(H, grad_out, "blnn_input_vjp");
  out += skip_diag(model.config, model.dim()).cwiseProduct(grad_out);
  return out;
}

Matrix CompositeBlnn::projector() const {
  Matrix D = Matrix::Zero(d2(), d1());
  for (int i = 0; i < std::min(d1(), d2()); ++i) D(i, i) = 1.0;
  return D;
}

Vector project_dims(const Vector& v, int to_dim) {
  Vector out = Vector::Zero(to_dim);
  const int k = std::min<int>(int(v.size()), to_dim);
  out.head(k) = v.head(k);
  return out;
}

Vector composite_forward(const CompositeBlnn& model, const Vector& x, const SolverConfig& solver,
                         WarmCache* cache1, WarmCache* cache2, std::optional<long> key,
                         CompositeIntermediates* inter) {
  BlnnForward f1 = blnn_forward(model.first, x, solver, cache1, key);
  const Vector mid = project_dims(f1.output, model.d2());
  BlnnForward f2 = blnn_forward(model.second, mid, solver, cache2, key);
  if (inter) {
    inter->f1_out = f1.output;
    inter->mid = mid;
    inter->y1_star = f1.lft.y_star;
    inter->y2_star = f2.lft.y_star;
    inter->lft1 = f1.lft;
    inter->lft2 = f2.lft;
  }
  return f2.output;
}

CompositeGrads composite_backward(const CompositeBlnn& model, const Vector& x,
                                  const CompositeIntermediates& inter, const Vector& grad_out,
                                  double tol) {
  CompositeGrads grads;
  grads.second = blnn_backward_params(model.second, inter.mid, inter.y2_star, grad_out, tol);
  // Xi_2 grad_out, pulled back through D to the first stage
  const Vector w = blnn_input_vjp(model.second, inter.y2_star, grad_out);
  const Vector g1 = project_dims(w, model.d1());
  grads.first = blnn_backward_params(model.first, x, inter.y1_star, g1, tol);
  return grads;
}

Vector composite_input_vjp(const CompositeBlnn& model, const CompositeIntermediates& inter,
                           const Vector& grad_out) {
  const Vector w = blnn_input_vjp(model.second, inter.y2_star, grad_out);
  return blnn_input_vjp(model.first, inter.y1_star, project_dims(w, model.d1()));
}

ConvexObjective Pblnn::objective(const Vector& x_nonconvex) const {
  config.validate(block_dim());
  ConvexObjective obj;
  obj.dim = block_dim();
  obj.strong_convexity = config.mu();
  const Vector qd = quad_diag(config, block_dim());
  auto core_copy = std::make_shared<PicnnParams>(core);
  const Vector x = x_nonconvex;
  obj.value = [core_copy, x, qd](const Vector& y) {
    return core_copy->value(x, y) + 0.5 * y.dot(qd.cwiseProduct(y));
  };
  obj.grad = [core_copy, x, qd](const Vector& y) {
    return Vector(core_copy->grad_y(x, y) + qd.cwiseProduct(y));
  };
  if (core.activation == ActivationKind::softplus) {
    obj.hessian = [core_copy, x, qd](const Vector& y) {
      Matrix H = core_copy->hessian_y(x, y);
      H.diagonal() += qd;
      return H;
    };
  }
  return obj;
}

PblnnForward pblnn_forward(const Pblnn& model, const Vector& x_nonconvex, const Vector& y_block,
                           const SolverConfig& solver, WarmCache* cache, std::optional<long> key) {
  require(y_block.size() == model.block_dim(), "pblnn_forward: block dimension mismatch");
  Vector y0 = Vector::Zero(model.block_dim());
  if (cache) {
    if (auto warm = cache->lookup(key, y_block)) y0 = *warm;
  }
  const ConvexObjective obj = model.objective(x_nonconvex);
  LftResult lft = solve_lft(obj, y_block, solver, y0);
  if (cache && lft.converged) cache->store(key, y_block, lft.y_star);
  Vector out = lft.y_star + skip_diag(model.config, model.block_dim()).cwiseProduct(y_block);
  return {std::move(out), std::move(lft)};
}

PblnnGrads pblnn_backward(const Pblnn& model, const Vector& x_nonconvex, const Vector& y_block,
                          const Vector& y_star, const Vector& grad_out, double tol) {
  const Vector qd = quad_diag(model.config, model.block_dim());
  const Vector grad_f = model.core.grad_y(x_nonconvex, y_star) + qd.cwiseProduct(y_star);
  check_stationarity(y_block, grad_f, tol, "pblnn_backward");

  Matrix H = model.core.hessian_y(x_nonconvex, y_star);
  H.diagonal() += qd;
  const Vector v = solve_spd(H, grad_out, "pblnn_backward");

  PblnnGrads out;
  out.core = model.core.grad_y_param_vjp(x_nonconvex, y_star, v);
  for (PicnnLayer& l : out.core.layers) {
    l.w_gate *= -1.0;
    l.w_gate_u *= -1.0;
    l.b_gate *= -1.0;
    l.w_input *= -1.0;
    l.w_input_u *= -1.0;
    l.b_input *= -1.0;
    l.w_u *= -1.0;
    l.bias *= -1.0;
  }
  for (PicnnULayer& l : out.core.u_path) {
    l.w *= -1.0;
    l.b *= -1.0;
  }
  out.d_block_input =
      v + skip_diag(model.config, model.block_dim()).cwiseProduct(grad_out);
  out.d_nonconvex_input = -model.core.grad_y_x_vjp(x_nonconvex, y_star, v);
  return out;
}

// ---- batched paths ----

BlnnBatchForward blnn_forward_batch(const Blnn& model, const Matrix& X, const SolverConfig& solver,
                                    const Matrix* warm_y0) {
  require(solver.kind == SolverKind::gd || solver.kind == SolverKind::newton,
          "blnn_forward_batch supports gd and newton kinds");
  require(X.rows() == model.dim(), "blnn_forward_batch: input dimension mismatch");
  const int n = int(X.cols());
  const int d = model.dim();
  const Vector qd = quad_diag(model.config, d);

  BlnnBatchForward out;
  out.y_star = warm_y0 ? *warm_y0 : Matrix::Zero(d, n);
  require(out.y_star.rows() == d && out.y_star.cols() == n,
          "blnn_forward_batch: warm start shape mismatch");
  out.iters = Eigen::VectorXi::Zero(n);
  out.residuals = Vector::Zero(n);
  out.converged = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, false);

  IcnnWork work;
  std::vector<Matrix> H;
  Vector lo = Vector::Constant(n, -std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(n, std::numeric_limits<double>::infinity());
  Vector prev_res = Vector::Constant(n, std::numeric_limits<double>::infinity());
  Vector lm = Vector::Zero(n);  // Levenberg ridge for the d >= 2 newton path
  Matrix& Y = out.y_star;
  for (long t = 0;; ++t) {
    Matrix R = X - icnn_gradient_batch(model.core, Y, work);
    R.noalias() -= qd.asDiagonal() * Y;
    bool all = true;
    for (int j = 0; j < n; ++j) {
      if (out.converged[j]) continue;
      const double res = R.col(j).norm();
      if (!std::isfinite(res))
        throw DivergenceError("batched lft became non-finite at iteration " + std::to_string(t),
                              t);
      out.residuals[j] = res;
      if (res <= solver.tol) {
        out.converged[j] = true;
        out.iters[j] = int(t);
      } else {
        all = false;
      }
    }
    if (all || t >= solver.max_iters) {
      for (int j = 0; j < n; ++j)
        if (!out.converged[j]) out.iters[j] = int(t);
      break;
    }

    if (solver.kind == SolverKind::gd) {
      const double eta = solver.step.rate(t);
      for (int j = 0; j < n; ++j)
        if (!out.converged[j]) Y.col(j) += eta * R.col(j);
    } else if (d == 1) {
      // Scalar Newton with a certified bracket: strong convexity gives
      // |y - y*| <= residual / mu, and grad F is increasing, so every
      // residual sign tightens [lo, hi]. Steps landing outside the bracket
      // bisect, as do steps that fail to halve the residual.
      const double inv_mu = 1.0 / model.config.mu();
      icnn_hessian_batch(model.core, Y, work, H);
      for (int j = 0; j < n; ++j) {
        if (out.converged[j]) continue;
        const double y = Y(0, j);
        const double r = R(0, j);
        if (r > 0.0) {
          lo[j] = std::max(lo[j], y);
          hi[j] = std::min(hi[j], y + inv_mu * r);
        } else {
          hi[j] = std::min(hi[j], y);
          lo[j] = std::max(lo[j], y + inv_mu * r);
        }
        const bool stalled = std::abs(r) > 0.5 * prev_res[j];
        prev_res[j] = std::abs(r);
        double next = y + solver.step.rate(t) * r / (H[j](0, 0) + qd(0));
        if (next < lo[j] || next > hi[j] || stalled) next = 0.5 * (lo[j] + hi[j]);
        Y(0, j) = next;
      }
    } else {
      // Newton with Levenberg damping: a residual that stops shrinking grows
      // the ridge (pushing the step toward a short gradient step), progress
      // melts it away. No extra objective evaluations involved.
      const double mu = model.config.mu();
      icnn_hessian_batch(model.core, Y, work, H);
      const double eta = solver.step.rate(t);
      for (int j = 0; j < n; ++j) {
        if (out.converged[j]) continue;
        const double res = R.col(j).norm();
        if (res > prev_res[j])
          lm[j] = std::max(lm[j] * 8.0, mu);
        else
          lm[j] = lm[j] > mu / 64.0 ? lm[j] * 0.5 : 0.0;
        prev_res[j] = res;
        H[j].diagonal() += qd;
        H[j].diagonal().array() += lm[j];
        Y.col(j) += eta * H[j].llt().solve(R.col(j));
      }
    }
    for (int j = 0; j < n; ++j)
      if (!out.converged[j] && Y.col(j).norm() > 1e12)
        throw DivergenceError("batched lft diverged at iteration " + std::to_string(t + 1), t + 1);
  }

  out.mean_iters = out.iters.cast<double>().mean();
  out.outputs = Y + skip_diag(model.config, d).asDiagonal() * X;
  return out;
}

void blnn_backward_params_batch(const Blnn& model, const Matrix& X, const Matrix& y_star,
                                const Matrix& grad_out, double tol, IcnnLayerGrads& accum,
                                double scale, Matrix* v_out) {
  const int n = int(X.cols());
  const Vector qd = quad_diag(model.config, model.dim());
  IcnnWork work;

  Matrix R = X - icnn_gradient_batch(model.core, y_star, work);
  R.noalias() -= qd.asDiagonal() * y_star;
  for (int j = 0; j < n; ++j)
    if (R.col(j).norm() > 100.0 * tol)
      throw std::runtime_error("blnn_backward_params_batch: sample " + std::to_string(j) +
                               " has stationarity residual " + std::to_string(R.col(j).norm()) +
                               " > 100x tol");

  std::vector<Matrix> H;
  icnn_hessian_batch(model.core, y_star, work, H);
  Matrix V(model.dim(), n);
  for (int j = 0; j < n; ++j) {
    H[j].diagonal() += qd;
    V.col(j) = H[j].llt().solve(grad_out.col(j));
  }
  icnn_grad_param_vjp_batch(model.core, y_star, V, work, &accum, -scale, nullptr);
  if (v_out) *v_out = std::move(V);
}

CompositeBatchForward composite_forward_batch(const CompositeBlnn& model, const Matrix& X,
                                              const SolverConfig& solver, const Matrix* warm1,
                                              const Matrix* warm2) {
  CompositeBatchForward out;
  out.stage1 = blnn_forward_batch(model.first, X, solver, warm1);
  Matrix mid = Matrix::Zero(model.d2(), X.cols());
  const int k = std::min(model.d1(), model.d2());
  mid.topRows(k) = out.stage1.outputs.topRows(k);
  out.stage2 = blnn_forward_batch(model.second, mid, solver, warm2);
  out.outputs = out.stage2.outputs;
  return out;
}

void composite_backward_batch(const CompositeBlnn& model, const Matrix& X,
                              const CompositeBatchForward& fwd, const Matrix& grad_out, double tol,
                              CompositeGrads& accum, double scale) {
  const int n = int(X.cols());
  const int k = std::min(model.d1(), model.d2());
  Matrix mid = Matrix::Zero(model.d2(), n);
  mid.topRows(k) = fwd.stage1.outputs.topRows(k);

  Matrix V2;
  blnn_backward_params_batch(model.second, mid, fwd.stage2.y_star, grad_out, tol, accum.second,
                             scale, &V2);
  // Xi_2 grad_out pulled back through D to the first stage
  const Vector sd2 = skip_diag(model.second.config, model.d2());
  const Matrix W = V2 + sd2.asDiagonal() * grad_out;
  Matrix G1 = Matrix::Zero(model.d1(), n);
  G1.topRows(k) = W.topRows(k);
  blnn_backward_params_batch(model.first, X, fwd.stage1.y_star, G1, tol, accum.first, scale);
}

}  // namespace bilip

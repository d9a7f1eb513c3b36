#include "bilip/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bilip {

namespace {

double step_target(double x) { return x <= 0.0 ? x : x + 1.0; }

Dataset1D sample_xs(int n, double lo, double hi, std::uint64_t seed, const std::string& tag) {
  require(n >= 1, "dataset: n must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Dataset1D d;
  d.generator = tag;
  d.xs.resize(n);
  d.ys.resize(n);
  for (int i = 0; i < n; ++i) d.xs[i] = u(rng);
  return d;
}

double apply_generator(const Dataset1D& d, double x) {
  if (d.generator == "step") return step_target(x);
  if (d.generator == "linear") return d.slope * x;
  if (d.generator == "exp") return std::exp(x);
  throw std::invalid_argument("dataset: unknown generator " + d.generator);
}

}  // namespace

Dataset1D make_step_dataset(int n, double lo, double hi, std::uint64_t seed) {
  Dataset1D d = sample_xs(n, lo, hi, seed, "step");
  for (int i = 0; i < n; ++i) d.ys[i] = step_target(d.xs[i]);
  return d;
}

Dataset1D make_linear_dataset(double slope, int n, double lo, double hi, std::uint64_t seed) {
  Dataset1D d = sample_xs(n, lo, hi, seed, "linear");
  d.slope = slope;
  for (int i = 0; i < n; ++i) d.ys[i] = slope * d.xs[i];
  return d;
}

Dataset1D make_exp_dataset(int n, double lo, double hi, std::uint64_t seed) {
  Dataset1D d = sample_xs(n, lo, hi, seed, "exp");
  for (int i = 0; i < n; ++i) d.ys[i] = std::exp(d.xs[i]);
  return d;
}

Dataset1D make_test_grid(const Dataset1D& like, int n, double lo, double hi) {
  Dataset1D d;
  d.generator = like.generator;
  d.slope = like.slope;
  d.xs.setLinSpaced(n, lo, hi);
  d.ys.resize(n);
  for (int i = 0; i < n; ++i) d.ys[i] = apply_generator(like, d.xs[i]);
  return d;
}

std::pair<double, Vector> loss_and_grad(LossKind kind, const Vector& pred, const Vector& target) {
  require(pred.size() == target.size(), "loss: prediction/target size mismatch");
  if (kind == LossKind::mse) {
    const Vector diff = pred - target;
    return {diff.squaredNorm(), 2.0 * diff};
  }
  double loss = 0.0;
  Vector grad(pred.size());
  for (long i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], 1e-12, 1.0 - 1e-12);
    const double t = target[i];
    loss += -(t * std::log(p) + (1.0 - t) * std::log1p(-p));
    grad[i] = -t / p + (1.0 - t) / (1.0 - p);
  }
  return {loss, grad};
}

void AdamOpt::step(Vector& params, const Vector& grad) {
  if (m.size() == 0) {
    m = Vector::Zero(params.size());
    v = Vector::Zero(params.size());
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, double(t));
  const double c2 = 1.0 - std::pow(beta2, double(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

void SgdOpt::step(Vector& params, const Vector& grad) {
  Vector g = grad;
  if (weight_decay > 0.0) g += weight_decay * params;
  if (velocity.size() == 0) velocity = Vector::Zero(params.size());
  velocity = momentum * velocity + g;
  params -= lr * velocity;
}

AnnealState anneal_step(const AnnealState& state, double lip_hat) {
  require(state.bound > 0.0 && state.growth > 1.0, "anneal: bad state");
  AnnealState next = state;
  if (std::abs(lip_hat - state.bound) <= state.closeness) next.bound *= state.growth;
  return next;
}

// ---- spectral-normalization baseline ----

SnMlp init_sn_mlp(int in_dim, const std::vector<int>& hidden_dims, int out_dim, double L,
                  std::uint64_t seed) {
  require(in_dim >= 1 && out_dim >= 1, "sn_mlp: bad dimensions");
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  SnMlp net;
  net.input_scale = L;
  std::vector<int> dims;
  dims.push_back(in_dim);
  for (int h : hidden_dims) dims.push_back(h);
  dims.push_back(out_dim);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    SnLayer l;
    // fan-in uniform for weights and biases, the usual linear-layer recipe
    const double bound = 1.0 / std::sqrt(double(dims[i]));
    l.w = uniform_matrix(dims[i + 1], dims[i], -bound, bound, rng);
    l.b = uniform_matrix(dims[i + 1], 1, -bound, bound, rng);
    l.u.resize(dims[i + 1]);
    l.v.resize(dims[i]);
    for (long k = 0; k < l.u.size(); ++k) l.u[k] = g(rng);
    for (long k = 0; k < l.v.size(); ++k) l.v[k] = g(rng);
    l.u.normalize();
    l.v.normalize();
    net.layers.push_back(std::move(l));
  }
  sn_normalize(net, 50);  // start 1-Lipschitz per layer
  return net;
}

double sn_power_iterate(SnLayer& layer, int power_iters) {
  require(power_iters >= 1, "sn_power_iterate: power_iters must be >= 1");
  for (int k = 0; k < power_iters; ++k) {
    layer.v = layer.w.transpose() * layer.u;
    const double nv = layer.v.norm();
    if (nv > 0.0) layer.v /= nv;
    layer.u = layer.w * layer.v;
    const double nu = layer.u.norm();
    if (nu > 0.0) layer.u /= nu;
  }
  const double sigma = layer.u.dot(layer.w * layer.v);
  layer.sigma = sigma > 1e-30 ? sigma : 1.0;
  return sigma;
}

double sn_normalize(SnLayer& layer, int power_iters) {
  const double sigma = sn_power_iterate(layer, power_iters);
  if (sigma > 1e-30) layer.w /= sigma;
  layer.sigma = 1.0;
  return sigma;
}

void sn_normalize(SnMlp& net, int power_iters) {
  for (SnLayer& l : net.layers) sn_normalize(l, power_iters);
}

Matrix SnMlp::forward_batch(const Matrix& X) const {
  Matrix h = input_scale * X;
  for (size_t i = 0; i < layers.size(); ++i) {
    Matrix a = (layers[i].w / layers[i].sigma) * h;
    a.colwise() += layers[i].b;
    h = (i + 1 < layers.size()) ? a.cwiseMax(0.0) : a;
  }
  return h;
}

Vector SnMlp::forward(const Vector& x) const { return forward_batch(x).col(0); }

namespace {

long sn_param_count(const SnMlp& net) {
  long n = 0;
  for (const SnLayer& l : net.layers) n += l.w.size() + l.b.size();
  return n;
}

Vector sn_flatten(const SnMlp& net) {
  Vector out(sn_param_count(net));
  long k = 0;
  for (const SnLayer& l : net.layers) {
    for (long i = 0; i < l.w.rows(); ++i)
      for (long j = 0; j < l.w.cols(); ++j) out[k++] = l.w(i, j);
    for (long i = 0; i < l.b.size(); ++i) out[k++] = l.b[i];
  }
  return out;
}

void sn_unflatten(const Vector& flat, SnMlp& net) {
  long k = 0;
  for (SnLayer& l : net.layers) {
    for (long i = 0; i < l.w.rows(); ++i)
      for (long j = 0; j < l.w.cols(); ++j) l.w(i, j) = flat[k++];
    for (long i = 0; i < l.b.size(); ++i) l.b[i] = flat[k++];
  }
}

// Gradient of the mean batch loss with respect to the raw weights. The
// effective weight is w/sigma, so the raw gradient subtracts the rank-1
// component along the top singular pair: (g - <g, w/sigma> u v^T) / sigma.
Vector sn_backward_batch(const SnMlp& net, const Matrix& X, const Matrix& grad_out) {
  const size_t L = net.layers.size();
  std::vector<Matrix> hs(L + 1), as(L);
  hs[0] = net.input_scale * X;
  for (size_t i = 0; i < L; ++i) {
    as[i] = net.layers[i].effective() * hs[i];
    as[i].colwise() += net.layers[i].b;
    hs[i + 1] = (i + 1 < L) ? as[i].cwiseMax(0.0) : as[i];
  }
  std::vector<Matrix> gw(L);
  std::vector<Vector> gb(L);
  Matrix delta = grad_out;
  for (size_t i = L; i-- > 0;) {
    const SnLayer& l = net.layers[i];
    const Matrix g_eff = delta * hs[i].transpose();
    const double lambda = (g_eff.array() * l.effective().array()).sum();
    gw[i] = (g_eff - lambda * l.u * l.v.transpose()) / l.sigma;
    gb[i] = delta.rowwise().sum();
    if (i > 0) {
      delta = l.effective().transpose() * delta;
      delta.array() *= (as[i - 1].array() > 0.0).cast<double>();
    }
  }
  Vector out(sn_param_count(net));
  long k = 0;
  for (size_t i = 0; i < L; ++i) {
    for (long r = 0; r < gw[i].rows(); ++r)
      for (long c = 0; c < gw[i].cols(); ++c) out[k++] = gw[i](r, c);
    for (long r = 0; r < gb[i].size(); ++r) out[k++] = gb[i][r];
  }
  return out;
}

}  // namespace

// ---- blnn regression ----

namespace {

SolverConfig estimation_solver(const Blnn& model) {
  SolverConfig cfg = SolverConfig::for_kind(SolverKind::newton, model.config.mu(), 0.0);
  cfg.tol = 1e-9;
  cfg.max_iters = 200;
  return cfg;
}

}  // namespace

BiLipEstimate estimate_model_bilip(const Blnn& model, double lo, double hi, int n_samples,
                                   std::uint64_t seed) {
  Rng rng(seed);
  const Matrix points =
      uniform_points(Vector::Constant(1, lo), Vector::Constant(1, hi), n_samples, rng);
  const BlnnBatchForward fwd = blnn_forward_batch(model, points, estimation_solver(model));
  BiLipEstimate est = estimate_bilip_values(points, fwd.outputs, 1e-6, seed);
  est.domain_lo = Vector::Constant(1, lo);
  est.domain_hi = Vector::Constant(1, hi);
  return est;
}

BiLipEstimate estimate_model_bilip(const SnMlp& model, double lo, double hi, int n_samples,
                                   std::uint64_t seed) {
  Rng rng(seed);
  const Matrix points =
      uniform_points(Vector::Constant(1, lo), Vector::Constant(1, hi), n_samples, rng);
  const Matrix values = model.forward_batch(points);
  BiLipEstimate est = estimate_bilip_values(points, values, 1e-6, seed);
  est.domain_lo = Vector::Constant(1, lo);
  est.domain_hi = Vector::Constant(1, hi);
  return est;
}

double eval_mse(const Blnn& model, const Dataset1D& data, const SolverConfig& inner) {
  const Matrix X = data.xs.transpose();
  const BlnnBatchForward fwd = blnn_forward_batch(model, X, inner);
  return (fwd.outputs.row(0).transpose() - data.ys).squaredNorm() / double(data.xs.size());
}

double eval_mse(const SnMlp& model, const Dataset1D& data) {
  const Matrix X = data.xs.transpose();
  return (model.forward_batch(X).row(0).transpose() - data.ys).squaredNorm() /
         double(data.xs.size());
}

TrainReport train_regression(Blnn& model, const Dataset1D& data, const TrainConfig& config,
                             AnnealState* anneal) {
  config.validate();
  require(model.dim() == 1, "train_regression: the 1-d harness expects dim-1 models");
  const long n = data.xs.size();
  const Matrix X = data.xs.transpose();
  Matrix warm = Matrix::Zero(1, n);

  Vector theta(model.core.param_count());
  flatten_into(model.core.layers, theta);
  AdamOpt adam;
  adam.lr = config.lr;
  SgdOpt sgd;
  sgd.lr = config.lr;
  sgd.momentum = config.momentum;
  sgd.weight_decay = config.weight_decay;

  const int bs = config.batch_size <= 0 ? int(n) : config.batch_size;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(config.seed ^ 0x5deece66dull);

  TrainReport rep;
  double last_lip = std::numeric_limits<double>::quiet_NaN();
  double last_invlip = std::numeric_limits<double>::quiet_NaN();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr_now =
        (config.lr_step_epoch > 0 && epoch > config.lr_step_epoch)
            ? config.lr * config.lr_step_factor
            : config.lr;
    adam.lr = lr_now;
    sgd.lr = lr_now;
    if (bs < n) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    double iter_sum = 0.0;

    for (long start = 0; start < n; start += bs) {
      const long m = std::min<long>(bs, n - start);
      Matrix Xb(1, m), warm_b(1, m);
      for (long j = 0; j < m; ++j) {
        Xb(0, j) = X(0, order[size_t(start + j)]);
        warm_b(0, j) = warm(0, order[size_t(start + j)]);
      }

      BlnnBatchForward fwd;
      try {
        fwd = blnn_forward_batch(model, Xb, config.inner, &warm_b);
      } catch (const DivergenceError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what(), e.iteration);
      }
      bool flagged = false;
      for (long j = 0; j < m; ++j) {
        if (!fwd.converged[j]) {
          if (fwd.residuals[j] > 100.0 * config.inner.tol)
            throw std::runtime_error("epoch " + std::to_string(epoch) +
                                     ": lft residual " + std::to_string(fwd.residuals[j]) +
                                     " exceeds 100x tol; aborting");
          flagged = true;
        } else {
          warm(0, order[size_t(start + j)]) = fwd.y_star(0, j);
        }
      }
      if (flagged) ++rep.flagged_batches;
      iter_sum += fwd.iters.cast<double>().sum();

      Matrix G(1, m);
      for (long j = 0; j < m; ++j) {
        const auto [lj, gj] = loss_and_grad(
            config.loss, fwd.outputs.col(j),
            Vector::Constant(1, data.ys[order[size_t(start + j)]]));
        epoch_loss += lj;
        G(0, j) = gj(0) / double(m);
      }

      IcnnLayerGrads grads = zero_grads_like(model.core);
      blnn_backward_params_batch(model, Xb, fwd.y_star, G, config.inner.tol, grads, 1.0);
      Vector gflat(flat_size(grads));
      flatten_into(grads, gflat);
      if (config.outer == OuterOptimizer::adam)
        adam.step(theta, gflat);
      else
        sgd.step(theta, gflat);
      unflatten_from(theta, model.core.layers);
      project_nonneg(model.core);
      flatten_into(model.core.layers, theta);  // keep the flat view in sync
    }

    rep.loss.push_back(epoch_loss / double(n));
    rep.mean_lft_iters.push_back(iter_sum / double(n));

    const bool estimate_now = config.estimate_every > 0 && epoch % config.estimate_every == 0;
    if (estimate_now) {
      const BiLipEstimate est =
          estimate_model_bilip(model, config.estimate_lo, config.estimate_hi,
                               config.estimate_samples, config.seed + std::uint64_t(epoch));
      last_lip = est.lip_hat;
      last_invlip = est.invlip_hat;
      if (anneal && epoch % anneal->check_period == 0) {
        const AnnealState next = anneal_step(*anneal, est.lip_hat);
        if (next.bound != anneal->bound) {
          *anneal = next;
          const double beta = next.bound - model.config.alpha;
          require(beta > 0.0, "anneal: bound must stay above alpha");
          model.config.beta = beta;
        }
      }
    }
    rep.lip_hat.push_back(last_lip);
    rep.invlip_hat.push_back(last_invlip);
    rep.bound.push_back(anneal ? anneal->bound
                               : model.config.alpha + model.config.beta);
  }

  rep.final_estimate = estimate_model_bilip(model, config.estimate_lo, config.estimate_hi,
                                            config.estimate_samples, config.seed ^ 0xabcdefull);
  rep.final_loss = rep.loss.back();
  return rep;
}

TrainReport train_regression(SnMlp& model, const Dataset1D& data, const TrainConfig& config) {
  config.validate();
  const long n = data.xs.size();
  const Matrix X = data.xs.transpose();

  Vector theta = sn_flatten(model);
  AdamOpt adam;
  adam.lr = config.lr;
  SgdOpt sgd;
  sgd.lr = config.lr;
  sgd.momentum = config.momentum;
  sgd.weight_decay = config.weight_decay;

  const int bs = config.batch_size <= 0 ? int(n) : config.batch_size;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(config.seed ^ 0x5deece66dull);

  TrainReport rep;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr_now =
        (config.lr_step_epoch > 0 && epoch > config.lr_step_epoch)
            ? config.lr * config.lr_step_factor
            : config.lr;
    adam.lr = lr_now;
    sgd.lr = lr_now;
    if (bs < n) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (long start = 0; start < n; start += bs) {
      const long m = std::min<long>(bs, n - start);
      Matrix Xb(1, m);
      Vector yb(m);
      for (long j = 0; j < m; ++j) {
        Xb(0, j) = X(0, order[size_t(start + j)]);
        yb[j] = data.ys[order[size_t(start + j)]];
      }
      for (SnLayer& l : model.layers) sn_power_iterate(l, 1);
      const Matrix pred = model.forward_batch(Xb);
      Matrix G(1, m);
      for (long j = 0; j < m; ++j) {
        const auto [lj, gj] =
            loss_and_grad(config.loss, pred.col(j), Vector::Constant(1, yb[j]));
        epoch_loss += lj;
        G(0, j) = gj(0) / double(m);
      }
      const Vector gflat = sn_backward_batch(model, Xb, G);
      if (config.outer == OuterOptimizer::adam)
        adam.step(theta, gflat);
      else
        sgd.step(theta, gflat);
      sn_unflatten(theta, model);
    }
    rep.loss.push_back(epoch_loss / double(n));
    rep.mean_lft_iters.push_back(0.0);
    rep.lip_hat.push_back(std::numeric_limits<double>::quiet_NaN());
    rep.invlip_hat.push_back(std::numeric_limits<double>::quiet_NaN());
    rep.bound.push_back(model.input_scale);
  }

  sn_normalize(model, 50);  // settle the normalization before evaluation
  rep.final_estimate = estimate_model_bilip(model, config.estimate_lo, config.estimate_hi,
                                            config.estimate_samples, config.seed ^ 0xabcdefull);
  rep.final_loss = rep.loss.back();
  return rep;
}

}  // namespace bilip

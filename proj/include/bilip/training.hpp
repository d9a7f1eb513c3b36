#ifndef BILIP_TRAINING_HPP
#define BILIP_TRAINING_HPP

#include "bilip/blnn.hpp"
#include "bilip/estimator.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bilip {

enum class OuterOptimizer { adam, sgd };
enum class LossKind { mse, bce };

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 0;  // 0: full batch
  OuterOptimizer outer = OuterOptimizer::adam;
  double lr = 0.01;
  int lr_step_epoch = 0;        // 0: constant lr; else drop by lr_step_factor there
  double lr_step_factor = 0.1;
  double momentum = 0.0;      // sgd
  double weight_decay = 0.0;  // sgd
  SolverConfig inner;
  LossKind loss = LossKind::mse;
  std::uint64_t seed = 0;

  // empirical-Lipschitz tracking (0: final estimate only)
  int estimate_every = 0;
  int estimate_samples = 1000;
  double estimate_lo = -1.0;
  double estimate_hi = 1.0;

  void validate() const { require(lr > 0.0 && epochs >= 1, "TrainConfig: bad lr/epochs"); }
};

struct Dataset1D {
  Vector xs, ys;
  std::string generator;  // "step", "linear", "exp"
  double slope = 1.0;     // linear generator only
};

// 300 points by default, x uniform on [lo, hi]; y = x for x <= 0, x + 1 above.
Dataset1D make_step_dataset(int n = 300, double lo = -2.0, double hi = 2.0,
                            std::uint64_t seed = 0);
Dataset1D make_linear_dataset(double slope, int n, double lo, double hi, std::uint64_t seed);
Dataset1D make_exp_dataset(int n, double lo, double hi, std::uint64_t seed);
// evenly spaced evaluation grid (fresh test split for the 1-d tasks)
Dataset1D make_test_grid(const Dataset1D& like, int n = 2000, double lo = -1.0, double hi = 1.0);

// per-sample loss and d loss / d pred
std::pair<double, Vector> loss_and_grad(LossKind kind, const Vector& pred, const Vector& target);

// ---- flat-vector outer optimizers (projection is applied by the caller) ----

struct AdamOpt {
  double lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vector m, v;
  long t = 0;
  void step(Vector& params, const Vector& grad);
};

struct SgdOpt {
  double lr = 0.01, momentum = 0.0, weight_decay = 0.0;
  Vector velocity;
  void step(Vector& params, const Vector& grad);
};

// ---- elastic annealing of the Lipschitz budget ----

struct AnnealState {
  double bound = 2.0;
  int check_period = 5;
  double closeness = 0.05;
  double growth = 1.5;
};

// if |lip_hat - bound| <= closeness the bound is relaxed by the growth factor
AnnealState anneal_step(const AnnealState& state, double lip_hat);

// ---- spectral-normalization baseline: relu MLP with input scaling ----
//
// Each layer stores a raw weight and applies w / sigma_hat in the forward
// pass, with sigma_hat tracked by persisted power iteration. Gradients flow
// through the normalization (the rank-1 top-direction term is subtracted).

struct SnLayer {
  Matrix w;     // raw weight
  Vector b;
  Vector u, v;  // persisted power-iteration directions
  double sigma = 1.0;  // current top-singular-value estimate of w

  Matrix effective() const { return w / sigma; }
};

struct SnMlp {
  std::vector<SnLayer> layers;
  double input_scale = 1.0;  // the Lipschitz budget L

  Vector forward(const Vector& x) const;
  Matrix forward_batch(const Matrix& X) const;
};

SnMlp init_sn_mlp(int in_dim, const std::vector<int>& hidden_dims, int out_dim, double L,
                  std::uint64_t seed);

// Refresh u, v and the sigma estimate by power iteration.
double sn_power_iterate(SnLayer& layer, int power_iters);
// Divide the weight by its estimated top singular value (power iteration,
// directions persisted across calls). Returns the estimate.
double sn_normalize(SnLayer& layer, int power_iters);
void sn_normalize(SnMlp& net, int power_iters);

// ---- regression harness ----

struct TrainReport {
  std::vector<double> loss;            // per epoch (training loss)
  std::vector<double> mean_lft_iters;  // per epoch (0 for the sn baseline)
  std::vector<double> lip_hat, invlip_hat, bound;  // last known value per epoch
  int flagged_batches = 0;             // batches that used a non-converged iterate
  BiLipEstimate final_estimate;
  double final_loss = 0.0;
};

TrainReport train_regression(Blnn& model, const Dataset1D& data, const TrainConfig& config,
                             AnnealState* anneal = nullptr);
TrainReport train_regression(SnMlp& model, const Dataset1D& data, const TrainConfig& config);

// mean squared error of the trained model over a dataset
double eval_mse(const Blnn& model, const Dataset1D& data, const SolverConfig& inner);
double eval_mse(const SnMlp& model, const Dataset1D& data);

// empirical bi-Lipschitz estimate of the model map on [lo, hi]
BiLipEstimate estimate_model_bilip(const Blnn& model, double lo, double hi, int n_samples,
                                   std::uint64_t seed);
BiLipEstimate estimate_model_bilip(const SnMlp& model, double lo, double hi, int n_samples,
                                   std::uint64_t seed);

}  // namespace bilip

#endif

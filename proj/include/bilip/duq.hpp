#ifndef BILIP_DUQ_HPP
#define BILIP_DUQ_HPP

#include "bilip/blnn.hpp"
#include "bilip/training.hpp"

#include <cstdint>
#include <vector>

namespace bilip {

// Per-class RBF head over a feature extractor: K_c = exp(-(1/e)|W_c f - e_c|^2
// / (2 sigma^2)) with e the centroid dimension. Centroids follow the EMA
//   N_c <- g N_c + (1-g) n_c,  m_c <- g m_c + (1-g) sum W_c f,  e_c = m_c/N_c
// and receive no gradient.
struct DuqHead {
  std::vector<Matrix> w;  // per class, e x f (trainable, natural scale)
  Matrix centroids;       // e x C
  Matrix m_acc;           // e x C
  Vector n_acc;           // C
  double sigma = 0.1;
  double gamma = 0.999;
  // fixed input normalization: the kernel sees (w / feature_scale) f, so the
  // trainable matrices and their gradients stay at unit scale no matter how
  // large the extractor's output range is
  double feature_scale = 1.0;
  bool initialized = false;

  int n_classes() const { return int(w.size()); }
  int feature_dim() const { return w.empty() ? 0 : int(w[0].cols()); }
  int centroid_dim() const { return w.empty() ? 0 : int(w[0].rows()); }
  Matrix w_eff(int c) const { return w[size_t(c)] / feature_scale; }
};

// feature_scale: expected magnitude of the incoming features (e.g. the
// extractor's Lipschitz budget times the input radius); the class weights are
// shrunk by it so the kernels start in their responsive range.
DuqHead init_duq_head(int n_classes, int feature_dim, int centroid_dim, double sigma,
                      double gamma, std::uint64_t seed, double feature_scale = 1.0);

double duq_kernel(const DuqHead& head, const Vector& features, int c);
Vector duq_kernels(const DuqHead& head, const Vector& features);

struct DuqLossResult {
  double loss = 0.0;           // batch mean of sum-over-classes BCE
  Matrix feature_grads;        // f x n
  std::vector<Matrix> w_grads; // per class, e x f (empty unless requested)
};

// labels in {0..C-1}; one-hot targets internally.
DuqLossResult duq_loss(const DuqHead& head, const Matrix& features,
                       const Eigen::VectorXi& labels, bool with_w_grads = false);

void centroid_update(DuqHead& head, const Matrix& features, const Eigen::VectorXi& labels);

double certainty(const DuqHead& head, const Vector& features);
int predict(const DuqHead& head, const Vector& features);  // ties pick the lowest class

// Mann-Whitney rank statistic with midrank tie handling.
double auroc(const Vector& scores, const Eigen::VectorXi& labels);

struct MoonsConfig {
  int n_samples = 1500;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

struct MoonsData {
  Matrix points;  // 2 x n
  Eigen::VectorXi labels;
};

MoonsData two_moons(const MoonsConfig& config);

struct DuqTrainReport {
  double accuracy = 0.0;       // on the held-out moons
  double auroc_uniform = 0.0;  // certainty separates test moons from uniform noise
  double final_loss = 0.0;
  std::vector<double> loss;    // per epoch
  Matrix grid;                 // rows of (x, y, certainty) for the export
};

struct DuqTrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  SolverConfig inner;
  std::uint64_t seed = 0;
  int grid_resolution = 200;
  double grid_padding = 0.4;
  int ood_samples = 500;
};

DuqTrainReport train_duq(CompositeBlnn& extractor, DuqHead& head, const MoonsData& train,
                         const MoonsData& test, const DuqTrainConfig& config);

}  // namespace bilip

#endif

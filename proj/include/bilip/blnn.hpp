#ifndef BILIP_BLNN_HPP
#define BILIP_BLNN_HPP

#include "bilip/icnn.hpp"
#include "bilip/lft.hpp"
#include "bilip/picnn.hpp"

#include <optional>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

namespace bilip {

// The two sensitivity controls. In weighted mode the per-dimension vectors a
// and b replace the scalars: the quadratic terms become x.A^2x/2 and
// y.B^-2y/2 with A = diag(a), B = diag(b).
struct BlnnConfig {
  double alpha = 0.0;
  double beta = 1.0;
  Vector a_weights;  // empty unless weighted
  Vector b_weights;

  bool weighted() const { return a_weights.size() > 0 || b_weights.size() > 0; }
  void validate(int dim) const;
  double mu() const;  // strong convexity of F: 1/beta, or min_i 1/b_i^2
};

struct Blnn {
  IcnnParams core;
  BlnnConfig config;

  int dim() const { return core.input_dim; }
  // F(y) = G(y) + |y|^2/(2 beta) as value/gradient/Hessian with mu = 1/beta.
  ConvexObjective objective() const;
};

// Per-sample warm starts for the inner solve, keyed by sample index when one
// exists; keyless lookups fall back to the nearest stored input within a
// radius. Concurrent reads, serialized writes.
class WarmCache {
 public:
  std::optional<Vector> lookup(std::optional<long> key, const Vector& x,
                               double radius = 1e-6) const;
  void store(std::optional<long> key, const Vector& x, const Vector& y_star);
  size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<long, std::pair<Vector, Vector>> keyed_;
  std::vector<std::pair<Vector, Vector>> unkeyed_;
};

struct BlnnForward {
  Vector output;
  LftResult lft;
};

BlnnForward blnn_forward(const Blnn& model, const Vector& x, const SolverConfig& solver,
                         WarmCache* cache = nullptr, std::optional<long> key = std::nullopt);

// Same forward over an explicit objective (any strongly convex core).
BlnnForward blnn_forward_objective(const ConvexObjective& objective, const BlnnConfig& config,
                                   const Vector& x, const SolverConfig& solver,
                                   WarmCache* cache = nullptr,
                                   std::optional<long> key = std::nullopt);

// Implicit gradients at a converged y*: v = H^-1 grad_out with
// H = hess F(y*), parameter grads = -d/dtheta (v . grad G(y*)).
// Raises if the stationarity residual ||x - grad F(y*)|| exceeds 100 tol.
IcnnLayerGrads blnn_backward_params(const Blnn& model, const Vector& x, const Vector& y_star,
                                    const Vector& grad_out, double tol = 1e-3);

// grad_out . (H^-1 + alpha I), the Jacobian-transpose product of the forward map.
Vector blnn_input_vjp(const Blnn& model, const Vector& y_star, const Vector& grad_out);

Matrix blnn_hess_f(const Blnn& model, const Vector& y_star);

// ---- composition through a rectangular 0/1 diagonal projector (dim change) ----

struct CompositeBlnn {
  Blnn first;   // dim d1
  Blnn second;  // dim d2

  int d1() const { return first.dim(); }
  int d2() const { return second.dim(); }
  Matrix projector() const;  // d2 x d1, ones on the diagonal
};

Vector project_dims(const Vector& v, int to_dim);  // D v (truncate/zero-pad)

struct CompositeIntermediates {
  Vector f1_out;  // first stage output
  Vector mid;     // D f1(x)
  Vector y1_star, y2_star;
  LftResult lft1, lft2;
};

struct CompositeGrads {
  IcnnLayerGrads first;
  IcnnLayerGrads second;
};

Vector composite_forward(const CompositeBlnn& model, const Vector& x, const SolverConfig& solver,
                         WarmCache* cache1 = nullptr, WarmCache* cache2 = nullptr,
                         std::optional<long> key = std::nullopt,
                         CompositeIntermediates* inter = nullptr);

CompositeGrads composite_backward(const CompositeBlnn& model, const Vector& x,
                                  const CompositeIntermediates& inter, const Vector& grad_out,
                                  double tol = 1e-3);

Vector composite_input_vjp(const CompositeBlnn& model, const CompositeIntermediates& inter,
                           const Vector& grad_out);

// ---- partially bi-Lipschitz variant over a PICNN ----

struct Pblnn {
  PicnnParams core;
  BlnnConfig config;

  int block_dim() const { return core.convex_dim; }
  // F(y; x) = picnn(x, y) + |y|^2/(2 beta), strongly convex in y for fixed x.
  ConvexObjective objective(const Vector& x_nonconvex) const;
};

struct PblnnForward {
  Vector block_output;  // y* + alpha * block input; the nonconvex input passes
                        // through on the side and is not duplicated here
  LftResult lft;
};

PblnnForward pblnn_forward(const Pblnn& model, const Vector& x_nonconvex, const Vector& y_block,
                           const SolverConfig& solver, WarmCache* cache = nullptr,
                           std::optional<long> key = std::nullopt);

struct PblnnGrads {
  PicnnGrads core;
  Vector d_block_input;      // Xi-path gradient for the convex block input
  Vector d_nonconvex_input;  // mixed-derivative path for the u-path input
};

PblnnGrads pblnn_backward(const Pblnn& model, const Vector& x_nonconvex, const Vector& y_block,
                          const Vector& y_star, const Vector& grad_out, double tol = 1e-3);

// ---- batched fast paths (columns = samples); gd and newton kinds only ----

struct BlnnBatchForward {
  Matrix outputs;
  Matrix y_star;
  Eigen::VectorXi iters;
  Vector residuals;
  Eigen::Array<bool, Eigen::Dynamic, 1> converged;
  double mean_iters = 0.0;
};

BlnnBatchForward blnn_forward_batch(const Blnn& model, const Matrix& X, const SolverConfig& solver,
                                    const Matrix* warm_y0 = nullptr);

// accum += scale * parameter gradients summed over columns. v_out, when set,
// receives the per-column Hessian solves H^-1 grad_out.
void blnn_backward_params_batch(const Blnn& model, const Matrix& X, const Matrix& y_star,
                                const Matrix& grad_out, double tol, IcnnLayerGrads& accum,
                                double scale = 1.0, Matrix* v_out = nullptr);

struct CompositeBatchForward {
  Matrix outputs;
  BlnnBatchForward stage1, stage2;
};

CompositeBatchForward composite_forward_batch(const CompositeBlnn& model, const Matrix& X,
                                              const SolverConfig& solver,
                                              const Matrix* warm1 = nullptr,
                                              const Matrix* warm2 = nullptr);

void composite_backward_batch(const CompositeBlnn& model, const Matrix& X,
                              const CompositeBatchForward& fwd, const Matrix& grad_out, double tol,
                              CompositeGrads& accum, double scale = 1.0);

}  // namespace bilip

#endif

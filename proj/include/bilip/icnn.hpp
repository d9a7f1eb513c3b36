#ifndef BILIP_ICNN_HPP
#define BILIP_ICNN_HPP

#include "bilip/activation.hpp"
#include "bilip/common.hpp"

#include <cstdint>
#include <vector>

namespace bilip {

// One layer of the input-convex recursion z_{i+1} = g(W^z z_i + W^y y + b).
// The gate w_gate is absent at layer 0 and elementwise nonnegative elsewhere.
struct IcnnLayer {
  Matrix w_gate;   // h_out x h_in, empty (0x0) at layer 0
  Matrix w_input;  // h_out x d
  Vector bias;     // h_out

  int out_dim() const { return int(bias.size()); }
  bool has_gate() const { return w_gate.size() > 0; }
};

// Gradients (or any tangent) with the same shapes as a layer stack.
using IcnnLayerGrads = std::vector<IcnnLayer>;

struct InitScheme {
  enum class Kind { xavier_clamp, uniform };
  Kind kind = Kind::xavier_clamp;
  double lo = 0.0;  // gate draw range for Kind::uniform
  double hi = 1.0;

  static InitScheme xavier_clamp() { return InitScheme{}; }
  static InitScheme uniform(double lo, double hi) {
    require(lo <= hi, "InitScheme::uniform requires lo <= hi");
    return InitScheme{Kind::uniform, lo, hi};
  }
};

// Scratch buffers reused across batched evaluations of one network.
struct IcnnWork {
  std::vector<Matrix> a;   // pre-activations per layer
  std::vector<Matrix> z;   // layer outputs (a for an un-activated head)
  std::vector<Matrix> c;   // backward adjoints
  std::vector<Matrix> ta;  // tangent pre-activations
  std::vector<Matrix> tz;  // tangent outputs
};

struct IcnnParams {
  std::vector<IcnnLayer> layers;  // hidden layers followed by the scalar map
  ActivationKind activation = ActivationKind::softplus;
  int input_dim = 0;
  bool affine_head = true;  // last layer skips the activation when true

  int depth() const { return int(layers.size()); }
  bool layer_activated(int i) const { return !(affine_head && i == depth() - 1); }
  long param_count() const;
  void validate() const;

  double value(const Vector& y) const;
  Vector gradient(const Vector& y) const;
  // Hessian of the scalar output in the input; softplus only. Symmetric PSD.
  Matrix hessian(const Vector& y) const;
  // d/dp of v . grad(y) for every parameter p; softplus only, linear in v.
  IcnnLayerGrads grad_param_vjp(const Vector& y, const Vector& v) const;
};

IcnnParams init_icnn(int input_dim, const std::vector<int>& hidden_dims, ActivationKind act,
                     const InitScheme& scheme, std::uint64_t seed);

// Clamp every gate weight at zero; other parameters untouched.
void project_nonneg(IcnnParams& params);

// ---- batched kernels; columns of Y are independent samples ----

RowVector icnn_value_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w);
Matrix icnn_gradient_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w);
void icnn_hessian_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w,
                        std::vector<Matrix>& H_out);
// accum += scale * sum_s (d/dp of v_s . grad(y_s)); optionally emits H v per column.
void icnn_grad_param_vjp_batch(const IcnnParams& p, const Matrix& Y, const Matrix& V, IcnnWork& w,
                               IcnnLayerGrads* grads_accum, double scale, Matrix* Hv_out);

// ---- flat parameter views (row-major per tensor, layer by layer) ----

IcnnLayerGrads zero_grads_like(const IcnnParams& p);
long flat_size(const IcnnLayerGrads& g);
void flatten_into(const std::vector<IcnnLayer>& layers, Vector& out, long offset = 0);
void unflatten_from(const Vector& flat, std::vector<IcnnLayer>& layers, long offset = 0);

}  // namespace bilip

#endif

#ifndef BILIP_PICNN_HPP
#define BILIP_PICNN_HPP

#include "bilip/activation.hpp"
#include "bilip/common.hpp"

#include <cstdint>
#include <vector>

namespace bilip {

// Gated layer of the partially convex recursion
//   z_{i+1} = g( W^z (z_i . [W^zu u_i + b^z]_+) + W^y (y . (W^yu u_i + b^y))
//               + W^u u_i + b ).
// Only w_gate is sign-constrained (nonnegative); the gate modulation is
// clamped at zero before the Hadamard product.
struct PicnnLayer {
  Matrix w_gate;     // h_out x h_in, empty at layer 0
  Matrix w_gate_u;   // h_in x u_dim, empty at layer 0
  Vector b_gate;     // h_in, empty at layer 0
  Matrix w_input;    // h_out x p
  Matrix w_input_u;  // p x u_dim
  Vector b_input;    // p
  Matrix w_u;        // h_out x u_dim
  Vector bias;       // h_out

  int out_dim() const { return int(bias.size()); }
  bool has_gate() const { return w_gate.size() > 0; }
};

struct PicnnULayer {
  Matrix w;  // u_{i+1} x u_i
  Vector b;
};

struct PicnnGrads {
  std::vector<PicnnLayer> layers;
  std::vector<PicnnULayer> u_path;
};

struct PicnnParams {
  std::vector<PicnnULayer> u_path;  // u_0 = x, u_{i+1} = g(w u_i + b)
  std::vector<PicnnLayer> layers;   // gated layers; last maps to a scalar
  ActivationKind activation = ActivationKind::softplus;
  int convex_dim = 0;     // p, dimension of y
  int nonconvex_dim = 0;  // dimension of x
  bool affine_head = true;

  int depth() const { return int(layers.size()); }
  bool layer_activated(int i) const { return !(affine_head && i == depth() - 1); }
  long param_count() const;
  void validate() const;

  double value(const Vector& x, const Vector& y) const;
  Vector grad_y(const Vector& x, const Vector& y) const;
  Matrix hessian_y(const Vector& x, const Vector& y) const;  // softplus only
  // d/dp of v . grad_y(x, y) for every parameter p (u-path included).
  PicnnGrads grad_y_param_vjp(const Vector& x, const Vector& y, const Vector& v) const;
  // d/dx of v . grad_y(x, y): the mixed second derivative pulled back to x.
  Vector grad_y_x_vjp(const Vector& x, const Vector& y, const Vector& v) const;
};

PicnnParams init_picnn(int convex_dim, int nonconvex_dim, const std::vector<int>& hidden_dims,
                       const std::vector<int>& u_hidden_dims, ActivationKind act,
                       std::uint64_t seed);

void project_nonneg(PicnnParams& params);

PicnnGrads zero_grads_like(const PicnnParams& p);
long flat_size(const PicnnGrads& g);
Vector picnn_flatten(const PicnnParams& p);
void picnn_unflatten(const Vector& flat, PicnnParams& p);
Vector picnn_flatten_grads(const PicnnGrads& g);

}  // namespace bilip

#endif

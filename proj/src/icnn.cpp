#include "bilip/icnn.hpp"

namespace bilip {

namespace {

void ensure_size(std::vector<Matrix>& v, size_t n) {
  if (v.size() < n) v.resize(n);
}

// Forward recursion over all columns; fills w.a and w.z.
void forward_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w) {
  require(Y.rows() == p.input_dim, "icnn: input dimension mismatch");
  const int L = p.depth();
  const Activation act{p.activation};
  ensure_size(w.a, L);
  ensure_size(w.z, L);
  for (int i = 0; i < L; ++i) {
    const IcnnLayer& layer = p.layers[i];
    w.a[i].noalias() = layer.w_input * Y;
    if (layer.has_gate()) w.a[i].noalias() += layer.w_gate * w.z[i - 1];
    w.a[i].colwise() += layer.bias;
    if (p.layer_activated(i))
      w.z[i] = act.value(w.a[i].array()).matrix();
    else
      w.z[i] = w.a[i];
  }
  require(w.z[L - 1].rows() == 1, "icnn: final layer must map to a scalar");
}

}  // namespace

long IcnnParams::param_count() const {
  long n = 0;
  for (const IcnnLayer& l : layers) n += l.w_gate.size() + l.w_input.size() + l.bias.size();
  return n;
}

void IcnnParams::validate() const {
  require(!layers.empty(), "icnn: empty layer stack");
  require(layers.back().out_dim() == 1, "icnn: final layer must map to a scalar");
  int prev = -1;
  for (size_t i = 0; i < layers.size(); ++i) {
    const IcnnLayer& l = layers[i];
    require(l.w_input.rows() == l.out_dim() && l.w_input.cols() == input_dim,
            "icnn: w_input shape mismatch");
    if (i == 0) {
      require(!l.has_gate(), "icnn: layer 0 must not have a gate");
    } else {
      require(l.has_gate() && l.w_gate.rows() == l.out_dim() && l.w_gate.cols() == prev,
              "icnn: w_gate shape mismatch");
      require(l.w_gate.minCoeff() >= 0.0, "icnn: gate weights must be nonnegative");
    }
    prev = l.out_dim();
  }
}

double IcnnParams::value(const Vector& y) const {
  IcnnWork w;
  return icnn_value_batch(*this, y, w)(0);
}

Vector IcnnParams::gradient(const Vector& y) const {
  IcnnWork w;
  return icnn_gradient_batch(*this, y, w).col(0);
}

Matrix IcnnParams::hessian(const Vector& y) const {
  IcnnWork w;
  std::vector<Matrix> H;
  icnn_hessian_batch(*this, y, w, H);
  return H[0];
}

IcnnLayerGrads IcnnParams::grad_param_vjp(const Vector& y, const Vector& v) const {
  IcnnWork w;
  IcnnLayerGrads grads = zero_grads_like(*this);
  icnn_grad_param_vjp_batch(*this, y, v, w, &grads, 1.0, nullptr);
  return grads;
}

RowVector icnn_value_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w) {
  forward_batch(p, Y, w);
  return w.z[p.depth() - 1].row(0);
}

Matrix icnn_gradient_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w) {
  forward_batch(p, Y, w);
  const int L = p.depth();
  const Activation act{p.activation};
  ensure_size(w.c, L);

  // c[i] holds d out / d a_i; sweep the stack backwards.
  Matrix grad = Matrix::Zero(p.input_dim, Y.cols());
  for (int i = L - 1; i >= 0; --i) {
    if (i == L - 1) {
      if (p.layer_activated(i))
        w.c[i] = act.d1(w.a[i].array()).matrix();
      else
        w.c[i] = Matrix::Ones(1, Y.cols());
    } else {
      w.c[i].noalias() = p.layers[i + 1].w_gate.transpose() * w.c[i + 1];
      if (p.layer_activated(i)) w.c[i].array() *= act.d1(w.a[i].array());
    }
    grad.noalias() += p.layers[i].w_input.transpose() * w.c[i];
  }
  return grad;
}

void icnn_grad_param_vjp_batch(const IcnnParams& p, const Matrix& Y, const Matrix& V, IcnnWork& w,
                               IcnnLayerGrads* grads_accum, double scale, Matrix* Hv_out) {
  require(p.activation == ActivationKind::softplus || (p.depth() == 1 && p.affine_head),
          "icnn: parameter/Hessian derivatives require softplus activation");
  require(V.rows() == p.input_dim && V.cols() == Y.cols(), "icnn: tangent shape mismatch");
  forward_batch(p, Y, w);
  const int L = p.depth();
  const int n = int(Y.cols());
  const Activation act{p.activation};
  ensure_size(w.ta, L);
  ensure_size(w.tz, L);

  // Tangent forward pass: directional derivative of the net along V.
  for (int i = 0; i < L; ++i) {
    const IcnnLayer& layer = p.layers[i];
    w.ta[i].noalias() = layer.w_input * V;
    if (layer.has_gate()) w.ta[i].noalias() += layer.w_gate * w.tz[i - 1];
    if (p.layer_activated(i))
      w.tz[i] = (act.d1(w.a[i].array()) * w.ta[i].array()).matrix();
    else
      w.tz[i] = w.ta[i];
  }

  // Reverse pass over the tangent graph. phi = sum over columns of the tangent
  // output; rz/rtz are d phi / d z_i and d phi / d tz_i.
  if (Hv_out) Hv_out->setZero(p.input_dim, n);
  Matrix rz = Matrix::Zero(1, n);
  Matrix rtz = Matrix::Ones(1, n);
  Matrix pa, pta;
  for (int i = L - 1; i >= 0; --i) {
    const IcnnLayer& layer = p.layers[i];
    if (p.layer_activated(i)) {
      pta = (rtz.array() * act.d1(w.a[i].array())).matrix();
      pa = (rtz.array() * w.ta[i].array() * act.d2(w.a[i].array()) +
            rz.array() * act.d1(w.a[i].array()))
               .matrix();
    } else {
      pta = rtz;
      pa = rz;
    }
    if (grads_accum) {
      IcnnLayer& g = (*grads_accum)[i];
      if (layer.has_gate())
        g.w_gate.noalias() += scale * (pa * w.z[i - 1].transpose() + pta * w.tz[i - 1].transpose());
      g.w_input.noalias() += scale * (pa * Y.transpose() + pta * V.transpose());
      g.bias.noalias() += scale * pa.rowwise().sum();
    }
    if (Hv_out) Hv_out->noalias() += layer.w_input.transpose() * pa;
    if (layer.has_gate()) {
      rz.noalias() = layer.w_gate.transpose() * pa;
      rtz.noalias() = layer.w_gate.transpose() * pta;
    }
  }
}

void icnn_hessian_batch(const IcnnParams& p, const Matrix& Y, IcnnWork& w,
                        std::vector<Matrix>& H_out) {
  const int d = p.input_dim;
  const int n = int(Y.cols());
  H_out.assign(n, Matrix(d, d));
  Matrix V(d, n), Hv;
  for (int j = 0; j < d; ++j) {
    V.setZero();
    V.row(j).setOnes();
    icnn_grad_param_vjp_batch(p, Y, V, w, nullptr, 0.0, &Hv);
    for (int s = 0; s < n; ++s) H_out[s].col(j) = Hv.col(s);
  }
  // the assembly is symmetric up to rounding; make it exact
  for (int s = 0; s < n; ++s) H_out[s] = 0.5 * (H_out[s] + H_out[s].transpose()).eval();
}

IcnnParams init_icnn(int input_dim, const std::vector<int>& hidden_dims, ActivationKind act,
                     const InitScheme& scheme, std::uint64_t seed) {
  require(input_dim >= 1, "icnn: input_dim must be positive");
  require(!hidden_dims.empty(), "icnn: empty hidden dims");
  Rng rng(seed);
  IcnnParams p;
  p.activation = act;
  p.input_dim = input_dim;
  p.affine_head = true;

  std::vector<int> out_dims = hidden_dims;
  out_dims.push_back(1);
  int prev = 0;
  for (size_t i = 0; i < out_dims.size(); ++i) {
    IcnnLayer layer;
    const int h = out_dims[i];
    require(h >= 1, "icnn: layer width must be positive");
    layer.w_input = xavier_matrix(h, input_dim, rng);
    if (i > 0) {
      switch (scheme.kind) {
        case InitScheme::Kind::xavier_clamp:
          layer.w_gate = xavier_matrix(h, prev, rng).cwiseMax(0.0);
          break;
        case InitScheme::Kind::uniform:
          layer.w_gate = uniform_matrix(h, prev, scheme.lo, scheme.hi, rng);
          break;
      }
    }
    layer.bias = Vector::Zero(h);
    prev = h;
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

void project_nonneg(IcnnParams& params) {
  for (IcnnLayer& l : params.layers)
    if (l.has_gate()) l.w_gate = l.w_gate.cwiseMax(0.0);
}

IcnnLayerGrads zero_grads_like(const IcnnParams& p) {
  IcnnLayerGrads g;
  g.reserve(p.layers.size());
  for (const IcnnLayer& l : p.layers) {
    IcnnLayer z;
    z.w_gate = Matrix::Zero(l.w_gate.rows(), l.w_gate.cols());
    z.w_input = Matrix::Zero(l.w_input.rows(), l.w_input.cols());
    z.bias = Vector::Zero(l.bias.size());
    g.push_back(std::move(z));
  }
  return g;
}

long flat_size(const IcnnLayerGrads& g) {
  long n = 0;
  for (const IcnnLayer& l : g) n += l.w_gate.size() + l.w_input.size() + l.bias.size();
  return n;
}

void flatten_into(const std::vector<IcnnLayer>& layers, Vector& out, long offset) {
  long k = offset;
  for (const IcnnLayer& l : layers) {
    auto put = [&](const Matrix& m) {
      for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
    };
    if (l.has_gate()) put(l.w_gate);
    put(l.w_input);
    put(Matrix(l.bias));
  }
}

void unflatten_from(const Vector& flat, std::vector<IcnnLayer>& layers, long offset) {
  long k = offset;
  for (IcnnLayer& l : layers) {
    auto take = [&](Matrix& m) {
      for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) m(i, j) = flat[k++];
    };
    if (l.has_gate()) take(l.w_gate);
    take(l.w_input);
    Matrix b = l.bias;
    take(b);
    l.bias = b;
  }
}

}  // namespace bilip

#include "bilip/picnn.hpp"

namespace bilip {

namespace {

struct PicnnState {
  std::vector<Vector> u;      // u_0 = x, ..., u_{L-1}
  std::vector<Vector> au;     // u-path pre-activations
  std::vector<Vector> pre_m;  // gate modulation before clamping
  std::vector<Vector> m;      // clamped gate modulation
  std::vector<Vector> n;      // y modulation
  std::vector<Vector> a;      // gated-path pre-activations
  std::vector<Vector> z;      // gated-path outputs
};

void forward(const PicnnParams& p, const Vector& x, const Vector& y, PicnnState& s) {
  require(x.size() == p.nonconvex_dim, "picnn: nonconvex input dimension mismatch");
  require(y.size() == p.convex_dim, "picnn: convex input dimension mismatch");
  const int L = p.depth();
  const Activation act{p.activation};

  s.u.resize(L);
  s.au.resize(p.u_path.size());
  s.u[0] = x;
  for (size_t i = 0; i < p.u_path.size(); ++i) {
    s.au[i] = p.u_path[i].w * s.u[i] + p.u_path[i].b;
    s.u[i + 1] = act.value(s.au[i].array()).matrix();
  }

  s.pre_m.resize(L);
  s.m.resize(L);
  s.n.resize(L);
  s.a.resize(L);
  s.z.resize(L);
  for (int i = 0; i < L; ++i) {
    const PicnnLayer& l = p.layers[i];
    s.n[i] = l.w_input_u * s.u[i] + l.b_input;
    s.a[i] = l.w_input * y.cwiseProduct(s.n[i]) + l.w_u * s.u[i] + l.bias;
    if (l.has_gate()) {
      s.pre_m[i] = l.w_gate_u * s.u[i] + l.b_gate;
      s.m[i] = s.pre_m[i].cwiseMax(0.0);
      s.a[i] += l.w_gate * s.z[i - 1].cwiseProduct(s.m[i]);
    }
    s.z[i] = p.layer_activated(i) ? Vector(act.value(s.a[i].array()).matrix()) : s.a[i];
  }
  require(s.z[L - 1].size() == 1, "picnn: final layer must map to a scalar");
}

}  // namespace

long PicnnParams::param_count() const {
  long c = 0;
  for (const PicnnLayer& l : layers)
    c += l.w_gate.size() + l.w_gate_u.size() + l.b_gate.size() + l.w_input.size() +
         l.w_input_u.size() + l.b_input.size() + l.w_u.size() + l.bias.size();
  for (const PicnnULayer& l : u_path) c += l.w.size() + l.b.size();
  return c;
}

void PicnnParams::validate() const {
  require(!layers.empty(), "picnn: empty layer stack");
  require(layers.back().out_dim() == 1, "picnn: final layer must map to a scalar");
  require(u_path.size() + 1 == layers.size(), "picnn: u-path must provide u_0..u_{L-1}");
  int u_dim = nonconvex_dim;
  for (size_t i = 0; i < layers.size(); ++i) {
    const PicnnLayer& l = layers[i];
    if (i > 0) require(l.w_gate.minCoeff() >= 0.0, "picnn: gate weights must be nonnegative");
    require(l.w_input.cols() == convex_dim && l.w_input_u.cols() == u_dim,
            "picnn: modulation shape mismatch");
    if (i + 1 < layers.size()) u_dim = int(u_path[i].b.size());
  }
}

double PicnnParams::value(const Vector& x, const Vector& y) const {
  PicnnState s;
  forward(*this, x, y, s);
  return s.z[depth() - 1](0);
}

Vector PicnnParams::grad_y(const Vector& x, const Vector& y) const {
  PicnnState s;
  forward(*this, x, y, s);
  const int L = depth();
  const Activation act{activation};
  Vector grad = Vector::Zero(convex_dim);
  Vector c;  // d out / d a_i
  for (int i = L - 1; i >= 0; --i) {
    const PicnnLayer& l = layers[i];
    if (i == L - 1)
      c = layer_activated(i) ? Vector(act.d1(s.a[i].array()).matrix())
                             : Vector(Vector::Ones(1));
    else {
      c = s.m[i + 1].cwiseProduct(layers[i + 1].w_gate.transpose() * c);
      c = c.cwiseProduct(act.d1(s.a[i].array()).matrix());
    }
    grad += s.n[i].cwiseProduct(l.w_input.transpose() * c);
  }
  return grad;
}

Matrix PicnnParams::hessian_y(const Vector& x, const Vector& y) const {
  require(activation == ActivationKind::softplus,
          "picnn: Hessian requires softplus activation");
  PicnnState s;
  forward(*this, x, y, s);
  const int L = depth();
  const Activation act{activation};

  // Jacobians of the pre-activations in y.
  std::vector<Matrix> Ja(L);
  Matrix Jz;
  for (int i = 0; i < L; ++i) {
    const PicnnLayer& l = layers[i];
    Ja[i] = l.w_input * s.n[i].asDiagonal();
    if (l.has_gate()) Ja[i] += l.w_gate * s.m[i].asDiagonal() * Jz;
    if (layer_activated(i))
      Jz = act.d1(s.a[i].array()).matrix().asDiagonal() * Ja[i];
    else
      Jz = Ja[i];
  }

  // cz = d out / d z_{i+1} with downstream activations linearized.
  Matrix H = Matrix::Zero(convex_dim, convex_dim);
  Vector cz = Vector::Ones(1);
  for (int i = L - 1; i >= 0; --i) {
    if (layer_activated(i)) {
      const Vector w = cz.cwiseProduct(act.d2(s.a[i].array()).matrix());
      H += Ja[i].transpose() * w.asDiagonal() * Ja[i];
      cz = cz.cwiseProduct(act.d1(s.a[i].array()).matrix());
    }
    if (layers[i].has_gate())
      cz = s.m[i].cwiseProduct(layers[i].w_gate.transpose() * cz);
  }
  return 0.5 * (H + H.transpose());
}

namespace {

struct VjpResult {
  PicnnGrads grads;
  Vector x_grad;
};

// Reverse pass over the y-directional-derivative graph of the network;
// phi = v . grad_y f(x, y). Emits d phi / d theta and d phi / d x.
VjpResult vjp_core(const PicnnParams& p, const Vector& x, const Vector& y, const Vector& v) {
  require(p.activation == ActivationKind::softplus,
          "picnn: parameter derivatives require softplus activation");
  require(v.size() == p.convex_dim, "picnn: tangent dimension mismatch");
  PicnnState s;
  forward(p, x, y, s);
  const int L = p.depth();
  const Activation act{p.activation};

  // tangent forward pass along v (u-path has zero tangent)
  std::vector<Vector> ta(L), tz(L);
  for (int i = 0; i < L; ++i) {
    const PicnnLayer& l = p.layers[i];
    ta[i] = l.w_input * v.cwiseProduct(s.n[i]);
    if (l.has_gate()) ta[i] += l.w_gate * tz[i - 1].cwiseProduct(s.m[i]);
    tz[i] = p.layer_activated(i)
                ? Vector((act.d1(s.a[i].array()) * ta[i].array()).matrix())
                : ta[i];
  }

  VjpResult out;
  out.grads = zero_grads_like(p);
  std::vector<Vector> ru(L);
  for (int i = 0; i < L; ++i) ru[i] = Vector::Zero(s.u[i].size());

  Vector rz = Vector::Zero(1), rtz = Vector::Ones(1);
  for (int i = L - 1; i >= 0; --i) {
    const PicnnLayer& l = p.layers[i];
    PicnnLayer& g = out.grads.layers[i];
    Vector pa, pta;
    if (p.layer_activated(i)) {
      pta = (rtz.array() * act.d1(s.a[i].array())).matrix();
      pa = (rtz.array() * ta[i].array() * act.d2(s.a[i].array()) +
            rz.array() * act.d1(s.a[i].array()))
               .matrix();
    } else {
      pta = rtz;
      pa = rz;
    }

    g.w_input += pa * y.cwiseProduct(s.n[i]).transpose() + pta * v.cwiseProduct(s.n[i]).transpose();
    g.w_u += pa * s.u[i].transpose();
    g.bias += pa;
    const Vector rn = y.cwiseProduct(l.w_input.transpose() * pa) +
                      v.cwiseProduct(l.w_input.transpose() * pta);
    g.w_input_u += rn * s.u[i].transpose();
    g.b_input += rn;
    ru[i] += l.w_input_u.transpose() * rn + l.w_u.transpose() * pa;

    if (l.has_gate()) {
      g.w_gate += pa * s.z[i - 1].cwiseProduct(s.m[i]).transpose() +
                  pta * tz[i - 1].cwiseProduct(s.m[i]).transpose();
      const Vector rzm = l.w_gate.transpose() * pa;
      const Vector rtzm = l.w_gate.transpose() * pta;
      const Vector rm = rzm.cwiseProduct(s.z[i - 1]) + rtzm.cwiseProduct(tz[i - 1]);
      const Vector gate_open =
          (s.pre_m[i].array() > 0.0).cast<double>().matrix();
      const Vector rpre = rm.cwiseProduct(gate_open);
      g.w_gate_u += rpre * s.u[i].transpose();
      g.b_gate += rpre;
      ru[i] += l.w_gate_u.transpose() * rpre;
      rz = rzm.cwiseProduct(s.m[i]);
      rtz = rtzm.cwiseProduct(s.m[i]);
    }
  }

  for (int i = int(p.u_path.size()) - 1; i >= 0; --i) {
    const Vector pau = (ru[i + 1].array() * act.d1(s.au[i].array())).matrix();
    out.grads.u_path[i].w += pau * s.u[i].transpose();
    out.grads.u_path[i].b += pau;
    ru[i] += p.u_path[i].w.transpose() * pau;
  }
  out.x_grad = ru[0];
  return out;
}

}  // namespace

PicnnGrads PicnnParams::grad_y_param_vjp(const Vector& x, const Vector& y, const Vector& v) const {
  return vjp_core(*this, x, y, v).grads;
}

Vector PicnnParams::grad_y_x_vjp(const Vector& x, const Vector& y, const Vector& v) const {
  return vjp_core(*this, x, y, v).x_grad;
}

PicnnParams init_picnn(int convex_dim, int nonconvex_dim, const std::vector<int>& hidden_dims,
                       const std::vector<int>& u_hidden_dims, ActivationKind act,
                       std::uint64_t seed) {
  require(convex_dim >= 1 && nonconvex_dim >= 1, "picnn: dimensions must be positive");
  require(!hidden_dims.empty(), "picnn: empty hidden dims");
  require(u_hidden_dims.size() == hidden_dims.size(),
          "picnn: need one u-path layer per hidden layer");
  Rng rng(seed);
  PicnnParams p;
  p.activation = act;
  p.convex_dim = convex_dim;
  p.nonconvex_dim = nonconvex_dim;
  p.affine_head = true;

  std::vector<int> out_dims = hidden_dims;
  out_dims.push_back(1);
  std::vector<int> u_dims;
  u_dims.push_back(nonconvex_dim);
  for (int h : u_hidden_dims) u_dims.push_back(h);

  int prev = 0;
  for (size_t i = 0; i < out_dims.size(); ++i) {
    PicnnLayer l;
    const int h = out_dims[i];
    const int ud = u_dims[i];
    l.w_input = xavier_matrix(h, convex_dim, rng);
    l.w_input_u = xavier_matrix(convex_dim, ud, rng);
    // modulations start near 1 so the net begins close to an ICNN in y
    l.b_input = Vector::Ones(convex_dim);
    l.w_u = xavier_matrix(h, ud, rng);
    l.bias = Vector::Zero(h);
    if (i > 0) {
      l.w_gate = xavier_matrix(h, prev, rng).cwiseMax(0.0);
      l.w_gate_u = xavier_matrix(prev, ud, rng);
      l.b_gate = Vector::Ones(prev);
    }
    prev = h;
    p.layers.push_back(std::move(l));
  }
  for (size_t i = 0; i + 1 < u_dims.size(); ++i) {
    PicnnULayer ul;
    ul.w = xavier_matrix(u_dims[i + 1], u_dims[i], rng);
    ul.b = Vector::Zero(u_dims[i + 1]);
    p.u_path.push_back(std::move(ul));
  }
  p.validate();
  return p;
}

void project_nonneg(PicnnParams& params) {
  for (PicnnLayer& l : params.layers)
    if (l.has_gate()) l.w_gate = l.w_gate.cwiseMax(0.0);
}

PicnnGrads zero_grads_like(const PicnnParams& p) {
  PicnnGrads g;
  for (const PicnnLayer& l : p.layers) {
    PicnnLayer z;
    z.w_gate = Matrix::Zero(l.w_gate.rows(), l.w_gate.cols());
    z.w_gate_u = Matrix::Zero(l.w_gate_u.rows(), l.w_gate_u.cols());
    z.b_gate = Vector::Zero(l.b_gate.size());
    z.w_input = Matrix::Zero(l.w_input.rows(), l.w_input.cols());
    z.w_input_u = Matrix::Zero(l.w_input_u.rows(), l.w_input_u.cols());
    z.b_input = Vector::Zero(l.b_input.size());
    z.w_u = Matrix::Zero(l.w_u.rows(), l.w_u.cols());
    z.bias = Vector::Zero(l.bias.size());
    g.layers.push_back(std::move(z));
  }
  for (const PicnnULayer& l : p.u_path) {
    PicnnULayer z;
    z.w = Matrix::Zero(l.w.rows(), l.w.cols());
    z.b = Vector::Zero(l.b.size());
    g.u_path.push_back(std::move(z));
  }
  return g;
}

namespace {

template <typename LayerFn, typename ULayerFn>
void visit_tensors(const std::vector<PicnnLayer>& layers, const std::vector<PicnnULayer>& u_path,
                   LayerFn&& lf, ULayerFn&& uf) {
  for (const PicnnLayer& l : layers) {
    if (l.has_gate()) {
      lf(l.w_gate);
      lf(l.w_gate_u);
      lf(Matrix(l.b_gate));
    }
    lf(l.w_input);
    lf(l.w_input_u);
    lf(Matrix(l.b_input));
    lf(l.w_u);
    lf(Matrix(l.bias));
  }
  for (const PicnnULayer& l : u_path) {
    uf(l.w);
    uf(Matrix(l.b));
  }
}

}  // namespace

long flat_size(const PicnnGrads& g) {
  long n = 0;
  auto count = [&n](const Matrix& m) { n += m.size(); };
  visit_tensors(g.layers, g.u_path, count, count);
  return n;
}

namespace {

Vector flatten_stacks(const std::vector<PicnnLayer>& layers,
                      const std::vector<PicnnULayer>& u_path) {
  std::vector<double> vals;
  auto put = [&vals](const Matrix& m) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) vals.push_back(m(i, j));
  };
  visit_tensors(layers, u_path, put, put);
  return Eigen::Map<const Vector>(vals.data(), long(vals.size()));
}

}  // namespace

Vector picnn_flatten(const PicnnParams& p) { return flatten_stacks(p.layers, p.u_path); }
Vector picnn_flatten_grads(const PicnnGrads& g) { return flatten_stacks(g.layers, g.u_path); }

void picnn_unflatten(const Vector& flat, PicnnParams& p) {
  long k = 0;
  auto take = [&](Matrix& m) {
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) m(i, j) = flat[k++];
  };
  auto take_vec = [&](Vector& v) {
    for (long i = 0; i < v.size(); ++i) v[i] = flat[k++];
  };
  for (PicnnLayer& l : p.layers) {
    if (l.has_gate()) {
      take(l.w_gate);
      take(l.w_gate_u);
      take_vec(l.b_gate);
    }
    take(l.w_input);
    take(l.w_input_u);
    take_vec(l.b_input);
    take(l.w_u);
    take_vec(l.bias);
  }
  for (PicnnULayer& l : p.u_path) {
    take(l.w);
    take_vec(l.b);
  }
  require(k == flat.size(), "picnn: flat parameter size mismatch");
}

}  // namespace bilip

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bilip/icnn.hpp"
#include "test_util.hpp"

#include <cmath>
#include <random>

using namespace bilip;

namespace {

IcnnParams one_layer(ActivationKind act, double w, double b) {
  IcnnParams p;
  p.activation = act;
  p.input_dim = 1;
  p.affine_head = false;  // the single layer is activated
  IcnnLayer l;
  l.w_input = Matrix::Constant(1, 1, w);
  l.bias = Vector::Constant(1, b);
  p.layers.push_back(l);
  return p;
}

// Reference evaluation: a literal transcription of the layer recursion,
// independent of the library kernels.
double reference_forward(const IcnnParams& p, const Vector& y) {
  std::vector<double> z;
  for (int i = 0; i < p.depth(); ++i) {
    const IcnnLayer& l = p.layers[i];
    std::vector<double> a(size_t(l.out_dim()), 0.0);
    for (int r = 0; r < l.out_dim(); ++r) {
      double s = l.bias[r];
      for (int c = 0; c < p.input_dim; ++c) s += l.w_input(r, c) * y[c];
      if (l.has_gate())
        for (size_t c = 0; c < z.size(); ++c) s += l.w_gate(r, long(c)) * z[c];
      a[size_t(r)] = s;
    }
    z.clear();
    for (double v : a) {
      if (p.layer_activated(i))
        z.push_back(p.activation == ActivationKind::softplus ? std::log1p(std::exp(v))
                                                             : std::max(v, 0.0));
      else
        z.push_back(v);
    }
  }
  return z[0];
}

// Same recursion with a positive bump injected on the output of layer `at`.
double reference_forward_bumped(const IcnnParams& p, const Vector& y, int at, double bump) {
  std::vector<double> z;
  for (int i = 0; i < p.depth(); ++i) {
    const IcnnLayer& l = p.layers[i];
    std::vector<double> a(size_t(l.out_dim()), 0.0);
    for (int r = 0; r < l.out_dim(); ++r) {
      double s = l.bias[r];
      for (int c = 0; c < p.input_dim; ++c) s += l.w_input(r, c) * y[c];
      if (l.has_gate())
        for (size_t c = 0; c < z.size(); ++c) s += l.w_gate(r, long(c)) * z[c];
      a[size_t(r)] = s;
    }
    z.clear();
    for (double v : a)
      z.push_back(p.layer_activated(i) ? std::log1p(std::exp(v)) : v);
    if (i == at)
      for (double& v : z) v += bump;
  }
  return z[0];
}

}  // namespace

TEST_CASE("forward matches closed forms") {
  const IcnnParams sp = one_layer(ActivationKind::softplus, 1.0, 0.0);
  CHECK(sp.value(Vector::Zero(1)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const IcnnParams re = one_layer(ActivationKind::relu, 2.0, 1.0);
  CHECK(re.value(Vector::Constant(1, 3.0)) == doctest::Approx(7.0));
}

TEST_CASE("forward matches an independent re-evaluation of the recursion") {
  const IcnnParams p =
      init_icnn(2, {8, 8}, ActivationKind::softplus, InitScheme::xavier_clamp(), 0);
  Vector y(2);
  y << 0.5, -0.5;
  CHECK(p.value(y) == doctest::Approx(reference_forward(p, y)).epsilon(1e-12));
}

TEST_CASE("gradient: closed form and finite differences") {
  const IcnnParams sp = one_layer(ActivationKind::softplus, 1.0, 0.0);
  CHECK(sp.gradient(Vector::Zero(1))(0) == doctest::Approx(0.5).epsilon(1e-12));

  const IcnnParams re = one_layer(ActivationKind::relu, 2.0, 1.0);
  CHECK(re.gradient(Vector::Constant(1, 3.0))(0) == doctest::Approx(2.0));

  const IcnnParams p =
      init_icnn(3, {8, 8}, ActivationKind::softplus, InitScheme::xavier_clamp(), 7);
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    Vector y(3);
    for (int i = 0; i < 3; ++i) y[i] = g(rng);
    const Vector fd = test::fd_gradient([&](const Vector& v) { return p.value(v); }, y, 1e-5);
    CHECK(test::rel_err(p.gradient(y), fd) < 1e-6);
  }
}

TEST_CASE("hessian: closed form, symmetry, psd, finite differences") {
  const IcnnParams sp = one_layer(ActivationKind::softplus, 1.0, 0.0);
  CHECK(sp.hessian(Vector::Zero(1))(0, 0) == doctest::Approx(0.25).epsilon(1e-12));

  const IcnnParams re = one_layer(ActivationKind::relu, 2.0, 1.0);
  CHECK_THROWS_AS((void)re.hessian(Vector::Constant(1, 3.0)), std::invalid_argument);

  Rng rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    const IcnnParams p = init_icnn(3, {10, 6}, ActivationKind::softplus,
                                   InitScheme::xavier_clamp(), 100 + trial);
    Vector y(3);
    for (int i = 0; i < 3; ++i) y[i] = g(rng);
    const Matrix H = p.hessian(y);
    CHECK((H - H.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
    const Matrix fd =
        test::fd_jacobian([&](const Vector& v) { return p.gradient(v); }, y, 1e-4);
    CHECK(test::rel_err(H, fd) < 1e-4);
  }
}

TEST_CASE("parameter vjp of the gradient: zero, finite differences, linearity") {
  const IcnnParams p =
      init_icnn(2, {6, 5}, ActivationKind::softplus, InitScheme::xavier_clamp(), 21);
  Vector y(2), v(2);
  y << 0.3, -0.7;
  v << 1.1, -0.4;

  const IcnnLayerGrads zero = p.grad_param_vjp(y, Vector::Zero(2));
  Vector zf(flat_size(zero));
  flatten_into(zero, zf);
  CHECK(zf.norm() == 0.0);

  // phi(theta) = v . grad(y); differentiate every parameter by central differences
  const IcnnLayerGrads got = p.grad_param_vjp(y, v);
  Vector gf(flat_size(got));
  flatten_into(got, gf);

  Vector theta(flat_size(got));
  flatten_into(p.layers, theta);
  Vector fd(theta.size());
  const double h = 1e-6;
  for (long i = 0; i < theta.size(); ++i) {
    IcnnParams pp = p, pm = p;
    Vector tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    unflatten_from(tp, pp.layers);
    unflatten_from(tm, pm.layers);
    fd[i] = (v.dot(pp.gradient(y)) - v.dot(pm.gradient(y))) / (2.0 * h);
  }
  CHECK(test::rel_err(gf, fd) < 1e-5);

  const IcnnLayerGrads twice = p.grad_param_vjp(y, Vector(2.0 * v));
  Vector tf(flat_size(twice));
  flatten_into(twice, tf);
  CHECK(test::rel_err(tf, Vector(2.0 * gf)) < 1e-12);
}

TEST_CASE("project_nonneg clamps gates only") {
  IcnnParams p = init_icnn(2, {4}, ActivationKind::softplus, InitScheme::xavier_clamp(), 5);
  p.layers[1].w_gate(0, 0) = -0.3;
  p.layers[1].w_gate(0, 1) = 0.7;
  p.layers[0].w_input(0, 0) = -0.3;
  project_nonneg(p);
  CHECK(p.layers[1].w_gate(0, 0) == 0.0);
  CHECK(p.layers[1].w_gate(0, 1) == doctest::Approx(0.7));
  CHECK(p.layers[0].w_input(0, 0) == doctest::Approx(-0.3));
}

TEST_CASE("init schemes") {
  const IcnnParams u =
      init_icnn(2, {8, 8}, ActivationKind::softplus, InitScheme::uniform(1.0, 1.1), 9);
  for (size_t i = 1; i < u.layers.size(); ++i) {
    CHECK(u.layers[i].w_gate.minCoeff() >= 1.0);
    CHECK(u.layers[i].w_gate.maxCoeff() <= 1.1);
  }

  const IcnnParams a =
      init_icnn(3, {8}, ActivationKind::relu, InitScheme::xavier_clamp(), 42);
  const IcnnParams b =
      init_icnn(3, {8}, ActivationKind::relu, InitScheme::xavier_clamp(), 42);
  Vector fa(a.param_count()), fb(b.param_count());
  flatten_into(a.layers, fa);
  flatten_into(b.layers, fb);
  CHECK((fa - fb).lpNorm<Eigen::Infinity>() == 0.0);  // bitwise identical
  for (size_t i = 1; i < a.layers.size(); ++i) CHECK(a.layers[i].w_gate.minCoeff() >= 0.0);

  CHECK_THROWS_AS(init_icnn(2, {}, ActivationKind::relu, InitScheme::xavier_clamp(), 0),
                  std::invalid_argument);
}

TEST_CASE("convexity probe over random segments") {
  Rng rng(77);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int net = 0; net < 4; ++net) {
    const ActivationKind act = net % 2 == 0 ? ActivationKind::softplus : ActivationKind::relu;
    const IcnnParams p = init_icnn(3, {7, 5}, act, InitScheme::xavier_clamp(), 200 + net);
    for (int k = 0; k < 25; ++k) {
      Vector y1(3), y2(3);
      for (int i = 0; i < 3; ++i) {
        y1[i] = g(rng);
        y2[i] = g(rng);
      }
      const double t = u01(rng);
      const Vector ym = t * y1 + (1.0 - t) * y2;
      CHECK(p.value(ym) <= t * p.value(y1) + (1.0 - t) * p.value(y2) + 1e-9);
    }
  }
}

TEST_CASE("monotone gate property: positive bumps never decrease the output") {
  Rng rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  const IcnnParams p =
      init_icnn(2, {6, 6, 6}, ActivationKind::softplus, InitScheme::xavier_clamp(), 17);
  for (int k = 0; k < 20; ++k) {
    Vector y(2);
    y << g(rng), g(rng);
    const double base = reference_forward(p, y);
    for (int at = 0; at < p.depth() - 1; ++at)
      CHECK(reference_forward_bumped(p, y, at, 0.25) >= base - 1e-12);
  }
}

TEST_CASE("batched kernels agree with per-sample calls") {
  const IcnnParams p =
      init_icnn(3, {9, 6}, ActivationKind::softplus, InitScheme::xavier_clamp(), 55);
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 17;
  Matrix Y(3, n), V(3, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < 3; ++i) {
      Y(i, j) = g(rng);
      V(i, j) = g(rng);
    }

  IcnnWork w;
  const RowVector vals = icnn_value_batch(p, Y, w);
  const Matrix grads = icnn_gradient_batch(p, Y, w);
  std::vector<Matrix> H;
  icnn_hessian_batch(p, Y, w, H);
  IcnnLayerGrads accum = zero_grads_like(p);
  icnn_grad_param_vjp_batch(p, Y, V, w, &accum, 1.0, nullptr);

  IcnnLayerGrads expect = zero_grads_like(p);
  for (int j = 0; j < n; ++j) {
    CHECK(vals(j) == doctest::Approx(p.value(Y.col(j))).epsilon(1e-12));
    CHECK(test::rel_err(Vector(grads.col(j)), p.gradient(Y.col(j))) < 1e-12);
    CHECK(test::rel_err(H[size_t(j)], p.hessian(Y.col(j))) < 1e-12);
    const IcnnLayerGrads gj = p.grad_param_vjp(Y.col(j), V.col(j));
    for (size_t l = 0; l < expect.size(); ++l) {
      expect[l].w_gate += gj[l].w_gate;
      expect[l].w_input += gj[l].w_input;
      expect[l].bias += gj[l].bias;
    }
  }
  Vector fa(flat_size(accum)), fe(flat_size(expect));
  flatten_into(accum, fa);
  flatten_into(expect, fe);
  CHECK(test::rel_err(fa, fe) < 1e-12);
}

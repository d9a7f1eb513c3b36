#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bilip/icnn.hpp"
#include "bilip/picnn.hpp"
#include "test_util.hpp"

#include <cmath>
#include <random>

using namespace bilip;

namespace {

// Literal transcription of the gated recursion, independent of the kernels.
double reference_forward(const PicnnParams& p, const Vector& x, const Vector& y) {
  auto soft = [](double v) { return std::log1p(std::exp(v)); };
  std::vector<Vector> u;
  u.push_back(x);
  for (const PicnnULayer& ul : p.u_path) {
    Vector a = ul.w * u.back() + ul.b;
    for (long i = 0; i < a.size(); ++i) a[i] = soft(a[i]);
    u.push_back(a);
  }
  Vector z;
  for (int i = 0; i < p.depth(); ++i) {
    const PicnnLayer& l = p.layers[i];
    Vector n = l.w_input_u * u[size_t(i)] + l.b_input;
    Vector a = l.w_input * y.cwiseProduct(n) + l.w_u * u[size_t(i)] + l.bias;
    if (l.has_gate()) {
      Vector m = (l.w_gate_u * u[size_t(i)] + l.b_gate).cwiseMax(0.0);
      a += l.w_gate * z.cwiseProduct(m);
    }
    if (p.layer_activated(i))
      for (long r = 0; r < a.size(); ++r) a[r] = soft(a[r]);
    z = a;
  }
  return z[0];
}

PicnnParams small_net(std::uint64_t seed) {
  return init_picnn(2, 3, {5, 4}, {4, 4}, ActivationKind::softplus, seed);
}

}  // namespace

TEST_CASE("constant net returns the head bias") {
  PicnnParams p = small_net(1);
  for (PicnnLayer& l : p.layers) {
    l.w_gate.setZero();
    l.w_gate_u.setZero();
    l.w_input.setZero();
    l.w_input_u.setZero();
    l.w_u.setZero();
    l.bias.setZero();
  }
  p.layers.back().bias[0] = 2.5;
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    Vector x(3), y(2);
    for (int i = 0; i < 3; ++i) x[i] = g(rng);
    for (int i = 0; i < 2; ++i) y[i] = g(rng);
    CHECK(p.value(x, y) == doctest::Approx(2.5));
  }
}

TEST_CASE("zero u-path influence reduces to an ICNN in y") {
  PicnnParams p = small_net(3);
  for (PicnnLayer& l : p.layers) {
    l.w_gate_u.setZero();
    l.w_input_u.setZero();
    l.w_u.setZero();
    if (l.b_gate.size() > 0) l.b_gate.setOnes();
    l.b_input.setOnes();
  }
  // equivalent plain ICNN with the same weights
  IcnnParams q;
  q.activation = p.activation;
  q.input_dim = p.convex_dim;
  q.affine_head = p.affine_head;
  for (const PicnnLayer& l : p.layers) {
    IcnnLayer il;
    il.w_gate = l.w_gate;
    il.w_input = l.w_input;
    il.bias = l.bias;
    q.layers.push_back(il);
  }

  Rng rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    Vector x(3), y(2);
    for (int i = 0; i < 3; ++i) x[i] = g(rng);
    for (int i = 0; i < 2; ++i) y[i] = g(rng);
    CHECK(p.value(x, y) == doctest::Approx(q.value(y)).epsilon(1e-12));
    CHECK(test::rel_err(p.grad_y(x, y), q.gradient(y)) < 1e-12);
  }
}

TEST_CASE("forward matches the independent recursion") {
  const PicnnParams p = small_net(7);
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 8; ++k) {
    Vector x(3), y(2);
    for (int i = 0; i < 3; ++i) x[i] = g(rng);
    for (int i = 0; i < 2; ++i) y[i] = g(rng);
    CHECK(p.value(x, y) == doctest::Approx(reference_forward(p, x, y)).epsilon(1e-12));
  }
}

TEST_CASE("derivatives match finite differences") {
  const PicnnParams p = small_net(11);
  Rng rng(6);
  std::normal_distribution<double> g(0.0, 0.7);
  for (int k = 0; k < 3; ++k) {
    Vector x(3), y(2), v(2);
    for (int i = 0; i < 3; ++i) x[i] = g(rng);
    for (int i = 0; i < 2; ++i) {
      y[i] = g(rng);
      v[i] = g(rng);
    }

    const Vector fd_grad =
        test::fd_gradient([&](const Vector& yy) { return p.value(x, yy); }, y, 1e-5);
    CHECK(test::rel_err(p.grad_y(x, y), fd_grad) < 1e-4);

    const Matrix fd_hess =
        test::fd_jacobian([&](const Vector& yy) { return p.grad_y(x, yy); }, y, 1e-5);
    CHECK(test::rel_err(p.hessian_y(x, y), fd_hess) < 1e-4);

    // v . grad_y as a function of the flat parameter vector
    const Vector theta = picnn_flatten(p);
    const PicnnGrads got = p.grad_y_param_vjp(x, y, v);
    const Vector gf = picnn_flatten_grads(got);
    Vector fd(theta.size());
    const double h = 1e-6;
    for (long i = 0; i < theta.size(); ++i) {
      PicnnParams pp = p, pm = p;
      Vector tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      picnn_unflatten(tp, pp);
      picnn_unflatten(tm, pm);
      fd[i] = (v.dot(pp.grad_y(x, y)) - v.dot(pm.grad_y(x, y))) / (2.0 * h);
    }
    CHECK(test::rel_err(gf, fd) < 1e-4);

    const Vector fd_x =
        test::fd_gradient([&](const Vector& xx) { return v.dot(p.grad_y(xx, y)); }, x, 1e-6);
    CHECK(test::rel_err(p.grad_y_x_vjp(x, y, v), fd_x) < 1e-4);
  }
}

TEST_CASE("vjp ops vanish at v = 0") {
  const PicnnParams p = small_net(13);
  Vector x = Vector::Constant(3, 0.4), y = Vector::Constant(2, -0.2);
  const Vector z = Vector::Zero(2);
  CHECK(picnn_flatten_grads(p.grad_y_param_vjp(x, y, z)).norm() == 0.0);
  CHECK(p.grad_y_x_vjp(x, y, z).norm() == 0.0);
}

TEST_CASE("hessian is symmetric psd and gates stay nonnegative") {
  Rng rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 4; ++t) {
    PicnnParams p = small_net(40 + t);
    project_nonneg(p);
    Vector x(3), y(2);
    for (int i = 0; i < 3; ++i) x[i] = g(rng);
    for (int i = 0; i < 2; ++i) y[i] = g(rng);
    const Matrix H = p.hessian_y(x, y);
    CHECK((H - H.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
    for (size_t i = 1; i < p.layers.size(); ++i)
      CHECK(p.layers[i].w_gate.minCoeff() >= 0.0);
  }
}

TEST_CASE("convex in y for fixed x") {
  Rng rng(10);
  std::normal_distribution<double> g(0.0, 1.5);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const PicnnParams p = small_net(77);
  for (int k = 0; k < 50; ++k) {
    Vector x(3), y1(2), y2(2);
    for (int i = 0; i < 3; ++i) x[i] = g(rng);
    for (int i = 0; i < 2; ++i) {
      y1[i] = g(rng);
      y2[i] = g(rng);
    }
    const double t = u01(rng);
    const Vector ym = t * y1 + (1.0 - t) * y2;
    CHECK(p.value(x, ym) <= t * p.value(x, y1) + (1.0 - t) * p.value(x, y2) + 1e-9);
  }
}

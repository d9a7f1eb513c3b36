#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bilip/serialize.hpp"
#include "test_util.hpp"

#include <json.hpp>

#include <sstream>

using namespace bilip;

TEST_CASE("doubles are written with 17 significant digits and round-trip") {
  CHECK(format_double(1.0 / 3.0) == "0.33333333333333331");
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(1e-300)) == 1e-300);
  Rng rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const double v = g(rng) * std::pow(10.0, k % 17 - 8);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("icnn parameter documents round-trip bit-exactly") {
  const IcnnParams p =
      init_icnn(3, {6, 4}, ActivationKind::softplus, InitScheme::xavier_clamp(), 17);
  const std::string doc = icnn_to_json(p);
  const IcnnParams q = icnn_from_json(doc);
  CHECK(q.input_dim == p.input_dim);
  CHECK(q.activation == p.activation);
  CHECK(q.affine_head == p.affine_head);
  REQUIRE(q.layers.size() == p.layers.size());
  Vector fp(p.param_count()), fq(q.param_count());
  flatten_into(p.layers, fp);
  flatten_into(q.layers, fq);
  CHECK((fp - fq).lpNorm<Eigen::Infinity>() == 0.0);

  // the document carries the schema fields
  const auto j = nlohmann::json::parse(doc);
  CHECK(j.at("version").get<int>() == 1);
  CHECK(j.at("activation").get<std::string>() == "softplus");
  CHECK(j.at("dims").size() == 4);
  CHECK(!j.at("layers")[0].contains("w_gate"));
  CHECK(j.at("layers")[1].contains("w_gate"));
}

TEST_CASE("model bundles round-trip, including weighted configs") {
  Blnn m;
  m.core = init_icnn(2, {5}, ActivationKind::softplus, InitScheme::uniform(1.0, 1.1), 23);
  m.config.alpha = 1.25;
  m.config.beta = 4.75;
  SolverConfig solver = SolverConfig::for_kind(SolverKind::gd, m.config.mu(), 0.0);
  const std::string doc = blnn_to_json(m, solver);
  const BlnnBundle b = blnn_from_json(doc);
  CHECK(b.model.config.alpha == m.config.alpha);
  CHECK(b.model.config.beta == m.config.beta);
  CHECK(b.solver_defaults.kind == SolverKind::gd);
  CHECK(b.solver_defaults.step.kind == StepPolicy::Kind::decreasing);
  Vector fp(m.core.param_count()), fq(b.model.core.param_count());
  flatten_into(m.core.layers, fp);
  flatten_into(b.model.core.layers, fq);
  CHECK((fp - fq).lpNorm<Eigen::Infinity>() == 0.0);

  Blnn w = m;
  w.config.alpha = 0.0;
  w.config.a_weights = (Vector(2) << 0.5, 2.0).finished();
  w.config.b_weights = (Vector(2) << 1.0, 3.0).finished();
  const BlnnBundle wb = blnn_from_json(blnn_to_json(w, solver));
  CHECK(wb.model.config.weighted());
  CHECK((wb.model.config.a_weights - w.config.a_weights).norm() == 0.0);
  CHECK((wb.model.config.b_weights - w.config.b_weights).norm() == 0.0);
}

TEST_CASE("estimate records carry the stated fields") {
  BiLipEstimate est;
  est.lip_hat = 3.25;
  est.invlip_hat = 0.5;
  est.n_pairs = 1234;
  est.seed = 42;
  est.domain_lo = Vector::Constant(2, -1.0);
  est.domain_hi = Vector::Constant(2, 1.0);
  const auto j = nlohmann::json::parse(estimate_to_json(est));
  CHECK(j.at("lip_hat").get<double>() == 3.25);
  CHECK(j.at("invlip_hat").get<double>() == 0.5);
  CHECK(j.at("n_pairs").get<long>() == 1234);
  CHECK(j.at("seed").get<long>() == 42);
  CHECK(j.at("domain").at("lo").size() == 2);
}

TEST_CASE("csv rows are rfc-4180") {
  std::ostringstream out;
  CsvWriter csv(out);
  csv.header({"iter", "residual", "note,with comma"});
  csv.row({1.0, 0.5});
  const std::string text = out.str();
  CHECK(text == "iter,residual,\"note,with comma\"\r\n1,0.5\r\n");
}

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"

#include "steel/primal_dual.hpp"
#include "steel/sim.hpp"
#include "steel/steel.hpp"

using namespace steel;

namespace {

Vector randn(Index d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = g(rng);
  return v;
}

struct Instance {
  TransitionDataset data;
  Points init;
  ParamQ q;
  ParamPolicy pi;
  PreparedBatch batch;
  SteelConfig cfg;
};

// 50 transitions of the tabular chain with a quadratic Q class.
Instance make_instance(double gamma, double clip, std::uint64_t seed) {
  Instance in;
  MdpEnvSpec spec = MdpEnvSpec::standard_tabular(11, gamma > 0 ? gamma : 0.5);
  in.data = generate_mdp(spec, 5, 10, seed);
  in.init = sample_mdp_initial_states(spec, 16, seed + 1);
  in.q = ParamQ(FeatureMap::polynomial(2, 2), 1, 1, clip);
  in.pi = ParamPolicy(FeatureMap::polynomial(1, 2), spec.action_lo, spec.action_hi);
  in.cfg.gamma = gamma;
  in.cfg.zeta = 0.01;
  in.cfg.seed = seed;
  in.cfg.init_states = in.init;
  in.cfg.q_class = in.q;
  in.cfg.policy_class = in.pi;
  in.batch = prepare_batch(in.data, in.cfg);
  return in;
}

std::vector<ConstraintTerm> without_forms(std::vector<ConstraintTerm> terms) {
  for (auto& t : terms) t.quad_form.reset();
  return terms;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-12, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("cached quadratic forms match the direct constraint evaluation") {
  std::mt19937_64 rng(1);
  for (double gamma : {0.0, 0.5}) {
    for (int trial = 0; trial < 6; ++trial) {
      Instance in = make_instance(gamma, 1e6, 10 + trial);
      const Vector theta = randn(in.q.num_params(), rng);
      const Vector psi = randn(in.pi.num_params(), rng, 0.5);

      // Place the clip bound so that a few rows (but under a quarter) clip.
      ParamQ probe = in.q;
      probe.set_theta(theta);
      std::vector<double> mags;
      for (Index i = 0; i < in.data.size(); ++i)
        mags.push_back(std::abs(probe.raw(row_vec(in.data.states, i), row_vec(in.data.actions, i))));
      std::sort(mags.begin(), mags.end());
      const double clip = trial % 2 == 0 ? 1e6 : mags[mags.size() * 9 / 10];
      in.q = ParamQ(FeatureMap::polynomial(2, 2), 1, 1, clip);

      const auto terms = steel_constraints(in.batch, 0.3, 0.5, 1.0, 1.0, 1.0);
      const LagrangianModel fast(in.data, in.init, gamma, in.q, in.pi, terms);
      const LagrangianModel slow(in.data, in.init, gamma, in.q, in.pi, without_forms(terms));

      auto cache = fast.policy_cache(psi);
      fast.attach_quadratics(cache);
      Vector rho(2);
      rho << 3.0, 0.7;
      const LagrangianParts a = fast.evaluate(theta, cache, rho, true, false);
      const LagrangianParts b = slow.evaluate(theta, slow.policy_cache(psi), rho, true, false);
      CHECK(a.value == doctest::Approx(b.value).epsilon(1e-10));
      CHECK(rel_err(a.constraint_values, b.constraint_values) <= 1e-9);
      CHECK(rel_err(a.grad_theta, b.grad_theta) <= 1e-9);

      // The psi gradient path agrees too.
      const LagrangianParts c = fast.evaluate(theta, cache, rho, true, true);
      const LagrangianParts d = slow.evaluate(theta, slow.policy_cache(psi), rho, true, true);
      CHECK(rel_err(c.grad_psi, d.grad_psi) <= 1e-9);
    }
  }
}

TEST_CASE("Lagrangian gradients match central differences") {
  std::mt19937_64 rng(2);
  for (double gamma : {0.0, 0.5}) {
    Instance in = make_instance(gamma, 1e6, 3);
    CHECK(in.data.size() == 50);
    in.cfg.eps1 = 0.2;
    in.cfg.eps2 = 0.4;
    for (int point = 0; point < 10; ++point) {
      const Vector theta = randn(in.q.num_params(), rng, 0.5);
      const Vector psi = randn(in.pi.num_params(), rng, 0.5);
      const DualVars rho{std::abs(randn(1, rng)(0)), std::abs(randn(1, rng)(0))};
      const LagrangianParts parts = lagrangian(in.batch, theta, psi, rho, in.cfg);

      const double h = 1e-6;
      auto fd = [&](auto&& f, const Vector& x) {
        Vector g(x.size());
        for (Index i = 0; i < x.size(); ++i) {
          Vector up = x, dn = x;
          up(i) += h;
          dn(i) -= h;
          g(i) = (f(up) - f(dn)) / (2.0 * h);
        }
        return g;
      };
      const Vector g_theta = fd(
          [&](const Vector& t) { return lagrangian(in.batch, t, psi, rho, in.cfg).value; }, theta);
      const Vector g_psi = fd(
          [&](const Vector& p) { return lagrangian(in.batch, theta, p, rho, in.cfg).value; }, psi);
      Vector r(2);
      r << rho.rho1, rho.rho2;
      const Vector g_rho = fd(
          [&](const Vector& x) {
            return lagrangian(in.batch, theta, psi, DualVars{x(0), x(1)}, in.cfg).value;
          },
          r);
      CHECK(rel_err(parts.grad_theta, g_theta) <= 1e-5);
      CHECK(rel_err(parts.grad_psi, g_psi) <= 1e-5);
      CHECK(rel_err(parts.grad_rho, g_rho) <= 1e-5);
    }
  }
}

TEST_CASE("Lagrangian closed forms") {
  Instance in = make_instance(0.0, 1e6, 4);
  in.cfg.eps1 = 0.2;
  in.cfg.eps2 = 0.4;
  std::mt19937_64 rng(5);
  const Vector theta = randn(in.q.num_params(), rng);
  const Vector psi = randn(in.pi.num_params(), rng);
  ParamQ q = in.q;
  q.set_theta(theta);
  ParamPolicy pi = in.pi;
  pi.set_params(psi);

  const LagrangianParts zero = lagrangian(in.batch, theta, psi, DualVars{0.0, 0.0}, in.cfg);
  CHECK(zero.value == doctest::Approx(policy_value_estimate(q, pi, in.init, 0.0)).epsilon(1e-13));

  const Vector y = residual_vector(in.batch.data, pi, q, 0.0).values;
  const double n = static_cast<double>(y.size());
  const double c1 = y.dot(in.batch.kernel->k() * y) / (n * n);
  const LagrangianParts p = lagrangian(in.batch, theta, psi, DualVars{2.0, 0.0}, in.cfg);
  CHECK(p.grad_rho(0) == doctest::Approx(c1 - 0.04).epsilon(1e-10));
  CHECK(p.value == doctest::Approx(zero.value + 2.0 * (c1 - 0.04)).epsilon(1e-10));
  CHECK_THROWS_AS(lagrangian(in.batch, theta, psi, DualVars{-1.0, 0.0}, in.cfg), Error);
}

TEST_CASE("optimizer keeps multipliers in range and is deterministic") {
  Instance in = make_instance(0.5, 2.0, 6);
  const auto terms = steel_constraints(in.batch, 0.05, 0.1, 1.0, 1.0, 1.0);
  const LagrangianModel model(in.data, in.init, 0.5, in.q, in.pi, terms);
  PrimalDualSettings s;
  s.gamma = 0.5;
  s.max_outer_iters = 60;
  s.rho_max = 5.0;
  const Vector t0 = Vector::Zero(in.q.num_params()), p0 = Vector::Zero(in.pi.num_params());
  const auto a = primal_dual_optimize(model, t0, p0, Vector::Zero(2), s);
  const auto b = primal_dual_optimize(model, t0, p0, Vector::Zero(2), s);
  CHECK(a.trace.size() <= 60u);
  for (const auto& e : a.trace)
    for (double r : e.rho) {
      CHECK(r >= 0.0);
      CHECK(r <= 5.0);
    }
  CHECK(a.theta == b.theta);
  CHECK(a.psi == b.psi);
  CHECK(a.rho == b.rho);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) CHECK(a.trace[k].lagrangian == b.trace[k].lagrangian);
}

TEST_CASE("infinite radii switch pessimism off") {
  Instance in = make_instance(0.0, 2.0, 7);
  const auto terms = steel_constraints(in.batch, 1.0, 1.0, 1.0, 1.0, 1.0);
  PrimalDualSettings s;
  s.max_outer_iters = 30;
  const Vector t0 = Vector::Zero(in.q.num_params()), p0 = Vector::Zero(in.pi.num_params());

  // From the default start the multipliers never leave zero.
  auto open = terms;
  for (auto& t : open) t.target = std::numeric_limits<double>::infinity();
  const LagrangianModel model(in.data, in.init, 0.0, in.q, in.pi, open);
  const auto out = primal_dual_optimize(model, t0, p0, Vector::Zero(2), s);
  for (const auto& e : out.trace)
    for (double r : e.rho) CHECK(r == 0.0);
  const LagrangianParts at = model.evaluate(out.theta, out.psi, out.rho, false, false);
  CHECK(out.lagrangian == doctest::Approx(at.objective).epsilon(1e-12));

  // From a positive start the first ascent step is negative and projects to zero.
  auto loose = terms;
  for (auto& t : loose) t.target = 1e12;
  const LagrangianModel model2(in.data, in.init, 0.0, in.q, in.pi, loose);
  Vector rho0(2);
  rho0 << 0.5, 0.5;
  const auto out2 = primal_dual_optimize(model2, t0, p0, rho0, s);
  for (std::size_t k = 1; k < out2.trace.size(); ++k)
    for (double r : out2.trace[k].rho) CHECK(r == 0.0);
  CHECK(out2.rho.isZero());
}

TEST_CASE("non-finite objective is reported with its iteration") {
  Instance in = make_instance(0.0, 2.0, 8);
  ConstraintTerm bad;
  bad.name = "nan";
  bad.evaluate = [](const Vector& y, Vector* g) {
    if (g) *g = Vector::Zero(y.size());
    return std::nan("");
  };
  bad.target = 0.0;
  bad.dual_lr = 1.0;
  const LagrangianModel model(in.data, in.init, 0.0, in.q, in.pi, {bad});
  Vector rho(1);
  rho << 1.0;
  CHECK_THROWS_WITH_AS(primal_dual_optimize(model, Vector::Zero(in.q.num_params()),
                                            Vector::Zero(in.pi.num_params()), rho, {}),
                       doctest::Contains("iteration 0"), Error);
}

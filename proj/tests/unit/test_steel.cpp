#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"

#include "steel/bandit.hpp"
#include "steel/sim.hpp"
#include "steel/steel.hpp"

using namespace steel;

namespace {

SteelConfig bandit_config(const BanditEnvSpec& spec, std::uint64_t seed) {
  const auto [lo, hi] = spec.policy_box();
  SteelConfig c;
  c.zeta = 0.01;
  c.seed = seed;
  c.init_states = sample_bandit_states(spec, 128, seed + 77);
  c.q_class = ParamQ(FeatureMap::polynomial(3, 2), 2, 1, 2.0);
  c.policy_class = ParamPolicy(FeatureMap::polynomial(2, 1), lo, hi);
  c.max_outer_iters = 60;
  return c;
}

GramMatrix data_gram(const TransitionDataset& d) {
  const Points sa = d.state_actions();
  return gram(KernelSpec{KernelFamily::gaussian, median_heuristic(sa)}, sa);
}

}  // namespace

TEST_CASE("default radius schedule") {
  const auto [e1, e2] = default_radii(1000);
  const double base = std::log(1000.0) / std::sqrt(1000.0);
  CHECK(e1 == doctest::Approx(base));
  CHECK(e2 == doctest::Approx(std::cbrt(base)));
  const auto [k1, k2] = default_radii(1000, 2.0, 0.5);
  CHECK(k1 == doctest::Approx(2.0 * base));
  CHECK(k2 == doctest::Approx(0.5 * std::cbrt(base)));
}

TEST_CASE("policy_value_estimate") {
  Points init(3, 1);
  init << 0.1, 0.2, 0.3;
  const QFunction q = [](const Vector&, const Vector&) { return 2.5; };
  const PolicyFunction pi = [](const Vector& s) { return s; };
  CHECK(policy_value_estimate(q, pi, init, 0.6) == doctest::Approx(0.4 * 2.5));
  CHECK_THROWS_AS(policy_value_estimate(q, pi, Points(0, 1), 0.5), Error);

  // Tabular oracle: Q^pi over the exact initial distribution against rollouts.
  const MdpEnvSpec spec = MdpEnvSpec::standard_tabular(11, 0.5);
  ParamPolicy p(FeatureMap::polynomial(1, 1), spec.action_lo, spec.action_hi);
  Vector psi(2);
  psi << 0.2, -1.0;
  p.set_params(psi);
  const TabularQ oracle = tabular_q_oracle(spec, [&](const Vector& s) { return p.act(s); });
  const QFunction qpi = [&](const Vector& s, const Vector& a) { return oracle.q(s, a); };
  const double est = policy_value_estimate(qpi, as_policy_function(p), spec.grid(), spec.gamma);
  const ValueEstimate mc = mc_policy_value(spec, p, default_horizon(spec.gamma), 20000, 3);
  CHECK(std::abs(est - mc.value) <= 3.0 * mc.std_error);
  // q() applies one more backup than the stored values: agreement up to the sweep tolerance.
  CHECK(std::abs(est - oracle.policy_value()) <= 1e-8);
}

TEST_CASE("uncertainty-set statistics") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  BanditDataset b = generate_bandit(spec, 60, 1);
  const QFunction zero = [](const Vector&, const Vector&) { return 0.0; };
  const PolicyFunction pi = [](const Vector&) { return Vector::Zero(1); };

  BanditDataset z = b;
  z.rewards.setZero();
  const TransitionDataset tz = z.as_transitions();
  const GramMatrix g = data_gram(tz);
  CHECK(omega1_value(tz, g, pi, zero, 0.0, 1.0) == 0.0);
  CHECK(omega2_value(tz, g, pi, zero, 0.0, 0.01) == 0.0);

  const TransitionDataset t1 = b.as_transitions();
  BanditDataset b2 = b;
  b2.rewards *= 2.0;
  const TransitionDataset t2 = b2.as_transitions();
  CHECK(omega1_value(t2, g, pi, zero, 0.0, 1.0) ==
        doctest::Approx(2.0 * omega1_value(t1, g, pi, zero, 0.0, 1.0)).epsilon(1e-13));
  CHECK(omega2_value(t2, g, pi, zero, 0.0, 0.01) ==
        doctest::Approx(2.0 * omega2_value(t1, g, pi, zero, 0.0, 0.01)).epsilon(1e-12));
}

TEST_CASE("the true Q lies in both uncertainty sets at the default radii") {
  const MdpEnvSpec spec = MdpEnvSpec::standard_tabular(11, 0.5);
  ParamPolicy p(FeatureMap::polynomial(1, 1), spec.action_lo, spec.action_hi);
  Vector psi(2);
  psi << 0.0, -0.7;
  p.set_params(psi);
  const TabularQ oracle = tabular_q_oracle(spec, [&](const Vector& s) { return p.act(s); });
  const QFunction qpi = [&](const Vector& s, const Vector& a) { return oracle.q(s, a); };
  const TransitionDataset d = generate_mdp(spec, 160, 20, 4);
  REQUIRE(d.size() == 3200);
  const GramMatrix g = data_gram(d);
  const auto [e1, e2] = default_radii(d.size());
  CHECK(omega1_value(d, g, as_policy_function(p), qpi, spec.gamma, 1.0) < e1);
  CHECK(omega2_value(d, g, as_policy_function(p), qpi, spec.gamma, 1e-3) < e2);
}

TEST_CASE("steel_optimize on a degenerate dataset") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  BanditDataset b = generate_bandit(spec, 40, 2);
  b.rewards.setZero();
  SteelConfig c = bandit_config(spec, 2);
  c.q_class = ParamQ(FeatureMap::polynomial(3, 2), 2, 1, 1e-12);  // only Q = 0 (to 1e-12)
  const SteelResult r = steel_optimize(b.as_transitions(), c);
  CHECK(std::abs(r.pessimistic_value) <= 1e-12);
  CHECK(r.duals.rho1 == 0.0);
  CHECK(r.duals.rho2 == 0.0);
  for (const auto& e : r.trace)
    for (double rho : e.rho) CHECK(rho == 0.0);
}

TEST_CASE("steel_optimize result invariants") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  const BanditDataset b = generate_bandit(spec, 150, 3);
  SteelConfig c = bandit_config(spec, 3);
  c.rho_max = 50.0;
  const PreparedBatch batch = prepare_batch(b.as_transitions(), c);
  const SteelResult r = steel_optimize(batch, c);
  CHECK(r.trace.size() <= static_cast<std::size_t>(c.max_outer_iters));
  CHECK(r.duals.rho1 >= 0.0);
  CHECK(r.duals.rho1 <= 50.0);
  CHECK(r.duals.rho2 <= 50.0);
  const LagrangianParts final_parts =
      lagrangian(batch, r.q.theta(), r.policy.params(), r.duals, c);
  CHECK(r.pessimistic_value == doctest::Approx(final_parts.value).epsilon(1e-12));
  const auto [e1, e2] = default_radii(150);
  CHECK(r.eps1 == e1);
  CHECK(r.eps2 == e2);

  // Bit-identical reruns.
  const SteelResult again = steel_optimize(b.as_transitions(), c);
  CHECK(again.to_json().dump() == r.to_json().dump());
}

TEST_CASE("Nystrom cap subsamples deterministically") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  const BanditDataset b = generate_bandit(spec, 300, 4);
  SteelConfig c = bandit_config(spec, 4);
  c.nystrom_cap = 120;
  const PreparedBatch p1 = prepare_batch(b.as_transitions(), c);
  const PreparedBatch p2 = prepare_batch(b.as_transitions(), c);
  CHECK(p1.data.size() == 120);
  CHECK(p1.data.rewards == p2.data.rewards);
  c.seed = 5;
  const PreparedBatch p3 = prepare_batch(b.as_transitions(), c);
  CHECK_FALSE(p3.data.rewards == p1.data.rewards);
  CHECK(steel_optimize(b.as_transitions(), c).n_used == 120);
}

TEST_CASE("config validation") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  SteelConfig c = bandit_config(spec, 0);
  CHECK_NOTHROW(c.validate());
  SteelConfig bad = c;
  bad.gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.zeta = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.eps1 = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.init_states = Points(0, 2);
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("two-phase C replaces the weight-ball radius") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  const BanditDataset b = generate_bandit(spec, 120, 6);
  SteelConfig c = bandit_config(spec, 6);
  c.two_phase_c = true;
  const SteelResult r = steel_optimize(b.as_transitions(), c);
  CHECK(r.w_radius > 0.0);
  CHECK(r.w_radius != 1.0);
  CHECK(r.w_radius <= 2.0);  // sqrt of a biased MMD with a bounded kernel
}

TEST_CASE("tighter weight-ball radius never lowers the pessimistic value") {
  // Two-parameter Q class and a fixed policy: the inner problem is convex.
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  const BanditDataset b = generate_bandit(spec, 200, 7);
  SteelConfig c = bandit_config(spec, 7);
  c.q_class = ParamQ(FeatureMap::random_fourier(3, 2, 1.0, 3), 2, 1, 50.0);
  c.lr_pi = 0.0;
  c.max_outer_iters = 300;
  c.eps2 = 10.0;
  double prev = -std::numeric_limits<double>::infinity();
  for (double e1 : {0.2, 0.1, 0.05}) {
    c.eps1 = e1;
    const double v = steel_optimize(b.as_transitions(), c).pessimistic_value;
    CHECK(v >= prev - 1e-6);
    prev = v;
  }
}

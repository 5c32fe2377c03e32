#include <cmath>

#include "doctest.h"

#include "steel/adaptive.hpp"
#include "steel/sim.hpp"

using namespace steel;

namespace {

AdaptiveConfig make_config(const BanditEnvSpec& spec, std::uint64_t seed) {
  const auto [lo, hi] = spec.policy_box();
  AdaptiveConfig c;
  c.steel.zeta = 0.01;
  c.steel.seed = seed;
  c.steel.init_states = sample_bandit_states(spec, 128, seed + 11);
  c.steel.q_class = ParamQ(FeatureMap::polynomial(3, 2), 2, 1, 2.0);
  c.steel.policy_class = ParamPolicy(FeatureMap::polynomial(2, 1), lo, hi);
  c.steel.max_outer_iters = 40;
  c.grid_points = 1024;
  return c;
}

}  // namespace

TEST_CASE("stage 0 is the optimizer with the first multiplier frozen") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  const BanditDataset b = generate_bandit(spec, 120, 1);
  AdaptiveConfig c = make_config(spec, 1);
  c.stage0_eps2 = 0.9;
  const SteelResult s0 = stage0(b.as_transitions(), c);

  SteelConfig direct = c.steel;
  direct.lr_rho1 = 0.0;
  direct.eps2 = 0.9;
  const SteelResult ref = steel_optimize(b.as_transitions(), direct);
  CHECK(s0.to_json().dump() == ref.to_json().dump());
  for (const auto& e : s0.trace) CHECK(e.rho[0] == 0.0);

  const PreparedBatch batch = prepare_batch(b.as_transitions(), c.steel);
  CHECK(stage0_radius(batch, c) == 0.9);
  c.stage0_eps2.reset();
  c.stage0_eps2_factor = 0.5;
  CHECK(stage0_radius(batch, c) ==
        doctest::Approx(0.5 * std::sqrt(batch.kernel->rkhs_sq(batch.data.rewards))));
  c.stage0_eps2_factor.reset();
  CHECK(stage0_radius(batch, c) == default_radii(120).second);
}

TEST_CASE("decomposition of a target matching the batch") {
  BanditEnvSpec spec = BanditEnvSpec::standard(SingularityMode::none);
  AdaptiveConfig c = make_config(spec, 2);
  // Behavior puts (nearly) all its mass on the policy at psi = 0.
  const ParamPolicy pi = c.steel.policy_class;
  const Vector a0 = pi.act(Vector::Zero(2));
  spec.behavior_weights = Matrix::Zero(1, 2);
  spec.behavior_offset = a0;
  spec.behavior_std = 1e-3;
  spec.behavior_std_slope = 0.0;
  const BanditDataset b = generate_bandit(spec, 300, 2);
  c.steel.init_states = sample_bandit_states(spec, 300, 13);
  const PreparedBatch batch = prepare_batch(b.as_transitions(), c.steel);
  const DecompositionEstimate d = estimate_decomposition(batch, pi, 0.0, c.steel.init_states, c);
  CHECK(d.lambda1_mass + d.lambda2_mass == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.lambda1_mass >= 0.8);
  CHECK(d.lambda1_sample.weights.sum() == doctest::Approx(1.0));
  CHECK((d.lambda1_sample.weights.array() >= 0.0).all());
}

TEST_CASE("decomposition of a target outside the batch support") {
  // Behavior actions near -2, policy actions inside [2, 3]: several KDE
  // bandwidths apart.
  BanditEnvSpec spec = BanditEnvSpec::standard(SingularityMode::disjoint_support);
  spec.action_lo = Vector::Constant(1, -3.0);
  spec.action_hi = Vector::Constant(1, 3.0);
  spec.target_lo = Vector::Constant(1, 2.0);
  spec.target_hi = Vector::Constant(1, 3.0);
  spec.behavior_weights = Matrix::Zero(1, 2);
  spec.behavior_offset = Vector::Constant(1, -2.0);
  spec.behavior_std = 0.3;
  const AdaptiveConfig c = make_config(spec, 3);
  const BanditDataset b = generate_bandit(spec, 300, 3);
  const PreparedBatch batch = prepare_batch(b.as_transitions(), c.steel);
  const DecompositionEstimate d =
      estimate_decomposition(batch, c.steel.policy_class, 0.0, c.steel.init_states, c);
  CHECK(d.lambda1_mass >= 0.0);
  CHECK(d.lambda2_mass <= 1.0);
  CHECK(d.lambda1_mass + d.lambda2_mass == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.lambda1_mass <= 0.2);
  CHECK(d.delta_hat > 0.0);
  CHECK(d.lambda2_sample.weights.sum() == doctest::Approx(1.0));
  // omega is the capped density ratio.
  for (Index i = 0; i < 20; ++i) {
    const Vector z = row_vec(d.batch_points, i);
    CHECK(d.omega(z) <= d.wmax);
    CHECK(d.omega(z) >= 0.0);
  }
}

TEST_CASE("epsilon0 floor and terms") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  const AdaptiveConfig c = make_config(spec, 4);
  BanditDataset b = generate_bandit(spec, 150, 4);
  const PreparedBatch batch = prepare_batch(b.as_transitions(), c.steel);
  const SteelResult s0 = stage0(batch, c);
  const DecompositionEstimate d = estimate_decomposition(batch, s0.policy, 0.0, c.steel.init_states, c);
  const Epsilon0 e = epsilon0(batch, s0.policy, s0.q, d, 0.0);
  CHECK(e.floor == doctest::Approx(1e-6 * batch.data.max_abs_reward()));
  CHECK(e.value == std::max(e.raw, e.floor));
  CHECK(e.raw == doctest::Approx(e.weighted_term + e.batch_term + e.rkhs_term));
  // The stage-0 pair lies in the adaptive set.
  CHECK(adaptive_constraint_value(batch, s0.policy, s0.q, d, 0.0) <= e.value + 1e-9);

  // Zero rewards with Q = 0: raw is 0 and the floor takes over.
  b.rewards.setZero();
  const PreparedBatch zb = prepare_batch(b.as_transitions(), c.steel);
  ParamQ zero = c.steel.q_class;
  zero.set_theta(Vector::Zero(zero.num_params()));
  const Epsilon0 ez = epsilon0(zb, s0.policy, zero, d, 0.0);
  CHECK(ez.raw == 0.0);
  CHECK(ez.value == ez.floor);
  CHECK(ez.value > 0.0);
}

TEST_CASE("shifting Q by one moves the linear part of epsilon0 by one") {
  const BanditEnvSpec spec = BanditEnvSpec::standard();
  AdaptiveConfig c = make_config(spec, 5);
  c.steel.q_class = ParamQ(FeatureMap::polynomial(3, 2), 2, 1, 100.0);
  const BanditDataset b = generate_bandit(spec, 150, 5);
  const PreparedBatch batch = prepare_batch(b.as_transitions(), c.steel);
  const SteelResult s0 = stage0(batch, c);
  const DecompositionEstimate d = estimate_decomposition(batch, s0.policy, 0.0, c.steel.init_states, c);
  // Stage 0 sits on the clip band; shift an unclipped Q instead.
  ParamQ base = c.steel.q_class;
  Vector theta = Vector::Zero(base.num_params());
  base.set_theta(theta);
  ParamQ shifted = base;
  theta(0) = 1.0;  // constant feature
  shifted.set_theta(theta);
  const Epsilon0 e = epsilon0(batch, s0.policy, base, d, 0.0);
  const Epsilon0 es = epsilon0(batch, s0.policy, shifted, d, 0.0);
  const double lin = e.weighted_term + e.batch_term;
  const double lin_shifted = es.weighted_term + es.batch_term;
  CHECK(lin - lin_shifted == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("adaptive_steel is deterministic and keeps the stage-0 start") {
  const BanditEnvSpec spec = BanditEnvSpec::standard(SingularityMode::disjoint_support);
  const AdaptiveConfig c = make_config(spec, 6);
  const BanditDataset b = generate_bandit(spec, 150, 6);
  const AdaptiveResult r1 = adaptive_steel(b.as_transitions(), c);
  const AdaptiveResult r2 = adaptive_steel(b.as_transitions(), c);
  CHECK(r1.to_json().dump() == r2.to_json().dump());
  CHECK(r1.result.duals.rho1 >= 0.0);
  CHECK(r1.eps0.value >= r1.eps0.floor);
  const auto [lo, hi] = spec.policy_box();
  for (Index i = 0; i < c.steel.init_states.rows(); ++i) {
    const Vector a = r1.result.policy.act(row_vec(c.steel.init_states, i));
    CHECK((a.array() >= lo.array()).all());
    CHECK((a.array() <= hi.array()).all());
  }
}

TEST_CASE("adaptive config validation") {
  AdaptiveConfig c = make_config(BanditEnvSpec::standard(), 0);
  CHECK_NOTHROW(c.validate());
  c.stage0_eps2 = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

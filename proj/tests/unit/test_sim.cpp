#include <cmath>

#include "doctest.h"

#include "steel/sim.hpp"

using namespace steel;

namespace {

// Midpoint grid over [lo, hi]^2.
Points state_grid(double lo, double hi, int m) {
  Points g(m * m, 2);
  const double step = (hi - lo) / m;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      g(i * m + j, 0) = lo + (i + 0.5) * step;
      g(i * m + j, 1) = lo + (j + 0.5) * step;
    }
  return g;
}

ParamPolicy constant_policy(const BanditEnvSpec& spec, double action) {
  const auto [lo, hi] = spec.policy_box();
  ParamPolicy p(FeatureMap::polynomial(2, 1), lo, hi);
  const double u = (action - lo(0)) / (hi(0) - lo(0));
  Vector psi = Vector::Zero(3);
  psi(0) = std::log(u / (1.0 - u));
  p.set_params(psi);
  return p;
}

// Reward is clipped at r_max everywhere under a zero-gain policy.
MdpEnvSpec constant_reward_mdp(double gamma) {
  MdpEnvSpec spec = MdpEnvSpec::standard_tabular(11, gamma);
  spec.state_cost = 0.0;
  spec.gain = Matrix::Zero(1, 1);
  spec.gain_offset = Vector::Constant(1, 0.5 * (spec.action_lo(0) + spec.action_hi(0)));
  spec.r_max = 0.25;
  spec.reward_noise_std = 0.0;
  return spec;
}

}  // namespace

TEST_CASE("generators are deterministic per seed") {
  const BanditEnvSpec bs = BanditEnvSpec::standard();
  const BanditDataset b1 = generate_bandit(bs, 100, 7), b2 = generate_bandit(bs, 100, 7);
  CHECK(b1.states == b2.states);
  CHECK(b1.actions == b2.actions);
  CHECK(b1.rewards == b2.rewards);
  CHECK_FALSE(generate_bandit(bs, 100, 8).rewards == b1.rewards);

  const MdpEnvSpec ms = MdpEnvSpec::standard_tabular();
  const TransitionDataset m1 = generate_mdp(ms, 5, 20, 3), m2 = generate_mdp(ms, 5, 20, 3);
  CHECK(m1.states == m2.states);
  CHECK(m1.next_states == m2.next_states);
  CHECK(m1.rewards == m2.rewards);
  CHECK(m1.size() == 100);
  CHECK(m1.num_trajectories() == 5);
  CHECK_NOTHROW(m1.validate());
}

TEST_CASE("noise-free bandit rewards follow the closed form") {
  BanditEnvSpec spec = BanditEnvSpec::standard();
  spec.noise_std = 0.0;
  spec.jump = true;
  const BanditDataset b = generate_bandit(spec, 200, 1);
  for (Index i = 0; i < b.size(); ++i) {
    const double s1 = b.states(i, 0), s2 = b.states(i, 1), a = b.actions(i, 0);
    const double mu = spec.mu_weights(0, 0) * s1 + spec.mu_weights(0, 1) * s2 + spec.mu_offset(0);
    double r = std::clamp(1.0 - (a - mu) * (a - mu), -1.0, 1.0);
    if (s1 > 1.0) r += 0.5;
    CHECK(b.rewards(i) == doctest::Approx(r).epsilon(1e-14));
  }
  CHECK(spec.r_max() == 1.5);
}

TEST_CASE("behavior mean reward matches numerical integration") {
  const BanditEnvSpec spec = BanditEnvSpec::standard(SingularityMode::none);
  // States on a midpoint grid, actions by a fine quadrature of the gaussian.
  const Points grid = state_grid(spec.state_lo, spec.state_hi, 60);
  double analytic = 0.0;
  for (Index g = 0; g < grid.rows(); ++g) {
    const Vector s = row_vec(grid, g);
    const double m = spec.behavior_mean(s)(0), sd = spec.behavior_std_at(s)(0);
    double acc = 0.0, mass = 0.0;
    const int k = 400;
    for (int j = 0; j < k; ++j) {
      const double z = -6.0 + 12.0 * (j + 0.5) / k;
      const double w = std::exp(-0.5 * z * z);
      acc += w * spec.mean_reward(s, Vector::Constant(1, m + sd * z));
      mass += w;
    }
    analytic += acc / mass;
  }
  analytic /= static_cast<double>(grid.rows());
  const BanditDataset b = generate_bandit(spec, 20000, 2);
  const double mean = b.rewards.mean();
  const double se = std::sqrt((b.rewards.array() - mean).square().sum() / (b.size() - 1.0) / b.size());
  CHECK(std::abs(mean - analytic) <= 3.0 * se);
}

TEST_CASE("Monte Carlo policy values") {
  SUBCASE("constant reward") {
    const MdpEnvSpec spec = constant_reward_mdp(0.6);
    ParamPolicy p(FeatureMap::polynomial(1, 1), spec.action_lo, spec.action_hi);
    const int h = default_horizon(0.6);
    const ValueEstimate v = mc_policy_value(spec, p, h, 50, 1);
    CHECK(v.value == doctest::Approx(0.25 * (1.0 - std::pow(0.6, h + 1))).epsilon(1e-12));
    CHECK(v.std_error == doctest::Approx(0.0).epsilon(1e-12));
    const TabularQ q = tabular_q_oracle(spec, [&](const Vector& s) { return p.act(s); });
    CHECK((q.values.array() - 0.25 / 0.4).abs().maxCoeff() <= 1e-9);
  }
  SUBCASE("gamma 0 is the mean immediate reward") {
    const MdpEnvSpec spec = MdpEnvSpec::standard_tabular(11, 0.0);
    ParamPolicy p(FeatureMap::polynomial(1, 1), spec.action_lo, spec.action_hi);
    const TabularQ q = tabular_q_oracle(spec, [&](const Vector& s) { return p.act(s); });
    const Points grid = spec.grid();
    for (Index i = 0; i < grid.rows(); ++i) {
      const Vector s = row_vec(grid, i);
      CHECK(q.values(i) == spec.mean_reward(s, p.act(s)));
    }
    CHECK(default_horizon(0.0) == 1);
    const ValueEstimate v = mc_policy_value(spec, p, 1, 20000, 2);
    CHECK(std::abs(v.value - q.policy_value()) <= 3.0 * v.std_error + 1e-12);
  }
  SUBCASE("tabular chain against the oracle") {
    const MdpEnvSpec spec = MdpEnvSpec::standard_tabular(11, 0.7);
    ParamPolicy p(FeatureMap::polynomial(1, 1), spec.action_lo, spec.action_hi);
    Vector psi(2);
    psi << -0.3, 0.8;
    p.set_params(psi);
    const TabularQ q = tabular_q_oracle(spec, [&](const Vector& s) { return p.act(s); });
    const ValueEstimate v = mc_policy_value(spec, p, default_horizon(0.7), 20000, 3);
    // Truncation at gamma^H <= 1e-3 adds a bias below 1e-3 r_max.
    CHECK(std::abs(v.value - q.policy_value()) <= 3.0 * v.std_error + 1e-3 * spec.r_max);
  }
  SUBCASE("bandit estimate agrees with a state grid") {
    const BanditEnvSpec spec = BanditEnvSpec::standard();
    const ParamPolicy p = constant_policy(spec, 0.3);
    const ValueEstimate mc = mc_policy_value(spec, p, 20000, 4);
    const double exact = policy_value_on(spec, p, state_grid(spec.state_lo, spec.state_hi, 200)).value;
    CHECK(std::abs(mc.value - exact) <= 3.0 * mc.std_error);
  }
}

TEST_CASE("value iteration contracts") {
  const MdpEnvSpec spec = MdpEnvSpec::standard_tabular(15, 0.8);
  ParamPolicy p(FeatureMap::polynomial(1, 1), spec.action_lo, spec.action_hi);
  const TabularQ q = tabular_q_oracle(spec, [&](const Vector& s) { return p.act(s); });
  REQUIRE(q.sweep_changes.size() > 2);
  for (std::size_t k = 1; k < q.sweep_changes.size(); ++k)
    CHECK(q.sweep_changes[k] <= 0.8 * q.sweep_changes[k - 1] + 1e-13);  // rounding in V
  // Q = r + gamma E V.
  const Points grid = spec.grid();
  const Vector s = row_vec(grid, 3);
  const Vector a = p.act(s);
  const double expected = spec.mean_reward(s, a) + 0.8 * spec.transition_probs(grid, s, a).dot(q.values);
  CHECK(q.q(s, a) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("regret") {
  const Regret r = regret(1.0, 0.7);
  CHECK(r.raw == doctest::Approx(0.3));
  CHECK(r.clamped == doctest::Approx(0.3));
  const Regret n = regret(1.0, 1.01);
  CHECK(n.raw == doctest::Approx(-0.01));
  CHECK(n.clamped == 0.0);

  // Constant policies on a quadratic bandit without clipping: the value gap
  // to the best constant c* = E mu is (c - c*)^2.
  BanditEnvSpec spec = BanditEnvSpec::standard();
  spec.mu_weights << 0.2, -0.1;
  spec.mu_offset << 0.2;
  const Points grid = state_grid(spec.state_lo, spec.state_hi, 200);
  const double best = policy_value_on(spec, constant_policy(spec, 0.2), grid).value;
  // 1 - Var(mu) for uniform states on [-2, 2]^2.
  CHECK(best == doctest::Approx(1.0 - (0.04 + 0.01) * 16.0 / 12.0).epsilon(1e-4));
  for (double c : {-0.6, -0.2, 0.5, 1.0}) {  // |c - mu| <= sqrt(2) everywhere
    const double v = policy_value_on(spec, constant_policy(spec, c), grid).value;
    CHECK(regret(best, v).raw == doctest::Approx((c - 0.2) * (c - 0.2)).epsilon(1e-6));
  }
}

TEST_CASE("disjoint support mode keeps behavior out of the target box") {
  const BanditEnvSpec spec = BanditEnvSpec::standard(SingularityMode::disjoint_support);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const BanditDataset b = generate_bandit(spec, 2000, seed);
    for (Index i = 0; i < b.size(); ++i) {
      const bool in_box = b.actions(i, 0) >= spec.target_lo(0) && b.actions(i, 0) <= spec.target_hi(0);
      CHECK_FALSE(in_box);
    }
  }
  const auto [lo, hi] = spec.policy_box();
  CHECK(lo == spec.target_lo);
  CHECK(hi == spec.target_hi);
  CHECK(spec.behavior_density(spec.target_lo, Vector::Zero(2)) == 0.0);
}

TEST_CASE("spec validation and serialization") {
  const BanditEnvSpec b = BanditEnvSpec::standard();
  CHECK(BanditEnvSpec::from_json(b.to_json()).to_json() == b.to_json());
  const MdpEnvSpec m = MdpEnvSpec::standard_tabular();
  CHECK(MdpEnvSpec::from_json(m.to_json()).to_json() == m.to_json());
  MdpEnvSpec unstable = m;
  unstable.a = Matrix::Constant(1, 1, 1.5);
  CHECK_THROWS_AS(unstable.validate(), Error);
  BanditEnvSpec bad = b;
  bad.behavior_std = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("pricing market") {
  const PricingEnvSpec spec = PricingEnvSpec::standard();
  CHECK(spec.demand_coef(0) < 0.0);  // FICO
  CHECK(spec.demand_coef(4) > 0.0);  // term
  const auto loans = generate_loans(spec, 500, 1);
  CHECK(loans.size() == 500);
  for (std::size_t i = 0; i < 20; ++i) {
    const Vector z = pricing_latent_features(loans[i]);
    const double p = spec.optimal_price(z);
    CHECK(p == doctest::Approx(spec.alpha(z) / (2.0 * spec.beta) * 1000.0));
    // Revenue p d(p) is maximal there.
    const double rev = p * spec.accept_prob(z, p);
    CHECK(rev >= (p + 50.0) * spec.accept_prob(z, p + 50.0) - 1e-9);
    CHECK(rev >= (p - 50.0) * spec.accept_prob(z, p - 50.0) - 1e-9);
  }
}

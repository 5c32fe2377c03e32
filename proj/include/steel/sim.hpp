#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "steel/data.hpp"
#include "steel/funcapprox.hpp"

namespace steel {

enum class SingularityMode { none, deterministic_target, disjoint_support };

/// Contextual bandit with reward
///   r(s, a) = clip(1 - |a - mu(s)|^2, -1, 1) + 0.5 [jump and s_1 > 1],
/// mu(s) = mu_weights s + mu_offset. States are uniform on
/// [state_lo, state_hi]^dS under both the data and nu. Behavior actions are
/// gaussian around behavior_weights s + behavior_offset with per-coordinate
/// std behavior_std (1 + behavior_std_slope |s_1|).
struct BanditEnvSpec {
  Index state_dim = 2;
  Index action_dim = 1;
  double state_lo = -2.0;
  double state_hi = 2.0;
  Matrix mu_weights;  // dA x dS
  Vector mu_offset;   // dA
  bool jump = false;
  Vector action_lo;   // policy action box
  Vector action_hi;
  Matrix behavior_weights;  // dA x dS
  Vector behavior_offset;
  double behavior_std = 0.5;
  double behavior_std_slope = 0.0;
  double noise_std = 0.1;
  SingularityMode mode = SingularityMode::deterministic_target;
  /// Target action sub-box for disjoint_support; behavior actions avoid it.
  Vector target_lo;
  Vector target_hi;

  void validate() const;
  double mean_reward(const VectorRef& s, const VectorRef& a) const;
  /// d r / d a (zero where the clip is active).
  Vector reward_action_grad(const VectorRef& s, const VectorRef& a) const;
  double r_max() const { return jump ? 1.5 : 1.0; }
  Vector behavior_mean(const VectorRef& s) const;
  Vector behavior_std_at(const VectorRef& s) const;
  /// Behavior density of a given s (gaussian product; zero inside the target
  /// sub-box in disjoint_support mode up to the rejection normalizer).
  double behavior_density(const VectorRef& a, const VectorRef& s) const;
  /// Action box of the policy class: the target sub-box in
  /// disjoint_support mode, [action_lo, action_hi] otherwise.
  std::pair<Vector, Vector> policy_box() const;

  nlohmann::json to_json() const;
  static BanditEnvSpec from_json(const nlohmann::json& j);
  /// A 2-d state, 1-d action instance used by examples and tests.
  static BanditEnvSpec standard(SingularityMode mode = SingularityMode::deterministic_target);
};

BanditDataset generate_bandit(const BanditEnvSpec& spec, Index n, std::uint64_t seed);
Points sample_bandit_states(const BanditEnvSpec& spec, Index n, std::uint64_t seed);

/// Linear-Gaussian MDP s' = A s + B a + eta with reward
///   r(s, a) = clip(1 - state_cost |s|^2 - |a - K s - k0|^2, -r_max, r_max).
/// With grid_resolution > 0 the state space is the uniform grid over
/// [state_lo, state_hi]^dS and s' is drawn from the grid with probabilities
/// proportional to the gaussian density around A s + B a (a tabular chain).
struct MdpEnvSpec {
  Index state_dim = 1;
  Index action_dim = 1;
  Matrix a;  // dS x dS
  Matrix b;  // dS x dA
  double transition_std = 0.3;
  double state_lo = -1.0;
  double state_hi = 1.0;
  double state_cost = 0.5;
  Matrix gain;       // K, dA x dS
  Vector gain_offset;  // k0
  double r_max = 1.0;
  double reward_noise_std = 0.0;
  double gamma = 0.5;
  Vector action_lo;
  Vector action_hi;
  Matrix behavior_weights;
  Vector behavior_offset;
  double behavior_std = 0.5;
  int grid_resolution = 0;

  void validate() const;
  double mean_reward(const VectorRef& s, const VectorRef& a) const;
  Vector behavior_mean(const VectorRef& s) const;
  /// Grid points, one per row (grid mode only).
  Points grid() const;
  /// Next-state probabilities over the grid (grid mode only).
  Vector transition_probs(const Points& grid, const VectorRef& s, const VectorRef& a) const;

  nlohmann::json to_json() const;
  static MdpEnvSpec from_json(const nlohmann::json& j);
  /// A 1-d tabular chain instance used by examples and tests.
  static MdpEnvSpec standard_tabular(int grid_resolution = 11, double gamma = 0.5);
};

TransitionDataset generate_mdp(const MdpEnvSpec& spec, Index num_trajectories, Index horizon,
                               std::uint64_t seed);
Points sample_mdp_initial_states(const MdpEnvSpec& spec, Index n, std::uint64_t seed);

struct ValueEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// gamma = 0 case: mean noise-free reward over `rollouts` draws from nu.
ValueEstimate mc_policy_value(const BanditEnvSpec& spec, const ParamPolicy& policy,
                              Index rollouts, std::uint64_t seed);
/// Mean over a fixed state sample; standard error across states.
ValueEstimate policy_value_on(const BanditEnvSpec& spec, const ParamPolicy& policy,
                              const Points& states);
/// (1 - gamma) mean discounted return over rollouts truncated at `horizon`.
/// Rollout i draws from its own stream seeded by (seed, i).
ValueEstimate mc_policy_value(const MdpEnvSpec& spec, const ParamPolicy& policy, int horizon,
                              Index rollouts, std::uint64_t seed);
/// Smallest horizon with gamma^horizon <= 0.001 (1 when gamma = 0).
int default_horizon(double gamma);

/// Exact Q^pi on the tabular chain.
struct TabularQ {
  MdpEnvSpec spec;
  Points grid;
  Vector values;  // V^pi on the grid
  std::vector<double> sweep_changes;

  double q(const VectorRef& s, const VectorRef& a) const;
  /// (1 - gamma) mean over the grid (nu is uniform on the grid) of V.
  double policy_value() const;
};

TabularQ tabular_q_oracle(const MdpEnvSpec& spec, const std::function<Vector(const Vector&)>& policy,
                          double tol = 1e-10, int max_iters = 100000);

/// In-class optimum over policies on the bandit: random restarts from psi ~
/// N(0, 2^2) followed by gradient ascent on the best few, evaluated on the
/// fixed state sample. Cached per (spec, class, sample, restarts, seed).
double bandit_reference_value(const BanditEnvSpec& spec, const ParamPolicy& policy_class,
                              const Points& states, int restarts = 512, std::uint64_t seed = 0);

/// Same for the tabular chain, scored with the exact oracle.
double mdp_reference_value(const MdpEnvSpec& spec, const ParamPolicy& policy_class,
                           int restarts = 64, std::uint64_t seed = 0);

struct Regret {
  double raw = 0.0;
  double clamped = 0.0;
};

Regret regret(double reference_value, double policy_value);

/// Synthetic auto-loan market with linear demand
///   P(accept | s, p) = clip(alpha(s) - beta p / 1000, 0, 1),
/// alpha(s) = alpha0 + sum_k coef_k z_k over the standardized features
/// (fico, loan amount, prime rate, competitor rate, term).
struct PricingEnvSpec {
  double alpha0 = 0.9;
  Vector demand_coef;  // 5
  double beta = 0.25;
  double behavior_price_mean = 1500.0;
  double behavior_price_std = 600.0;
  Vector behavior_price_coef;  // 5, dollars per standardized unit

  void validate() const;
  double alpha(const VectorRef& z) const;
  double accept_prob(const VectorRef& z, double price) const;
  /// Pointwise revenue-maximizing price alpha(z) / (2 beta) * 1000.
  double optimal_price(const VectorRef& z) const;

  nlohmann::json to_json() const;
  static PricingEnvSpec from_json(const nlohmann::json& j);
  /// FICO lowers demand, term raises it.
  static PricingEnvSpec standard();
};

/// Raw records; standardized coordinates of each record are recoverable via
/// `pricing_latent_features`.
std::vector<LoanRecord> generate_loans(const PricingEnvSpec& spec, Index n, std::uint64_t seed);
/// The latent standardized features the generator used for a record.
Vector pricing_latent_features(const LoanRecord& record);

}  // namespace steel

#include "steel/steel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "steel/visitation.hpp"

namespace steel {

void SteelConfig::validate() const {
  require(gamma >= 0.0 && gamma < 1.0, "config: gamma must lie in [0, 1)");
  require(zeta > 0.0 && std::isfinite(zeta), "config: zeta must be positive");
  require(!eps1 || *eps1 > 0.0, "config: eps1 must be positive");
  require(!eps2 || *eps2 > 0.0, "config: eps2 must be positive");
  require(kappa1 > 0.0 && kappa2 > 0.0, "config: kappa must be positive");
  require(w_radius > 0.0, "config: C must be positive");
  require(lr_q >= 0.0 && lr_pi >= 0.0 && lr_rho1 >= 0.0 && lr_rho2 >= 0.0,
          "config: learning rates must be >= 0");
  require(inner_q_steps >= 0 && max_outer_iters >= 1, "config: invalid iteration budget");
  require(rho_max > 0.0, "config: rho_max must be positive");
  require(nystrom_cap >= 2, "config: nystrom_cap must be >= 2");
  require(init_states.rows() > 0, "config: initial state sample is empty");
  require(!bandwidth || *bandwidth > 0.0, "config: bandwidth must be positive");
  require(q_class.num_params() > 0, "config: Q class is not set");
  require(policy_class.num_params() > 0, "config: policy class is not set");
  require(!init_theta || init_theta->size() == q_class.num_params(),
          "config: init_theta has the wrong length");
  require(!init_psi || init_psi->size() == policy_class.num_params(),
          "config: init_psi has the wrong length");
}

namespace {

nlohmann::json trace_json(const std::vector<TraceEntry>& trace) {
  nlohmann::json lag = nlohmann::json::array(), obj = nlohmann::json::array();
  nlohmann::json cons = nlohmann::json::array(), rho = nlohmann::json::array();
  for (const auto& t : trace) {
    lag.push_back(t.lagrangian);
    obj.push_back(t.objective);
    cons.push_back(t.constraints);
    rho.push_back(t.rho);
  }
  return {{"lagrangian", lag}, {"objective", obj}, {"constraints", cons}, {"rho", rho}};
}

Vector residuals_for(const TransitionDataset& data, const GramMatrix& gram,
                     const PolicyFunction& policy, const QFunction& q, double gamma) {
  require(gram.size() == data.size(), "Gram matrix does not match the dataset");
  return residual_vector(data, policy, q, gamma).values;
}

}  // namespace

nlohmann::json SteelResult::to_json() const {
  return {{"policy", policy.to_json()},
          {"q", q.to_json()},
          {"duals", {{"rho1", duals.rho1}, {"rho2", duals.rho2}}},
          {"trace", trace_json(trace)},
          {"pessimistic_value", pessimistic_value},
          {"best_iteration", best_iteration},
          {"converged", converged},
          {"eps1", eps1},
          {"eps2", eps2},
          {"w_radius", w_radius},
          {"bandwidth", bandwidth},
          {"n_used", n_used}};
}

std::pair<double, double> default_radii(Index n, double kappa1, double kappa2) {
  require(n >= 2, "default_radii: need at least two transitions");
  const double base = std::log(static_cast<double>(n)) / std::sqrt(static_cast<double>(n));
  return {kappa1 * base, kappa2 * std::cbrt(base)};
}

double policy_value_estimate(const QFunction& q, const PolicyFunction& policy,
                             const Points& init_states, double gamma) {
  require(init_states.rows() > 0, "policy_value_estimate: empty initial sample");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  double total = 0.0;
  for (Index i = 0; i < init_states.rows(); ++i) {
    const Vector s = row_vec(init_states, i);
    total += q(s, policy(s));
  }
  return (1.0 - gamma) * total / static_cast<double>(init_states.rows());
}

double policy_value_estimate(const ParamQ& q, const ParamPolicy& policy, const Points& init_states,
                             double gamma) {
  return policy_value_estimate(as_q_function(q), as_policy_function(policy), init_states, gamma);
}

double omega1_value(const TransitionDataset& data, const GramMatrix& gram,
                    const PolicyFunction& policy, const QFunction& q, double gamma, double c) {
  return wball_sup(gram, residuals_for(data, gram, policy, q, gamma), c);
}

double omega2_value(const TransitionDataset& data, const GramMatrix& gram,
                    const PolicyFunction& policy, const QFunction& q, double gamma, double zeta) {
  return std::sqrt(rkhs_norm_sq(gram, residuals_for(data, gram, policy, q, gamma), zeta));
}

PreparedBatch prepare_batch(const TransitionDataset& dataset, const SteelConfig& cfg) {
  dataset.validate();
  PreparedBatch batch;
  if (dataset.size() > cfg.nystrom_cap) {
    std::vector<Index> rows(static_cast<std::size_t>(dataset.size()));
    std::iota(rows.begin(), rows.end(), Index{0});
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(cfg.nystrom_cap));
    std::sort(rows.begin(), rows.end());
    batch.data = dataset.select_rows(rows);
  } else {
    batch.data = dataset;
  }
  const Points sa = batch.data.state_actions();
  batch.spec.bandwidth = cfg.bandwidth ? *cfg.bandwidth : median_heuristic(sa, cfg.seed);
  batch.spec.validate();
  batch.kernel = std::make_shared<const KernelContext>(gram(batch.spec, sa), cfg.zeta);
  return batch;
}

std::vector<ConstraintTerm> steel_constraints(const PreparedBatch& batch, double eps1, double eps2,
                                              double c, double lr_rho1, double lr_rho2) {
  const double n = static_cast<double>(batch.kernel->size());
  // The Gram and smoother matrices live as long as the kernel context.
  std::shared_ptr<const Matrix> k(batch.kernel, &batch.kernel->k());
  std::shared_ptr<const Matrix> m(batch.kernel, &batch.kernel->smoother());
  std::vector<ConstraintTerm> out;
  out.push_back(quadratic_constraint("wball", k, c * c / (n * n), eps1 * eps1, lr_rho1));
  out.push_back(quadratic_constraint("rkhs", m, 1.0, eps2 * eps2, lr_rho2));
  return out;
}

namespace {

std::pair<double, double> radii_for(const SteelConfig& cfg, Index n) {
  const auto [d1, d2] = default_radii(n, cfg.kappa1, cfg.kappa2);
  return {cfg.eps1 ? *cfg.eps1 : d1, cfg.eps2 ? *cfg.eps2 : d2};
}

PrimalDualSettings settings_for(const SteelConfig& cfg) {
  PrimalDualSettings s;
  s.gamma = cfg.gamma;
  s.lr_q = cfg.lr_q;
  s.lr_pi = cfg.lr_pi;
  s.inner_q_steps = cfg.inner_q_steps;
  s.max_outer_iters = cfg.max_outer_iters;
  s.tol = cfg.tol;
  s.rho_max = cfg.rho_max;
  s.polish_steps = cfg.polish_steps;
  s.precondition = cfg.precondition;
  return s;
}

}  // namespace

LagrangianParts lagrangian(const PreparedBatch& batch, const Vector& theta, const Vector& psi,
                           const DualVars& rho, const SteelConfig& cfg) {
  require(rho.rho1 >= 0.0 && rho.rho2 >= 0.0, "lagrangian: multipliers must be >= 0");
  const auto [e1, e2] = radii_for(cfg, batch.data.size());
  LagrangianModel model(batch.data, cfg.init_states, cfg.gamma, cfg.q_class, cfg.policy_class,
                        steel_constraints(batch, e1, e2, cfg.w_radius, 0.0, 0.0));
  Vector r(2);
  r << rho.rho1, rho.rho2;
  return model.evaluate(theta, psi, r, true, true);
}

PrimalDualOutcome run_primal_dual(const PreparedBatch& batch, const SteelConfig& cfg,
                                  std::vector<ConstraintTerm> constraints,
                                  std::optional<Vector> init_rho) {
  const Index nc = static_cast<Index>(constraints.size());
  require(!init_rho || init_rho->size() == nc, "run_primal_dual: init_rho has the wrong length");
  LagrangianModel model(batch.data, cfg.init_states, cfg.gamma, cfg.q_class, cfg.policy_class,
                        std::move(constraints));
  const Vector theta = cfg.init_theta ? *cfg.init_theta : Vector::Zero(cfg.q_class.num_params());
  const Vector psi = cfg.init_psi ? *cfg.init_psi : Vector::Zero(cfg.policy_class.num_params());
  return primal_dual_optimize(model, theta, psi, init_rho ? *init_rho : Vector::Zero(nc),
                              settings_for(cfg));
}

SteelResult steel_optimize(const TransitionDataset& dataset, const SteelConfig& cfg) {
  cfg.validate();
  return steel_optimize(prepare_batch(dataset, cfg), cfg);
}

SteelResult steel_optimize(const PreparedBatch& batch, const SteelConfig& cfg) {
  cfg.validate();
  const auto [e1, e2] = radii_for(cfg, batch.data.size());

  double c = cfg.w_radius;
  if (cfg.two_phase_c) {
    SteelConfig pre = cfg;
    pre.lr_rho1 = 0.0;
    const auto first =
        run_primal_dual(batch, pre, steel_constraints(batch, e1, e2, c, 0.0, pre.lr_rho2));
    ParamPolicy pi = cfg.policy_class;
    pi.set_params(first.psi);
    std::optional<LinearTransitionModel> model;
    if (cfg.gamma > 0.0) model = fit_linear_transition_model(batch.data);
    const WeightedSample target =
        visitation_sample(cfg.init_states, pi, cfg.gamma, model ? &*model : nullptr, cfg.seed);
    const Points sa = batch.data.state_actions();
    const double d2 = mmd2_weighted(sa, Vector::Ones(sa.rows()), target.points, target.weights,
                                    batch.spec);
    c = std::max(std::sqrt(d2), 1e-6);
  }

  const auto outcome = run_primal_dual(
      batch, cfg, steel_constraints(batch, e1, e2, c, cfg.lr_rho1, cfg.lr_rho2));

  SteelResult result;
  result.policy = cfg.policy_class;
  result.policy.set_params(outcome.psi);
  result.q = cfg.q_class;
  result.q.set_theta(outcome.theta);
  result.duals = {outcome.rho(0), outcome.rho(1)};
  result.trace = outcome.trace;
  result.pessimistic_value = outcome.lagrangian;
  result.best_iteration = outcome.best_iteration;
  result.converged = outcome.converged;
  result.eps1 = e1;
  result.eps2 = e2;
  result.w_radius = c;
  result.bandwidth = batch.spec.bandwidth;
  result.n_used = batch.data.size();
  return result;
}

}  // namespace steel

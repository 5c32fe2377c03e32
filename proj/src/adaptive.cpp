#include "steel/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/random/sobol.hpp>

#include "steel/json_util.hpp"

namespace steel {

void AdaptiveConfig::validate() const {
  steel.validate();
  require(wmax > 0.0, "adaptive: wmax must be positive");
  require(grid_points >= 16, "adaptive: grid needs at least 16 points");
  require(!stage0_eps2 || *stage0_eps2 > 0.0, "adaptive: stage-0 eps2 must be positive");
  require(!stage0_eps2_factor || *stage0_eps2_factor > 0.0,
          "adaptive: stage-0 factor must be positive");
  require(!kde_bandwidth || *kde_bandwidth > 0.0, "adaptive: KDE bandwidth must be positive");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double kde(const Points& pts, const Vector& w, double h, const VectorRef& z) {
  const double d = static_cast<double>(pts.cols());
  const double norm = std::pow(2.0 * kPi * h * h, -0.5 * d);
  double total = 0.0;
  for (Index i = 0; i < pts.rows(); ++i) {
    total += w(i) * std::exp(-(row_vec(pts, i) - z).squaredNorm() / (2.0 * h * h));
  }
  return norm * total;
}

// Sobol points with a seeded uniform shift (mod 1), mapped into the box.
Points shifted_sobol(Index count, const Vector& lo, const Vector& hi, std::uint64_t seed) {
  const Index d = lo.size();
  boost::random::sobol qrng(static_cast<std::size_t>(d));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector shift(d);
  for (Index k = 0; k < d; ++k) shift(k) = u(rng);
  const double range = static_cast<double>(boost::random::sobol::max()) -
                       static_cast<double>(boost::random::sobol::min()) + 1.0;
  Points out(count, d);
  for (Index i = 0; i < count; ++i) {
    for (Index k = 0; k < d; ++k) {
      double x = static_cast<double>(qrng() - boost::random::sobol::min()) / range + shift(k);
      x -= std::floor(x);
      out(i, k) = lo(k) + (hi(k) - lo(k)) * x;
    }
  }
  return out;
}

Vector uniform_weights(Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

}  // namespace

double DecompositionEstimate::batch_density(const VectorRef& z) const {
  return kde(batch_points, uniform_weights(batch_points.rows()), kde_bandwidth, z);
}

double DecompositionEstimate::target_density(const VectorRef& z) const {
  return kde(target.points, target.weights, kde_bandwidth, z);
}

double DecompositionEstimate::omega(const VectorRef& z) const {
  const double db = batch_density(z);
  const double dt = target_density(z);
  if (db <= 0.0) return dt > 0.0 ? wmax : 0.0;
  return std::min(dt / db, wmax);
}

nlohmann::json DecompositionEstimate::to_json() const {
  return {{"lambda1_mass", lambda1_mass},
          {"lambda2_mass", lambda2_mass},
          {"delta_hat", delta_hat},
          {"kde_bandwidth", kde_bandwidth},
          {"wmax", wmax},
          {"batch_size", batch_points.rows()},
          {"target_size", target.points.rows()},
          {"lambda1_weights", vector_to_json(lambda1_sample.weights)},
          {"lambda2_weights", vector_to_json(lambda2_sample.weights)}};
}

double stage0_radius(const PreparedBatch& batch, const AdaptiveConfig& cfg) {
  if (cfg.stage0_eps2) return *cfg.stage0_eps2;
  if (cfg.stage0_eps2_factor) {
    // At Q = 0 the residual is the reward vector for every policy.
    const double norm = std::sqrt(batch.kernel->rkhs_sq(batch.data.rewards));
    return std::max(*cfg.stage0_eps2_factor * norm, 1e-8);
  }
  if (cfg.steel.eps2) return *cfg.steel.eps2;
  return default_radii(batch.data.size(), cfg.steel.kappa1, cfg.steel.kappa2).second;
}

SteelResult stage0(const PreparedBatch& batch, const AdaptiveConfig& cfg) {
  SteelConfig s = cfg.steel;
  s.lr_rho1 = 0.0;
  s.eps2 = stage0_radius(batch, cfg);
  s.two_phase_c = false;
  return steel_optimize(batch, s);
}

SteelResult stage0(const TransitionDataset& dataset, const AdaptiveConfig& cfg) {
  cfg.validate();
  return stage0(prepare_batch(dataset, cfg.steel), cfg);
}

DecompositionEstimate estimate_decomposition(const PreparedBatch& batch, const ParamPolicy& policy,
                                             double gamma, const Points& init_states,
                                             const AdaptiveConfig& cfg) {
  DecompositionEstimate out;
  out.wmax = cfg.wmax;
  out.batch_points = batch.data.state_actions();
  std::optional<LinearTransitionModel> model;
  if (gamma > 0.0) model = fit_linear_transition_model(batch.data);
  out.target = visitation_sample(init_states, policy, gamma, model ? &*model : nullptr,
                                 cfg.steel.seed);

  const Index d = out.batch_points.cols();
  const Index nb = out.batch_points.rows();
  out.kde_bandwidth =
      cfg.kde_bandwidth
          ? *cfg.kde_bandwidth
          : batch.spec.bandwidth * std::pow(static_cast<double>(nb), -1.0 / (static_cast<double>(d) + 4.0));
  const Vector wb = uniform_weights(nb);
  require(median_heuristic(out.batch_points, cfg.steel.seed) > 0.0, "degenerate KDE sample");

  // Evaluation grid over the enlarged bounding box of both samples.
  Vector lo = out.batch_points.colwise().minCoeff().transpose();
  Vector hi = out.batch_points.colwise().maxCoeff().transpose();
  lo = lo.cwiseMin(out.target.points.colwise().minCoeff().transpose());
  hi = hi.cwiseMax(out.target.points.colwise().maxCoeff().transpose());
  const Vector pad = 0.1 * (hi - lo) + Vector::Constant(d, 1e-9);
  const Points grid = shifted_sobol(cfg.grid_points, lo - pad, hi + pad, cfg.steel.seed + 1);

  double ac = 0.0, total = 0.0;
  for (Index g = 0; g < grid.rows(); ++g) {
    const Vector z = row_vec(grid, g);
    const double db = kde(out.batch_points, wb, out.kde_bandwidth, z);
    const double dt = kde(out.target.points, out.target.weights, out.kde_bandwidth, z);
    ac += std::min(dt, cfg.wmax * db);
    total += dt;
  }
  require(total > 0.0, "degenerate KDE: target density vanishes on the grid");
  out.lambda1_mass = std::clamp(ac / total, 0.0, 1.0);
  out.lambda2_mass = 1.0 - out.lambda1_mass;

  out.lambda1_sample.points = out.batch_points;
  out.lambda1_sample.weights.resize(nb);
  for (Index i = 0; i < nb; ++i) out.lambda1_sample.weights(i) = out.omega(row_vec(out.batch_points, i));
  const double w1 = out.lambda1_sample.weights.sum();
  if (w1 > 0.0) out.lambda1_sample.weights /= w1;

  if (out.lambda2_mass < 1e-12) {
    out.lambda2_sample.points.resize(0, d);
    out.lambda2_sample.weights.resize(0);
    out.delta_hat = 0.0;
    return out;
  }
  const Index nt = out.target.points.rows();
  Vector w2(nt);
  for (Index j = 0; j < nt; ++j) {
    const Vector z = row_vec(out.target.points, j);
    const double db = kde(out.batch_points, wb, out.kde_bandwidth, z);
    const double dt = kde(out.target.points, out.target.weights, out.kde_bandwidth, z);
    const double share = dt > 0.0 ? std::min(dt, cfg.wmax * db) / dt : 1.0;
    w2(j) = out.target.weights(j) * std::max(0.0, 1.0 - share);
  }
  if (!(w2.sum() > 1e-300)) {
    out.lambda2_sample.points.resize(0, d);
    out.lambda2_sample.weights.resize(0);
    out.delta_hat = 0.0;
    return out;
  }
  out.lambda2_sample.points = out.target.points;
  out.lambda2_sample.weights = w2 / w2.sum();
  out.delta_hat = std::sqrt(mmd2_weighted(out.lambda2_sample.points, out.lambda2_sample.weights,
                                          out.batch_points, wb, batch.spec));
  return out;
}

namespace {

struct AdaptiveTerms {
  double weighted = 0.0, batch = 0.0, rkhs = 0.0;
  double total() const { return weighted + batch + rkhs; }
};

AdaptiveTerms adaptive_terms(const PreparedBatch& batch, const DecompositionEstimate& decomp,
                             const Vector& y) {
  require(y.size() == batch.data.size(), "adaptive constraint: residual length mismatch");
  AdaptiveTerms t;
  if (decomp.lambda1_sample.weights.size() == y.size()) {
    t.weighted = decomp.lambda1_mass * decomp.lambda1_sample.weights.dot(y);
  }
  t.batch = decomp.lambda2_mass * y.mean();
  t.rkhs = decomp.lambda2_mass * decomp.delta_hat * std::sqrt(batch.kernel->rkhs_sq(y));
  return t;
}

}  // namespace

double adaptive_constraint_value(const PreparedBatch& batch, const ParamPolicy& policy,
                                 const ParamQ& q, const DecompositionEstimate& decomp,
                                 double gamma) {
  const Vector y = residual_vector(batch.data, policy, q, gamma).values;
  return adaptive_terms(batch, decomp, y).total();
}

Epsilon0 epsilon0(const PreparedBatch& batch, const ParamPolicy& policy, const ParamQ& q,
                  const DecompositionEstimate& decomp, double gamma) {
  const Vector y = residual_vector(batch.data, policy, q, gamma).values;
  const AdaptiveTerms t = adaptive_terms(batch, decomp, y);
  Epsilon0 e;
  e.weighted_term = t.weighted;
  e.batch_term = t.batch;
  e.rkhs_term = t.rkhs;
  e.raw = t.total();
  e.floor = std::max(1e-6 * batch.data.max_abs_reward() / (1.0 - gamma), 1e-12);
  e.value = std::max(e.raw, e.floor);
  return e;
}

ConstraintTerm adaptive_constraint(const PreparedBatch& batch, const DecompositionEstimate& decomp,
                                   double eps0, double dual_lr) {
  ConstraintTerm term;
  term.name = "adaptive";
  term.target = eps0;
  term.dual_lr = dual_lr;
  const auto kernel = batch.kernel;
  const Index n = batch.data.size();
  const double l1 = decomp.lambda1_mass;
  const double l2 = decomp.lambda2_mass;
  const double delta = decomp.delta_hat;
  const Vector w = decomp.lambda1_sample.weights.size() == n ? decomp.lambda1_sample.weights
                                                             : Vector::Zero(n);
  term.evaluate = [kernel, n, l1, l2, delta, w](const Vector& y, Vector* grad) {
    const Vector my = kernel->smoother() * y;
    const double norm = std::sqrt(std::max(0.0, y.dot(my)));
    if (grad) {
      *grad = l1 * w + Vector::Constant(n, l2 / static_cast<double>(n));
      if (norm > 0.0) *grad += (l2 * delta / norm) * my;
    }
    return l1 * w.dot(y) + l2 * y.mean() + l2 * delta * norm;
  };
  return term;
}

nlohmann::json AdaptiveResult::to_json() const {
  return {{"stage0", stage0.to_json()},
          {"decomposition", decomposition.to_json()},
          {"eps0",
           {{"raw", eps0.raw},
            {"value", eps0.value},
            {"floor", eps0.floor},
            {"weighted_term", eps0.weighted_term},
            {"batch_term", eps0.batch_term},
            {"rkhs_term", eps0.rkhs_term}}},
          {"result", result.to_json()}};
}

AdaptiveResult adaptive_steel(const TransitionDataset& dataset, const AdaptiveConfig& cfg) {
  cfg.validate();
  const PreparedBatch batch = prepare_batch(dataset, cfg.steel);
  AdaptiveResult out;
  out.stage0 = stage0(batch, cfg);
  out.decomposition = estimate_decomposition(batch, out.stage0.policy, cfg.steel.gamma,
                                             cfg.steel.init_states, cfg);
  out.eps0 = epsilon0(batch, out.stage0.policy, out.stage0.q, out.decomposition, cfg.steel.gamma);

  SteelConfig second = cfg.steel;
  second.init_theta = out.stage0.q.theta();
  second.init_psi = out.stage0.policy.params();
  // The stage-0 RKHS constraint stays active: when the estimated singular
  // mass is ~0 the adaptive constraint is a single linear functional of Y
  // and bounds nothing on its own. (Q_hat, pi_0) satisfies both.
  const double eps2 = stage0_radius(batch, cfg);
  std::shared_ptr<const Matrix> m(batch.kernel, &batch.kernel->smoother());
  std::vector<ConstraintTerm> constraints{
      adaptive_constraint(batch, out.decomposition, out.eps0.value, cfg.steel.lr_rho1),
      quadratic_constraint("rkhs", m, 1.0, eps2 * eps2, cfg.steel.lr_rho2)};
  Vector rho0(2);
  rho0 << 0.0, out.stage0.duals.rho2;
  const auto outcome = run_primal_dual(batch, second, std::move(constraints), rho0);

  SteelResult& r = out.result;
  r.policy = cfg.steel.policy_class;
  r.policy.set_params(outcome.psi);
  r.q = cfg.steel.q_class;
  r.q.set_theta(outcome.theta);
  r.duals = {outcome.rho(0), outcome.rho(1)};
  r.trace = outcome.trace;
  r.pessimistic_value = outcome.lagrangian;
  r.best_iteration = outcome.best_iteration;
  r.converged = outcome.converged;
  r.eps1 = out.eps0.value;
  r.eps2 = eps2;
  r.w_radius = 0.0;
  r.bandwidth = batch.spec.bandwidth;
  r.n_used = batch.data.size();
  return out;
}

}  // namespace steel

#include "steel/bandit.hpp"

#include <algorithm>
#include <cmath>

#include "steel/primal_dual.hpp"

namespace steel {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinPropensity = 1e-12;

Matrix reward_features(const BanditDataset& data, const ParamQ& q) {
  Matrix f(data.size(), q.num_params());
  for (Index i = 0; i < data.size(); ++i) {
    f.row(i) = q.param_features(row_vec(data.states, i), row_vec(data.actions, i)).transpose();
  }
  return f;
}

}  // namespace

SteelResult bandit_steel(const BanditDataset& data, const SteelConfig& cfg) {
  require(cfg.gamma == 0.0, "bandit_steel: gamma must be 0");
  data.validate();
  return steel_optimize(data.as_transitions(), cfg);
}

ParamQ fit_reward_regression(const BanditDataset& data, const ParamQ& reward_class,
                             double ridge) {
  data.validate();
  require(ridge >= 0.0, "regression: ridge must be >= 0");
  const Matrix f = reward_features(data, reward_class);
  Matrix normal = f.transpose() * f;
  normal.diagonal().array() += ridge * static_cast<double>(data.size());
  Eigen::LDLT<Matrix> ldlt(normal);
  require(ldlt.info() == Eigen::Success, "regression: normal equations failed");
  Vector theta = ldlt.solve(f.transpose() * data.rewards);
  if (!theta.allFinite()) {
    const double scale = std::max(normal.trace() / static_cast<double>(normal.rows()), 1e-300);
    normal.diagonal().array() += 1e-10 * scale;
    ldlt.compute(normal);
    theta = ldlt.solve(f.transpose() * data.rewards);
    require(theta.allFinite(), "regression: singular normal equations after jitter");
  }
  ParamQ out = reward_class;
  out.set_theta(theta);
  return out;
}

RegressionResult regression_baseline(const BanditDataset& data, const ParamQ& reward_class,
                                     const ParamPolicy& policy_class, const Points& init_states,
                                     const PolicySearchSettings& settings, double ridge) {
  RegressionResult out;
  out.reward = fit_reward_regression(data, reward_class, ridge);
  // No constraints and a frozen Q: the primal-dual loop is plain policy ascent.
  LagrangianModel model(data.as_transitions(), init_states, 0.0, reward_class, policy_class, {});
  PrimalDualSettings s;
  s.lr_q = 0.0;
  s.lr_pi = settings.lr_pi;
  s.max_outer_iters = settings.max_iters;
  s.tol = settings.tol;
  s.polish_steps = 0;
  const Vector psi0 =
      settings.init_psi ? *settings.init_psi : Vector::Zero(policy_class.num_params());
  const auto res = primal_dual_optimize(model, out.reward.theta(), psi0, Vector(0), s);
  out.policy = policy_class;
  out.policy.set_params(res.psi);
  return out;
}

double GaussianPropensity::operator()(const Vector& a, const Vector& s) const {
  Vector x(s.size() + 1);
  x << s, 1.0;
  require(x.size() == weights.rows() && a.size() == weights.cols(),
          "propensity: dimension mismatch");
  const Vector mean = weights.transpose() * x;
  double dens = 1.0;
  for (Index k = 0; k < a.size(); ++k) {
    const double u = (a(k) - mean(k)) / std(k);
    dens *= std::exp(-0.5 * u * u) / (std(k) * std::sqrt(2.0 * kPi));
  }
  return dens;
}

GaussianPropensity fit_gaussian_propensity(const BanditDataset& data) {
  data.validate();
  const Index n = data.size();
  const Index ds = data.states.cols();
  Matrix x(n, ds + 1);
  x.leftCols(ds) = data.states;
  x.col(ds).setOnes();
  Matrix normal = x.transpose() * x;
  normal.diagonal().array() += 1e-10 * static_cast<double>(n);
  Eigen::LDLT<Matrix> ldlt(normal);
  require(ldlt.info() == Eigen::Success, "propensity fit: normal equations failed");
  GaussianPropensity p;
  const Matrix actions = data.actions;
  p.weights = ldlt.solve(x.transpose() * actions);
  const Matrix resid = actions - x * p.weights;
  p.std = (resid.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  for (Index k = 0; k < p.std.size(); ++k) {
    require(p.std(k) > 0.0, "propensity fit: degenerate action spread");
  }
  return p;
}

double default_smoothing_bandwidth(const BanditDataset& data, std::uint64_t seed) {
  const double med = median_heuristic(data.actions, seed);
  const double da = static_cast<double>(data.actions.cols());
  return med * std::pow(static_cast<double>(data.size()), -1.0 / (4.0 + da));
}

KernelSmoothingObjective::KernelSmoothingObjective(const BanditDataset& data,
                                                   const PropensityFn& propensity,
                                                   double bandwidth)
    : data_(data), h_(bandwidth) {
  data_.validate();
  require(bandwidth > 0.0 && std::isfinite(bandwidth), "kernel smoothing: h must be positive");
  weights_.resize(data_.size());
  for (Index i = 0; i < data_.size(); ++i) {
    double p = propensity(row_vec(data_.actions, i), row_vec(data_.states, i));
    require(std::isfinite(p), "kernel smoothing: non-finite propensity");
    if (p <= kMinPropensity) {
      p = kMinPropensity;
      ++clipped_;
    }
    weights_(i) = data_.rewards(i) / p;
  }
}

double KernelSmoothingObjective::kernel(const Vector& diff) const {
  double k = 1.0;
  for (Index j = 0; j < diff.size(); ++j) {
    const double u = diff(j) / h_;
    k *= std::exp(-0.5 * u * u) / (h_ * std::sqrt(2.0 * kPi));
  }
  return k;
}

double KernelSmoothingObjective::value(const ParamPolicy& policy) const {
  double total = 0.0;
  for (Index i = 0; i < data_.size(); ++i) {
    const Vector diff = row_vec(data_.actions, i) - policy.act(row_vec(data_.states, i));
    total += kernel(diff) * weights_(i);
  }
  return total / static_cast<double>(data_.size());
}

Vector KernelSmoothingObjective::gradient(const ParamPolicy& policy) const {
  Vector g = Vector::Zero(policy.num_params());
  for (Index i = 0; i < data_.size(); ++i) {
    const Vector s = row_vec(data_.states, i);
    const Vector diff = row_vec(data_.actions, i) - policy.act(s);
    const double c = kernel(diff) * weights_(i) / (h_ * h_);
    if (c == 0.0) continue;
    g += policy.vjp(s, c * diff);
  }
  return g / static_cast<double>(data_.size());
}

KernelSmoothingResult kernel_smoothing_baseline(const BanditDataset& data,
                                                const ParamPolicy& policy_class,
                                                std::optional<PropensityFn> propensity,
                                                std::optional<double> bandwidth,
                                                const PolicySearchSettings& settings) {
  data.validate();
  require(policy_class.state_dim() == data.states.cols() &&
              policy_class.action_dim() == data.actions.cols(),
          "kernel smoothing: policy dims do not match the data");
  PropensityFn p;
  if (propensity) {
    p = *propensity;
  } else {
    const GaussianPropensity fitted = fit_gaussian_propensity(data);
    p = [fitted](const Vector& a, const Vector& s) { return fitted(a, s); };
  }
  const double h = bandwidth ? *bandwidth : default_smoothing_bandwidth(data);
  const KernelSmoothingObjective objective(data, p, h);

  ParamPolicy pi = policy_class;
  pi.set_params(settings.init_psi ? *settings.init_psi : Vector::Zero(policy_class.num_params()));
  double v = objective.value(pi);
  double step = settings.lr_pi;
  for (int it = 0; it < settings.max_iters; ++it) {
    const Vector g = objective.gradient(pi);
    const double g2 = g.squaredNorm();
    if (!(g2 > 0.0) || !std::isfinite(g2)) break;
    const Vector psi = pi.params();
    double eta = std::min(settings.lr_pi, 2.0 * step);
    bool moved = false;
    ParamPolicy trial = pi;
    for (int b = 0; b < 40; ++b) {
      trial.set_params(psi + eta * g);
      const double tv = objective.value(trial);
      if (tv >= v + 1e-4 * eta * g2) {
        const double gain = tv - v;
        pi = trial;
        v = tv;
        moved = gain > settings.tol * std::max(1.0, std::abs(v));
        break;
      }
      eta *= 0.5;
    }
    step = eta;
    if (!moved) break;
  }
  KernelSmoothingResult out;
  out.policy = pi;
  out.bandwidth = h;
  out.clipped_propensities = objective.clipped_propensities();
  out.value_estimate = v;
  return out;
}

double DemandSurrogate::demand(const VectorRef& s, double price) const {
  require(coef.size() == 2 * s.size(), "demand surrogate: dimension mismatch");
  return std::clamp(coef.head(s.size()).dot(s) + price * coef.tail(s.size()).dot(s), 0.0, 1.0);
}

double DemandSurrogate::revenue(const ParamPolicy& policy, const Points& states) const {
  require(states.rows() > 0, "demand surrogate: empty state sample");
  double total = 0.0;
  for (Index i = 0; i < states.rows(); ++i) {
    const Vector s = row_vec(states, i);
    const double price = policy.act(s)(0);
    total += price * demand(s, price);
  }
  return total / static_cast<double>(states.rows());
}

DemandSurrogate fit_demand_surrogate(const Points& states, const Vector& prices,
                                     const Vector& accepted, double ridge) {
  const Index n = states.rows();
  require(n > 0 && prices.size() == n && accepted.size() == n,
          "demand surrogate: inconsistent inputs");
  const Index d = states.cols();
  Matrix x(n, 2 * d);
  for (Index i = 0; i < n; ++i) {
    x.row(i).head(d) = states.row(i);
    x.row(i).tail(d) = prices(i) * states.row(i);
  }
  Matrix normal = x.transpose() * x;
  normal.diagonal().array() += ridge * static_cast<double>(n);
  Eigen::LDLT<Matrix> ldlt(normal);
  require(ldlt.info() == Eigen::Success, "demand surrogate: normal equations failed");
  DemandSurrogate out;
  out.coef = ldlt.solve(x.transpose() * accepted);
  return out;
}

}  // namespace steel

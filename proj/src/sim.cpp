#include "steel/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>

#include "steel/json_util.hpp"

namespace steel {

namespace {

constexpr double kPi = 3.14159265358979323846;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Vector uniform_point(std::mt19937_64& rng, Index d, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector s(d);
  for (Index k = 0; k < d; ++k) s(k) = u(rng);
  return s;
}

bool inside_box(const VectorRef& a, const Vector& lo, const Vector& hi) {
  for (Index k = 0; k < a.size(); ++k) {
    if (a(k) < lo(k) || a(k) > hi(k)) return false;
  }
  return true;
}

ValueEstimate summarize_samples(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  ValueEstimate out;
  out.value = mean;
  out.std_error = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return out;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

const char* mode_name(SingularityMode m) {
  switch (m) {
    case SingularityMode::none: return "none";
    case SingularityMode::deterministic_target: return "deterministic_target";
    case SingularityMode::disjoint_support: return "disjoint_support";
  }
  return "none";
}

SingularityMode mode_from_name(const std::string& s) {
  if (s == "none") return SingularityMode::none;
  if (s == "deterministic_target") return SingularityMode::deterministic_target;
  if (s == "disjoint_support") return SingularityMode::disjoint_support;
  throw Error("unknown singularity mode '" + s + "'");
}

// Gradient ascent with backtracking on a smooth value function of psi.
Vector ascend(const std::function<double(const Vector&)>& value,
              const std::function<Vector(const Vector&)>& grad, Vector psi, int iters) {
  double v = value(psi);
  double step = 1.0;
  for (int it = 0; it < iters; ++it) {
    const Vector g = grad(psi);
    const double g2 = g.squaredNorm();
    if (!(g2 > 1e-24)) break;
    double eta = std::min(10.0, 2.0 * step);
    bool moved = false;
    for (int b = 0; b < 40; ++b) {
      const Vector trial = psi + eta * g;
      const double tv = value(trial);
      if (tv >= v + 1e-4 * eta * g2) {
        psi = trial;
        v = tv;
        moved = true;
        break;
      }
      eta *= 0.5;
    }
    step = eta;
    if (!moved) break;
  }
  return psi;
}

double search_policy_class(const ParamPolicy& policy_class,
                           const std::function<double(const Vector&)>& value,
                           const std::function<Vector(const Vector&)>& grad, int restarts,
                           std::uint64_t seed, int keep, int polish_iters) {
  require(restarts >= 1, "reference value: restarts must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 2.0);
  const Index p = policy_class.num_params();
  std::vector<std::pair<double, Vector>> scored;
  scored.emplace_back(value(Vector::Zero(p)), Vector::Zero(p));
  for (int r = 0; r < restarts; ++r) {
    Vector psi(p);
    for (Index k = 0; k < p; ++k) psi(k) = normal(rng);
    scored.emplace_back(value(psi), psi);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  double best = scored.front().first;
  const int top = std::min<int>(keep, static_cast<int>(scored.size()));
  for (int i = 0; i < top; ++i) {
    const Vector psi = ascend(value, grad, scored[static_cast<std::size_t>(i)].second, polish_iters);
    best = std::max(best, value(psi));
  }
  return best;
}

std::string points_key(const Points& p) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(p.size()) * sizeof(double); ++i) {
    h = (h ^ bytes[i]) * 1099511628211ULL;
  }
  return std::to_string(p.rows()) + "x" + std::to_string(p.cols()) + ":" + std::to_string(h);
}

std::mutex& cache_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, double>& reference_cache() {
  static std::map<std::string, double> c;
  return c;
}

nlohmann::json class_key(const ParamPolicy& policy_class) {
  nlohmann::json j = policy_class.to_json();
  j.erase("weights");
  return j;
}

}  // namespace

// ---------------------------------------------------------------- bandit

void BanditEnvSpec::validate() const {
  require(state_dim >= 1 && action_dim >= 1, "bandit spec: dims must be >= 1");
  require(state_hi > state_lo, "bandit spec: empty state box");
  require(mu_weights.rows() == action_dim && mu_weights.cols() == state_dim,
          "bandit spec: mu_weights must be dA x dS");
  require(mu_offset.size() == action_dim, "bandit spec: mu_offset must have length dA");
  require(action_lo.size() == action_dim && action_hi.size() == action_dim,
          "bandit spec: action box must have length dA");
  require((action_hi.array() > action_lo.array()).all(), "bandit spec: empty action box");
  require(behavior_weights.rows() == action_dim && behavior_weights.cols() == state_dim,
          "bandit spec: behavior_weights must be dA x dS");
  require(behavior_offset.size() == action_dim, "bandit spec: behavior_offset must have length dA");
  require(behavior_std > 0.0 && behavior_std_slope >= 0.0, "bandit spec: invalid behavior std");
  require(noise_std >= 0.0, "bandit spec: noise_std must be >= 0");
  if (mode == SingularityMode::disjoint_support) {
    require(target_lo.size() == action_dim && target_hi.size() == action_dim,
            "bandit spec: target box must have length dA");
    require((target_hi.array() > target_lo.array()).all(), "bandit spec: empty target box");
  }
}

double BanditEnvSpec::mean_reward(const VectorRef& s, const VectorRef& a) const {
  require(s.size() == state_dim && a.size() == action_dim, "bandit reward: dimension mismatch");
  const Vector mu = mu_weights * s + mu_offset;
  double r = std::clamp(1.0 - (a - mu).squaredNorm(), -1.0, 1.0);
  if (jump && s(0) > 1.0) r += 0.5;
  return r;
}

Vector BanditEnvSpec::reward_action_grad(const VectorRef& s, const VectorRef& a) const {
  const Vector mu = mu_weights * s + mu_offset;
  const Vector diff = a - mu;
  if (diff.squaredNorm() >= 2.0) return Vector::Zero(action_dim);
  return -2.0 * diff;
}

Vector BanditEnvSpec::behavior_mean(const VectorRef& s) const {
  return behavior_weights * s + behavior_offset;
}

Vector BanditEnvSpec::behavior_std_at(const VectorRef& s) const {
  return Vector::Constant(action_dim, behavior_std * (1.0 + behavior_std_slope * std::abs(s(0))));
}

double BanditEnvSpec::behavior_density(const VectorRef& a, const VectorRef& s) const {
  const Vector mean = behavior_mean(s);
  const Vector sd = behavior_std_at(s);
  double dens = 1.0;
  for (Index k = 0; k < action_dim; ++k) {
    const double u = (a(k) - mean(k)) / sd(k);
    dens *= std::exp(-0.5 * u * u) / (sd(k) * std::sqrt(2.0 * kPi));
  }
  if (mode != SingularityMode::disjoint_support) return dens;
  if (inside_box(a, target_lo, target_hi)) return 0.0;
  double inside = 1.0;
  for (Index k = 0; k < action_dim; ++k) {
    inside *= normal_cdf((target_hi(k) - mean(k)) / sd(k)) -
              normal_cdf((target_lo(k) - mean(k)) / sd(k));
  }
  return dens / std::max(1.0 - inside, 1e-300);
}

std::pair<Vector, Vector> BanditEnvSpec::policy_box() const {
  if (mode == SingularityMode::disjoint_support) return {target_lo, target_hi};
  return {action_lo, action_hi};
}

nlohmann::json BanditEnvSpec::to_json() const {
  nlohmann::json j;
  j["state_dim"] = state_dim;
  j["action_dim"] = action_dim;
  j["state_lo"] = state_lo;
  j["state_hi"] = state_hi;
  j["mu_weights"] = matrix_to_json(mu_weights);
  j["mu_offset"] = vector_to_json(mu_offset);
  j["jump"] = jump;
  j["action_lo"] = vector_to_json(action_lo);
  j["action_hi"] = vector_to_json(action_hi);
  j["behavior_weights"] = matrix_to_json(behavior_weights);
  j["behavior_offset"] = vector_to_json(behavior_offset);
  j["behavior_std"] = behavior_std;
  j["behavior_std_slope"] = behavior_std_slope;
  j["noise_std"] = noise_std;
  j["mode"] = mode_name(mode);
  if (mode == SingularityMode::disjoint_support) {
    j["target_lo"] = vector_to_json(target_lo);
    j["target_hi"] = vector_to_json(target_hi);
  }
  return j;
}

BanditEnvSpec BanditEnvSpec::from_json(const nlohmann::json& j) {
  BanditEnvSpec s = standard(mode_from_name(j.value("mode", std::string("deterministic_target"))));
  s.state_dim = j.value("state_dim", s.state_dim);
  s.action_dim = j.value("action_dim", s.action_dim);
  s.state_lo = j.value("state_lo", s.state_lo);
  s.state_hi = j.value("state_hi", s.state_hi);
  if (j.contains("mu_weights")) s.mu_weights = matrix_from_json(j.at("mu_weights"));
  if (j.contains("mu_offset")) s.mu_offset = vector_from_json(j.at("mu_offset"));
  s.jump = j.value("jump", s.jump);
  if (j.contains("action_lo")) s.action_lo = vector_from_json(j.at("action_lo"));
  if (j.contains("action_hi")) s.action_hi = vector_from_json(j.at("action_hi"));
  if (j.contains("behavior_weights")) s.behavior_weights = matrix_from_json(j.at("behavior_weights"));
  if (j.contains("behavior_offset")) s.behavior_offset = vector_from_json(j.at("behavior_offset"));
  s.behavior_std = j.value("behavior_std", s.behavior_std);
  s.behavior_std_slope = j.value("behavior_std_slope", s.behavior_std_slope);
  s.noise_std = j.value("noise_std", s.noise_std);
  if (j.contains("target_lo")) s.target_lo = vector_from_json(j.at("target_lo"));
  if (j.contains("target_hi")) s.target_hi = vector_from_json(j.at("target_hi"));
  s.validate();
  return s;
}

BanditEnvSpec BanditEnvSpec::standard(SingularityMode mode) {
  BanditEnvSpec s;
  s.mode = mode;
  s.mu_weights.resize(1, 2);
  s.mu_weights << 0.5, -0.3;
  s.mu_offset = Vector::Constant(1, 0.2);
  s.action_lo = Vector::Constant(1, -1.5);
  s.action_hi = Vector::Constant(1, 1.5);
  s.behavior_weights.resize(1, 2);
  s.behavior_weights << 0.2, 0.0;
  s.behavior_offset = Vector::Constant(1, 0.0);
  s.behavior_std = 0.6;
  if (mode == SingularityMode::disjoint_support) {
    s.target_lo = Vector::Constant(1, 0.5);
    s.target_hi = Vector::Constant(1, 1.5);
  }
  return s;
}

Points sample_bandit_states(const BanditEnvSpec& spec, Index n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, "sample size must be >= 1");
  std::mt19937_64 rng(seed);
  Points states(n, spec.state_dim);
  for (Index i = 0; i < n; ++i) {
    states.row(i) = uniform_point(rng, spec.state_dim, spec.state_lo, spec.state_hi).transpose();
  }
  return states;
}

BanditDataset generate_bandit(const BanditEnvSpec& spec, Index n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, "generate: N must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  BanditDataset data;
  data.states.resize(n, spec.state_dim);
  data.actions.resize(n, spec.action_dim);
  data.rewards.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Vector s = uniform_point(rng, spec.state_dim, spec.state_lo, spec.state_hi);
    const Vector mean = spec.behavior_mean(s);
    const Vector sd = spec.behavior_std_at(s);
    Vector a(spec.action_dim);
    for (int attempt = 0;; ++attempt) {
      require(attempt < 100000, "generate: rejection sampling failed");
      for (Index k = 0; k < spec.action_dim; ++k) a(k) = mean(k) + sd(k) * normal(rng);
      if (spec.mode != SingularityMode::disjoint_support ||
          !inside_box(a, spec.target_lo, spec.target_hi)) {
        break;
      }
    }
    data.states.row(i) = s.transpose();
    data.actions.row(i) = a.transpose();
    data.rewards(i) = spec.mean_reward(s, a) + spec.noise_std * normal(rng);
  }
  if (spec.mode == SingularityMode::disjoint_support) {
    for (Index i = 0; i < n; ++i) {
      require(!inside_box(row_vec(data.actions, i), spec.target_lo, spec.target_hi),
              "generate: behavior action inside the target box");
    }
  }
  data.validate();
  return data;
}

ValueEstimate policy_value_on(const BanditEnvSpec& spec, const ParamPolicy& policy,
                              const Points& states) {
  require(states.rows() > 0, "policy value: empty state sample");
  std::vector<double> values(static_cast<std::size_t>(states.rows()));
  for (Index i = 0; i < states.rows(); ++i) {
    const Vector s = row_vec(states, i);
    values[static_cast<std::size_t>(i)] = spec.mean_reward(s, policy.act(s));
  }
  return summarize_samples(values);
}

ValueEstimate mc_policy_value(const BanditEnvSpec& spec, const ParamPolicy& policy,
                              Index rollouts, std::uint64_t seed) {
  return policy_value_on(spec, policy, sample_bandit_states(spec, rollouts, seed));
}

double bandit_reference_value(const BanditEnvSpec& spec, const ParamPolicy& policy_class,
                              const Points& states, int restarts, std::uint64_t seed) {
  const std::string key = "bandit|" + spec.to_json().dump() + "|" + class_key(policy_class).dump() +
                          "|" + points_key(states) + "|" + std::to_string(restarts) + "|" +
                          std::to_string(seed);
  {
    std::lock_guard<std::mutex> lock(cache_mutex());
    const auto it = reference_cache().find(key);
    if (it != reference_cache().end()) return it->second;
  }
  ParamPolicy pi = policy_class;
  const auto value = [&](const Vector& psi) {
    pi.set_params(psi);
    return policy_value_on(spec, pi, states).value;
  };
  const auto grad = [&](const Vector& psi) {
    pi.set_params(psi);
    Vector g = Vector::Zero(psi.size());
    for (Index i = 0; i < states.rows(); ++i) {
      const Vector s = row_vec(states, i);
      g += pi.vjp(s, spec.reward_action_grad(s, pi.act(s)));
    }
    return Vector(g / static_cast<double>(states.rows()));
  };
  const double best = search_policy_class(policy_class, value, grad, restarts, seed, 8, 300);
  std::lock_guard<std::mutex> lock(cache_mutex());
  reference_cache()[key] = best;
  return best;
}

// ---------------------------------------------------------------- MDP

void MdpEnvSpec::validate() const {
  require(state_dim >= 1 && action_dim >= 1, "mdp spec: dims must be >= 1");
  require(a.rows() == state_dim && a.cols() == state_dim, "mdp spec: A must be dS x dS");
  require(b.rows() == state_dim && b.cols() == action_dim, "mdp spec: B must be dS x dA");
  const double radius = a.eigenvalues().cwiseAbs().maxCoeff();
  require(radius < 1.0, "mdp spec: spectral radius of A must be < 1");
  require(transition_std > 0.0, "mdp spec: transition_std must be positive");
  require(state_hi > state_lo, "mdp spec: empty state box");
  require(gain.rows() == action_dim && gain.cols() == state_dim, "mdp spec: K must be dA x dS");
  require(gain_offset.size() == action_dim, "mdp spec: k0 must have length dA");
  require(r_max > 0.0 && reward_noise_std >= 0.0, "mdp spec: invalid reward scale");
  require(gamma >= 0.0 && gamma < 1.0, "mdp spec: gamma must lie in [0, 1)");
  require(action_lo.size() == action_dim && action_hi.size() == action_dim,
          "mdp spec: action box must have length dA");
  require(behavior_weights.rows() == action_dim && behavior_weights.cols() == state_dim,
          "mdp spec: behavior_weights must be dA x dS");
  require(behavior_offset.size() == action_dim, "mdp spec: behavior_offset must have length dA");
  require(behavior_std > 0.0, "mdp spec: behavior_std must be positive");
  require(grid_resolution == 0 || (grid_resolution >= 2 && state_dim <= 2),
          "mdp spec: grid mode needs resolution >= 2 and dS <= 2");
}

double MdpEnvSpec::mean_reward(const VectorRef& s, const VectorRef& act) const {
  require(s.size() == state_dim && act.size() == action_dim, "mdp reward: dimension mismatch");
  const Vector target = gain * s + gain_offset;
  const double r = 1.0 - state_cost * s.squaredNorm() - (act - target).squaredNorm();
  return std::clamp(r, -r_max, r_max);
}

Vector MdpEnvSpec::behavior_mean(const VectorRef& s) const {
  return behavior_weights * s + behavior_offset;
}

Points MdpEnvSpec::grid() const {
  require(grid_resolution >= 2, "mdp spec: not a tabular chain");
  const Index g = grid_resolution;
  Index total = 1;
  for (Index k = 0; k < state_dim; ++k) total *= g;
  Points out(total, state_dim);
  for (Index idx = 0; idx < total; ++idx) {
    Index rem = idx;
    for (Index k = 0; k < state_dim; ++k) {
      const Index c = rem % g;
      rem /= g;
      out(idx, k) = state_lo + (state_hi - state_lo) * static_cast<double>(c) /
                                   static_cast<double>(g - 1);
    }
  }
  return out;
}

Vector MdpEnvSpec::transition_probs(const Points& grid_points, const VectorRef& s,
                                    const VectorRef& act) const {
  const Vector center = a * s + b * act;
  Vector logw(grid_points.rows());
  for (Index j = 0; j < grid_points.rows(); ++j) {
    logw(j) = -(row_vec(grid_points, j) - center).squaredNorm() /
              (2.0 * transition_std * transition_std);
  }
  Vector w = (logw.array() - logw.maxCoeff()).exp();
  return w / w.sum();
}

nlohmann::json MdpEnvSpec::to_json() const {
  nlohmann::json j;
  j["state_dim"] = state_dim;
  j["action_dim"] = action_dim;
  j["A"] = matrix_to_json(a);
  j["B"] = matrix_to_json(b);
  j["transition_std"] = transition_std;
  j["state_lo"] = state_lo;
  j["state_hi"] = state_hi;
  j["state_cost"] = state_cost;
  j["gain"] = matrix_to_json(gain);
  j["gain_offset"] = vector_to_json(gain_offset);
  j["r_max"] = r_max;
  j["reward_noise_std"] = reward_noise_std;
  j["gamma"] = gamma;
  j["action_lo"] = vector_to_json(action_lo);
  j["action_hi"] = vector_to_json(action_hi);
  j["behavior_weights"] = matrix_to_json(behavior_weights);
  j["behavior_offset"] = vector_to_json(behavior_offset);
  j["behavior_std"] = behavior_std;
  j["grid_resolution"] = grid_resolution;
  return j;
}

MdpEnvSpec MdpEnvSpec::from_json(const nlohmann::json& j) {
  MdpEnvSpec s = standard_tabular(j.value("grid_resolution", 11), j.value("gamma", 0.5));
  s.state_dim = j.value("state_dim", s.state_dim);
  s.action_dim = j.value("action_dim", s.action_dim);
  if (j.contains("A")) s.a = matrix_from_json(j.at("A"));
  if (j.contains("B")) s.b = matrix_from_json(j.at("B"));
  s.transition_std = j.value("transition_std", s.transition_std);
  s.state_lo = j.value("state_lo", s.state_lo);
  s.state_hi = j.value("state_hi", s.state_hi);
  s.state_cost = j.value("state_cost", s.state_cost);
  if (j.contains("gain")) s.gain = matrix_from_json(j.at("gain"));
  if (j.contains("gain_offset")) s.gain_offset = vector_from_json(j.at("gain_offset"));
  s.r_max = j.value("r_max", s.r_max);
  s.reward_noise_std = j.value("reward_noise_std", s.reward_noise_std);
  if (j.contains("action_lo")) s.action_lo = vector_from_json(j.at("action_lo"));
  if (j.contains("action_hi")) s.action_hi = vector_from_json(j.at("action_hi"));
  if (j.contains("behavior_weights")) s.behavior_weights = matrix_from_json(j.at("behavior_weights"));
  if (j.contains("behavior_offset")) s.behavior_offset = vector_from_json(j.at("behavior_offset"));
  s.behavior_std = j.value("behavior_std", s.behavior_std);
  s.validate();
  return s;
}

MdpEnvSpec MdpEnvSpec::standard_tabular(int grid_resolution, double gamma) {
  MdpEnvSpec s;
  s.a = Matrix::Constant(1, 1, 0.6);
  s.b = Matrix::Constant(1, 1, 0.4);
  s.gain = Matrix::Constant(1, 1, -0.5);
  s.gain_offset = Vector::Zero(1);
  s.action_lo = Vector::Constant(1, -1.0);
  s.action_hi = Vector::Constant(1, 1.0);
  s.behavior_weights = Matrix::Constant(1, 1, -0.3);
  s.behavior_offset = Vector::Zero(1);
  s.grid_resolution = grid_resolution;
  s.gamma = gamma;
  return s;
}

namespace {

struct MdpSampler {
  const MdpEnvSpec& spec;
  Points grid;

  explicit MdpSampler(const MdpEnvSpec& s) : spec(s) {
    if (spec.grid_resolution > 0) grid = spec.grid();
  }

  Vector initial(std::mt19937_64& rng) const {
    if (spec.grid_resolution > 0) {
      std::uniform_int_distribution<Index> pick(0, grid.rows() - 1);
      return row_vec(grid, pick(rng));
    }
    return uniform_point(rng, spec.state_dim, spec.state_lo, spec.state_hi);
  }

  Vector next(const Vector& s, const Vector& act, std::mt19937_64& rng) const {
    if (spec.grid_resolution > 0) {
      const Vector p = spec.transition_probs(grid, s, act);
      std::discrete_distribution<Index> pick(p.data(), p.data() + p.size());
      return row_vec(grid, pick(rng));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector out = spec.a * s + spec.b * act;
    for (Index k = 0; k < out.size(); ++k) out(k) += spec.transition_std * normal(rng);
    return out;
  }
};

}  // namespace

Points sample_mdp_initial_states(const MdpEnvSpec& spec, Index n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, "sample size must be >= 1");
  MdpSampler sampler(spec);
  std::mt19937_64 rng(seed);
  Points out(n, spec.state_dim);
  for (Index i = 0; i < n; ++i) out.row(i) = sampler.initial(rng).transpose();
  return out;
}

TransitionDataset generate_mdp(const MdpEnvSpec& spec, Index num_trajectories, Index horizon,
                               std::uint64_t seed) {
  spec.validate();
  require(num_trajectories >= 1 && horizon >= 1, "generate: N and T must be >= 1");
  MdpSampler sampler(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = num_trajectories * horizon;
  TransitionDataset data;
  data.states.resize(n, spec.state_dim);
  data.actions.resize(n, spec.action_dim);
  data.rewards.resize(n);
  data.next_states.resize(n, spec.state_dim);
  data.trajectory_offsets.assign(1, 0);
  Index row = 0;
  for (Index i = 0; i < num_trajectories; ++i) {
    Vector s = sampler.initial(rng);
    for (Index t = 0; t < horizon; ++t) {
      const Vector mean = spec.behavior_mean(s);
      Vector act(spec.action_dim);
      for (Index k = 0; k < spec.action_dim; ++k) act(k) = mean(k) + spec.behavior_std * normal(rng);
      const Vector next = sampler.next(s, act, rng);
      data.states.row(row) = s.transpose();
      data.actions.row(row) = act.transpose();
      data.rewards(row) = spec.mean_reward(s, act) + spec.reward_noise_std * normal(rng);
      data.next_states.row(row) = next.transpose();
      s = next;
      ++row;
    }
    data.trajectory_offsets.push_back(row);
  }
  data.validate();
  return data;
}

int default_horizon(double gamma) {
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  if (gamma == 0.0) return 1;
  return static_cast<int>(std::ceil(std::log(0.001) / std::log(gamma)));
}

ValueEstimate mc_policy_value(const MdpEnvSpec& spec, const ParamPolicy& policy, int horizon,
                              Index rollouts, std::uint64_t seed) {
  spec.validate();
  require(rollouts >= 1, "mc value: rollouts must be >= 1");
  require(spec.gamma == 0.0 || horizon >= default_horizon(spec.gamma),
          "mc value: horizon too short for gamma");
  MdpSampler sampler(spec);
  std::vector<double> returns(static_cast<std::size_t>(rollouts));
  for (Index i = 0; i < rollouts; ++i) {
    auto rng = stream(seed, static_cast<std::uint64_t>(i));
    Vector s = sampler.initial(rng);
    double total = 0.0, discount = 1.0;
    for (int t = 0; t <= horizon; ++t) {
      const Vector act = policy.act(s);
      total += discount * spec.mean_reward(s, act);
      discount *= spec.gamma;
      if (discount == 0.0) break;
      s = sampler.next(s, act, rng);
    }
    returns[static_cast<std::size_t>(i)] = (1.0 - spec.gamma) * total;
  }
  return summarize_samples(returns);
}

double TabularQ::q(const VectorRef& s, const VectorRef& act) const {
  double out = spec.mean_reward(s, act);
  if (spec.gamma > 0.0) out += spec.gamma * spec.transition_probs(grid, s, act).dot(values);
  return out;
}

double TabularQ::policy_value() const { return (1.0 - spec.gamma) * values.mean(); }

TabularQ tabular_q_oracle(const MdpEnvSpec& spec, const std::function<Vector(const Vector&)>& policy,
                          double tol, int max_iters) {
  spec.validate();
  require(spec.grid_resolution >= 2, "tabular oracle: spec is not a tabular chain");
  require(tol > 0.0, "tabular oracle: tol must be positive");
  TabularQ out;
  out.spec = spec;
  out.grid = spec.grid();
  const Index g = out.grid.rows();
  Matrix p(g, g);
  Vector r(g);
  for (Index i = 0; i < g; ++i) {
    const Vector s = row_vec(out.grid, i);
    const Vector act = policy(s);
    r(i) = spec.mean_reward(s, act);
    p.row(i) = spec.transition_probs(out.grid, s, act).transpose();
  }
  Vector v = Vector::Zero(g);
  for (int it = 0;; ++it) {
    if (it >= max_iters) throw Error("tabular oracle: no convergence within the iteration budget");
    const Vector next = r + spec.gamma * (p * v);
    const double change = (next - v).cwiseAbs().maxCoeff();
    out.sweep_changes.push_back(change);
    v = next;
    if (change < tol) break;
  }
  out.values = v;
  return out;
}

double mdp_reference_value(const MdpEnvSpec& spec, const ParamPolicy& policy_class, int restarts,
                           std::uint64_t seed) {
  const std::string key = "mdp|" + spec.to_json().dump() + "|" + class_key(policy_class).dump() +
                          "|" + std::to_string(restarts) + "|" + std::to_string(seed);
  {
    std::lock_guard<std::mutex> lock(cache_mutex());
    const auto it = reference_cache().find(key);
    if (it != reference_cache().end()) return it->second;
  }
  ParamPolicy pi = policy_class;
  const auto value = [&](const Vector& psi) {
    pi.set_params(psi);
    const ParamPolicy frozen = pi;
    return tabular_q_oracle(spec, [&](const Vector& s) { return frozen.act(s); }, 1e-10)
        .policy_value();
  };
  const auto grad = [&](const Vector& psi) {
    const double h = 1e-5;
    Vector g(psi.size());
    Vector x = psi;
    for (Index k = 0; k < psi.size(); ++k) {
      x(k) = psi(k) + h;
      const double up = value(x);
      x(k) = psi(k) - h;
      const double down = value(x);
      x(k) = psi(k);
      g(k) = (up - down) / (2.0 * h);
    }
    return g;
  };
  const double best = search_policy_class(policy_class, value, grad, restarts, seed, 4, 60);
  std::lock_guard<std::mutex> lock(cache_mutex());
  reference_cache()[key] = best;
  return best;
}

Regret regret(double reference_value, double policy_value) {
  Regret r;
  r.raw = reference_value - policy_value;
  r.clamped = std::max(0.0, r.raw);
  return r;
}

// ---------------------------------------------------------------- pricing

namespace {

// Centers and scales mapping latent standard normals to raw features.
const double kCenter[5] = {700.0, 25000.0, 0.003, 0.004, 60.0};
const double kScale[5] = {50.0, 8000.0, 0.0005, 0.0006, 12.0};

}  // namespace

void PricingEnvSpec::validate() const {
  require(demand_coef.size() == 5, "pricing spec: demand_coef must have 5 entries");
  require(behavior_price_coef.size() == 5, "pricing spec: behavior_price_coef must have 5 entries");
  require(beta > 0.0, "pricing spec: beta must be positive");
  require(behavior_price_std >= 0.0, "pricing spec: behavior_price_std must be >= 0");
}

double PricingEnvSpec::alpha(const VectorRef& z) const { return alpha0 + demand_coef.dot(z); }

double PricingEnvSpec::accept_prob(const VectorRef& z, double price) const {
  return std::clamp(alpha(z) - beta * price / 1000.0, 0.0, 1.0);
}

double PricingEnvSpec::optimal_price(const VectorRef& z) const {
  return std::max(0.0, alpha(z)) / (2.0 * beta) * 1000.0;
}

nlohmann::json PricingEnvSpec::to_json() const {
  return {{"alpha0", alpha0},
          {"demand_coef", vector_to_json(demand_coef)},
          {"beta", beta},
          {"behavior_price_mean", behavior_price_mean},
          {"behavior_price_std", behavior_price_std},
          {"behavior_price_coef", vector_to_json(behavior_price_coef)}};
}

PricingEnvSpec PricingEnvSpec::from_json(const nlohmann::json& j) {
  PricingEnvSpec s = standard();
  s.alpha0 = j.value("alpha0", s.alpha0);
  if (j.contains("demand_coef")) s.demand_coef = vector_from_json(j.at("demand_coef"));
  s.beta = j.value("beta", s.beta);
  s.behavior_price_mean = j.value("behavior_price_mean", s.behavior_price_mean);
  s.behavior_price_std = j.value("behavior_price_std", s.behavior_price_std);
  if (j.contains("behavior_price_coef")) {
    s.behavior_price_coef = vector_from_json(j.at("behavior_price_coef"));
  }
  s.validate();
  return s;
}

PricingEnvSpec PricingEnvSpec::standard() {
  PricingEnvSpec s;
  s.demand_coef.resize(5);
  s.demand_coef << -0.10, 0.02, -0.03, 0.05, 0.15;
  s.behavior_price_coef.resize(5);
  s.behavior_price_coef << -50.0, 100.0, 0.0, 50.0, 200.0;
  return s;
}

Vector pricing_latent_features(const LoanRecord& record) {
  const Vector raw = pricing_features(record);
  Vector z(5);
  for (Index k = 0; k < 5; ++k) z(k) = (raw(k) - kCenter[k]) / kScale[k];
  return z;
}

std::vector<LoanRecord> generate_loans(const PricingEnvSpec& spec, Index n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, "generate_loans: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<LoanRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Vector z(5);
    for (Index k = 0; k < 5; ++k) z(k) = normal(rng);
    LoanRecord rec;
    rec.fico = kCenter[0] + kScale[0] * z(0);
    rec.loan_amount_approved = std::max(5000.0, kCenter[1] + kScale[1] * z(1));
    rec.prime_rate = std::max(0.0005, kCenter[2] + kScale[2] * z(2));
    rec.competitor_rate = std::max(0.0005, kCenter[3] + kScale[3] * z(3));
    rec.term = static_cast<int>(std::clamp(std::lround(kCenter[4] + kScale[4] * z(4)), 12L, 84L));
    const Vector latent = pricing_latent_features(rec);
    double price = spec.behavior_price_mean + spec.behavior_price_coef.dot(latent) +
                   spec.behavior_price_std * normal(rng);
    price = std::clamp(price, 50.0, 9000.0);
    // A small share of mispriced offers exercises the outlier filter.
    if (unif(rng) < 0.005) price = 12000.0 + 1000.0 * unif(rng);
    double annuity = 0.0;
    for (int t = 1; t <= rec.term; ++t) annuity += std::pow(1.0 + rec.prime_rate, -t);
    rec.monthly_payment = (price + rec.loan_amount_approved) / annuity;
    rec.accepted = unif(rng) < spec.accept_prob(latent, price);
    out.push_back(rec);
  }
  return out;
}

}  // namespace steel

#include "steel/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "steel/adaptive.hpp"
#include "steel/bandit.hpp"
#include "steel/sim.hpp"
#include "steel/steel.hpp"

namespace fs = std::filesystem;

namespace steel {

namespace {

using nlohmann::json;

const std::set<std::string> kMethodIds = {"steel", "bandit_steel", "adaptive", "regression",
                                          "kernel_smoothing"};

const std::set<std::string> kCommonKeys = {"q_features", "policy_features", "q_clip",
                                           "init_states"};
const std::set<std::string> kSteelKeys = {
    "zeta",         "eps1",       "eps2",          "kappa1",   "kappa2",       "w_radius",
    "lr_q",         "lr_pi",      "lr_rho1",       "lr_rho2",  "inner_q_steps", "max_outer_iters",
    "tol",          "rho_max",    "polish_steps",  "precondition", "nystrom_cap", "bandwidth",
    "two_phase_c"};
const std::set<std::string> kAdaptiveKeys = {"wmax", "grid_points", "stage0_eps2",
                                             "stage0_eps2_factor", "kde_bandwidth"};
const std::set<std::string> kSearchKeys = {"lr_pi", "max_iters", "tol", "ridge"};
const std::set<std::string> kSmoothingKeys = {"propensity", "bandwidth"};

std::set<std::string> allowed_keys(const std::string& id) {
  std::set<std::string> keys = kCommonKeys;
  auto add = [&](const std::set<std::string>& more) { keys.insert(more.begin(), more.end()); };
  if (id == "steel" || id == "bandit_steel") add(kSteelKeys);
  if (id == "adaptive") {
    add(kSteelKeys);
    add(kAdaptiveKeys);
  }
  if (id == "regression") add(kSearchKeys);
  if (id == "kernel_smoothing") {
    add(kSearchKeys);
    add(kSmoothingKeys);
    keys.erase("q_features");
    keys.erase("q_clip");
    keys.erase("ridge");
  }
  return keys;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, N, T, purpose).
std::uint64_t stream_seed(const Cell& cell, std::uint64_t purpose) {
  std::uint64_t h = splitmix(cell.seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(cell.n));
  h = splitmix(h ^ static_cast<std::uint64_t>(cell.horizon));
  return splitmix(h ^ purpose);
}

FeatureMap feature_map(const json& j, Index input_dim, int default_degree) {
  if (j.is_null()) return FeatureMap::polynomial(input_dim, default_degree);
  const std::string kind = j.value("kind", std::string("polynomial"));
  if (kind == "polynomial") return FeatureMap::polynomial(input_dim, j.value("degree", default_degree));
  if (kind == "random_fourier")
    return FeatureMap::random_fourier(input_dim, j.value("num_features", Index{50}),
                                      j.value("bandwidth", 1.0), j.value("seed", std::uint64_t{0}));
  throw Error("unknown feature kind '" + kind + "'");
}

json param(const json& params, const std::string& key) {
  return params.contains(key) ? params.at(key) : json();
}

// Everything a cell needs about its environment, built once per config.
struct Env {
  std::string kind;
  BanditEnvSpec bandit;
  MdpEnvSpec mdp;
  PricingEnvSpec pricing;
  std::optional<std::string> dataset;
  double price_unit = 1000.0;
  double price_lo = 0.0;
  double price_hi = 5000.0;

  Index state_dim() const {
    if (kind == "bandit") return bandit.state_dim;
    if (kind == "mdp") return mdp.state_dim;
    return 6;
  }
  Index action_dim() const {
    if (kind == "bandit") return bandit.action_dim;
    if (kind == "mdp") return mdp.action_dim;
    return 1;
  }
  double gamma() const { return kind == "mdp" ? mdp.gamma : 0.0; }
  double default_clip() const {
    if (kind == "bandit") return 2.0 * bandit.r_max();
    if (kind == "mdp") return mdp.r_max / (1.0 - mdp.gamma);
    return kPriceOutlierThreshold / price_unit;
  }
  std::pair<Vector, Vector> box() const {
    if (kind == "bandit") return bandit.policy_box();
    if (kind == "mdp") return {mdp.action_lo, mdp.action_hi};
    Vector lo(1), hi(1);
    lo << price_lo / price_unit;
    hi << price_hi / price_unit;
    return {lo, hi};
  }
};

Env make_env(const json& j) {
  Env env;
  env.kind = j.at("kind").get<std::string>();
  const json spec = j.value("spec", json::object());
  if (env.kind == "bandit") {
    env.bandit = BanditEnvSpec::from_json(spec);
    env.bandit.validate();
  } else if (env.kind == "mdp") {
    env.mdp = MdpEnvSpec::from_json(spec);
    env.mdp.validate();
    require(env.mdp.grid_resolution > 0, "config: the mdp environment must be in grid mode");
  } else if (env.kind == "pricing") {
    env.pricing = spec.empty() ? PricingEnvSpec::standard() : PricingEnvSpec::from_json(spec);
    env.pricing.validate();
    if (j.contains("dataset")) env.dataset = j.at("dataset").get<std::string>();
    env.price_unit = j.value("price_unit", 1000.0);
    env.price_lo = j.value("price_lo", 0.0);
    env.price_hi = j.value("price_hi", 5000.0);
    require(env.price_unit > 0.0, "config: price_unit must be positive");
    require(env.price_hi > env.price_lo, "config: price_hi must exceed price_lo");
  } else {
    throw Error("config: unknown env kind '" + env.kind + "'");
  }
  return env;
}

ParamPolicy policy_class(const Env& env, const json& params) {
  const auto [lo, hi] = env.box();
  return ParamPolicy(feature_map(param(params, "policy_features"), env.state_dim(), 1), lo, hi);
}

ParamQ q_class(const Env& env, const json& params) {
  const bool pricing = env.kind == "pricing";
  const Index din = env.state_dim() + env.action_dim();
  const double clip = params.value("q_clip", env.default_clip());
  return ParamQ(feature_map(param(params, "q_features"), din, pricing ? 1 : 2), env.state_dim(),
                env.action_dim(), clip, pricing);
}

SteelConfig steel_config(const Env& env, const json& p, const Cell& cell) {
  SteelConfig c;
  c.gamma = env.gamma();
  // The default radii are infeasible at zeta = 1e-3 on the synthetic
  // environments; pricing keeps the published tuning.
  c.zeta = p.value("zeta", env.kind == "pricing" ? 1e-3 : 1e-2);
  if (p.contains("eps1")) c.eps1 = p.at("eps1").get<double>();
  if (p.contains("eps2")) c.eps2 = p.at("eps2").get<double>();
  if (env.kind == "pricing") {
    if (!c.eps1) c.eps1 = std::sqrt(13.0);
    if (!c.eps2) c.eps2 = std::sqrt(16.0);
  }
  c.kappa1 = p.value("kappa1", c.kappa1);
  c.kappa2 = p.value("kappa2", c.kappa2);
  c.w_radius = p.value("w_radius", c.w_radius);
  c.lr_q = p.value("lr_q", c.lr_q);
  c.lr_pi = p.value("lr_pi", c.lr_pi);
  c.lr_rho1 = p.value("lr_rho1", c.lr_rho1);
  c.lr_rho2 = p.value("lr_rho2", c.lr_rho2);
  c.inner_q_steps = p.value("inner_q_steps", c.inner_q_steps);
  c.max_outer_iters = p.value("max_outer_iters", c.max_outer_iters);
  c.tol = p.value("tol", c.tol);
  c.rho_max = p.value("rho_max", c.rho_max);
  c.polish_steps = p.value("polish_steps", c.polish_steps);
  c.precondition = p.value("precondition", c.precondition);
  c.nystrom_cap = p.value("nystrom_cap", c.nystrom_cap);
  if (p.contains("bandwidth")) c.bandwidth = p.at("bandwidth").get<double>();
  c.two_phase_c = p.value("two_phase_c", c.two_phase_c);
  c.seed = cell.seed;
  c.q_class = q_class(env, p);
  c.policy_class = policy_class(env, p);
  return c;
}

PolicySearchSettings search_settings(const json& p) {
  PolicySearchSettings s;
  s.lr_pi = p.value("lr_pi", s.lr_pi);
  s.max_iters = p.value("max_iters", s.max_iters);
  s.tol = p.value("tol", s.tol);
  return s;
}

// Training data of one cell.
struct CellData {
  TransitionDataset transitions;
  BanditDataset bandit;  // bandit and pricing only
  Points init_states;
  std::optional<FeatureStandardizer> standardizer;  // pricing only
};

std::vector<LoanRecord> pricing_records(const ExperimentConfig& cfg, const Env& env,
                                        const Cell& cell) {
  const std::string& method = cfg.methods.at(cell.method).name;
  std::vector<LoanRecord> records;
  if (env.dataset) {
    records = load_loan_records(*env.dataset);
    if (cell.n < static_cast<Index>(records.size())) {
      std::mt19937_64 rng(stream_seed(cell, 1));
      std::shuffle(records.begin(), records.end(), rng);
      records.resize(static_cast<std::size_t>(cell.n));
    }
    return records;
  }
  // Without a dataset the stand-in market is written out as a loan CSV and
  // read back, so the run goes through the same ingestion path.
  const fs::path dir = fs::path(cfg.output_dir) / "data" / cfg.hash_hex();
  fs::create_directories(dir);
  const fs::path file =
      dir / (method + "-loans-N" + std::to_string(cell.n) + "-s" + std::to_string(cell.seed) + ".csv");
  save_loan_records(generate_loans(env.pricing, cell.n, stream_seed(cell, 1)), file.string());
  return load_loan_records(file.string());
}

CellData make_data(const ExperimentConfig& cfg, const Env& env, const Cell& cell,
                   const json& params) {
  CellData d;
  if (env.kind == "bandit") {
    d.bandit = generate_bandit(env.bandit, cell.n, stream_seed(cell, 1));
    d.transitions = d.bandit.as_transitions();
    d.init_states = sample_bandit_states(env.bandit, params.value("init_states", Index{512}),
                                         stream_seed(cell, 2));
  } else if (env.kind == "mdp") {
    d.transitions = generate_mdp(env.mdp, cell.n, cell.horizon, stream_seed(cell, 1));
    d.init_states = sample_mdp_initial_states(env.mdp, params.value("init_states", Index{256}),
                                              stream_seed(cell, 2));
  } else {
    const PricingDataset pd = build_pricing_dataset(pricing_records(cfg, env, cell));
    d.bandit = pd.data;
    d.bandit.actions /= env.price_unit;
    d.bandit.rewards /= env.price_unit;
    d.transitions = d.bandit.as_transitions();
    d.init_states = d.bandit.states;  // nu is the empirical feature distribution
    d.standardizer = pd.standardizer;
  }
  return d;
}

struct Trained {
  ParamPolicy policy;
  json result;
};

Trained train(const Env& env, const MethodSpec& m, const CellData& d, const Cell& cell) {
  const json& p = m.params;
  if (m.id == "steel" || m.id == "bandit_steel") {
    SteelConfig c = steel_config(env, p, cell);
    c.init_states = d.init_states;
    SteelResult r;
    if (m.id == "bandit_steel") {
      require(env.kind != "mdp", "bandit_steel needs single-step data");
      r = bandit_steel(d.bandit, c);
    } else {
      r = steel_optimize(d.transitions, c);
    }
    return {r.policy, r.to_json()};
  }
  if (m.id == "adaptive") {
    AdaptiveConfig a;
    a.steel = steel_config(env, p, cell);
    a.steel.init_states = d.init_states;
    a.wmax = p.value("wmax", a.wmax);
    a.grid_points = p.value("grid_points", a.grid_points);
    if (p.contains("stage0_eps2")) a.stage0_eps2 = p.at("stage0_eps2").get<double>();
    if (p.contains("stage0_eps2_factor"))
      a.stage0_eps2_factor = p.at("stage0_eps2_factor").get<double>();
    if (p.contains("kde_bandwidth")) a.kde_bandwidth = p.at("kde_bandwidth").get<double>();
    const AdaptiveResult r = adaptive_steel(d.transitions, a);
    return {r.result.policy, r.to_json()};
  }
  require(env.kind != "mdp", m.id + " needs single-step data");
  const ParamPolicy pc = policy_class(env, p);
  if (m.id == "regression") {
    const RegressionResult r = regression_baseline(d.bandit, q_class(env, p), pc, d.init_states,
                                                   search_settings(p), p.value("ridge", 1e-10));
    return {r.policy, {{"policy", r.policy.to_json()}, {"reward", r.reward.to_json()}}};
  }
  // kernel_smoothing
  const std::string prop = p.value("propensity", std::string("estimated"));
  std::optional<PropensityFn> fn;
  if (prop == "true") {
    require(env.kind == "bandit", "the true propensity is only known for the bandit env");
    const BanditEnvSpec spec = env.bandit;
    fn = [spec](const Vector& a, const Vector& s) { return spec.behavior_density(a, s); };
  } else {
    require(prop == "estimated", "propensity must be 'estimated' or 'true'");
  }
  std::optional<double> bw;
  if (p.contains("bandwidth")) bw = p.at("bandwidth").get<double>();
  const KernelSmoothingResult r =
      kernel_smoothing_baseline(d.bandit, pc, fn, bw, search_settings(p));
  return {r.policy,
          {{"policy", r.policy.to_json()},
           {"bandwidth", r.bandwidth},
           {"clipped_propensities", r.clipped_propensities},
           {"value_estimate", r.value_estimate}}};
}

struct Score {
  double value = 0.0;
  double std_error = 0.0;
  double reference = 0.0;
};

int restarts_for(const ExperimentConfig& cfg, const Env& env) {
  if (cfg.eval.restarts > 0) return cfg.eval.restarts;
  return env.kind == "mdp" ? 64 : 512;
}

Score score(const ExperimentConfig& cfg, const Env& env, const MethodSpec& m,
            const ParamPolicy& policy, const CellData& d) {
  Score s;
  if (env.kind == "bandit") {
    const Points states = sample_bandit_states(env.bandit, cfg.eval.states, cfg.eval.seed);
    const ValueEstimate v = policy_value_on(env.bandit, policy, states);
    s.value = v.value;
    s.std_error = v.std_error;
    s.reference = bandit_reference_value(env.bandit, policy_class(env, m.params), states,
                                         restarts_for(cfg, env), 0);
  } else if (env.kind == "mdp") {
    const TabularQ oracle =
        tabular_q_oracle(env.mdp, [&](const Vector& st) { return policy.act(st); });
    s.value = oracle.policy_value();
    s.reference =
        mdp_reference_value(env.mdp, policy_class(env, m.params), restarts_for(cfg, env), 0);
  } else {
    // Expected revenue in dollars on fresh records against the pointwise
    // revenue-maximizing price.
    const auto records = generate_loans(env.pricing, cfg.eval.states, cfg.eval.seed);
    Vector rev(static_cast<Index>(records.size()));
    double best = 0.0;
    Vector state(6);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const Vector z = pricing_latent_features(records[i]);
      state.head(5) = d.standardizer->apply(pricing_features(records[i]));
      state(5) = 1.0;
      const double price = policy.act(state)(0) * env.price_unit;
      rev(static_cast<Index>(i)) = price * env.pricing.accept_prob(z, price);
      const double p_opt = env.pricing.optimal_price(z);
      best += p_opt * env.pricing.accept_prob(z, p_opt);
    }
    const double k = static_cast<double>(rev.size());
    s.value = rev.mean();
    s.std_error = k > 1 ? std::sqrt((rev.array() - s.value).square().sum() / (k - 1.0) / k) : 0.0;
    s.reference = best / k;
  }
  return s;
}

std::string record_key(const std::string& hash, const std::string& method, Index n, Index t,
                       std::uint64_t seed) {
  return hash + "|" + method + "|" + std::to_string(n) + "|" + std::to_string(t) + "|" +
         std::to_string(seed);
}

// Serializes appends to the results file from concurrent workers.
class Appender {
 public:
  explicit Appender(const fs::path& path) : out_(path, std::ios::app) {
    if (!out_) throw Error("cannot open '" + path.string() + "' for appending");
  }
  void append(const json& line) {
    std::lock_guard<std::mutex> lock(mutex_);
    out_ << line.dump() << '\n';
    out_.flush();
  }

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string ExperimentConfig::env_kind() const { return env.value("kind", std::string()); }

void ExperimentConfig::validate() const {
  require(env.is_object() && env.contains("kind"), "config: env.kind is required");
  const Env e = make_env(env);
  require(!methods.empty(), "config: no methods");
  require(!seeds.empty(), "config: no seeds");
  require(!sample_sizes.empty(), "config: no sample sizes");
  require(!horizons.empty(), "config: no horizons");
  for (Index n : sample_sizes) require(n >= 2, "config: sample sizes must be >= 2");
  for (Index t : horizons) require(t >= 1, "config: horizons must be >= 1");
  if (e.kind != "mdp")
    require(horizons.size() == 1 && horizons[0] == 1, "config: horizons apply to the mdp env only");
  require(eval.states >= 1, "config: eval.states must be >= 1");
  std::set<std::string> names;
  for (const auto& m : methods) {
    require(kMethodIds.count(m.id) == 1, "config: unknown method '" + m.id + "'");
    require(names.insert(m.name).second, "config: duplicate method name '" + m.name + "'");
    require(m.params.is_object(), "config: method params must be an object");
    const auto keys = allowed_keys(m.id);
    for (const auto& [k, v] : m.params.items())
      require(keys.count(k) == 1, "config: method '" + m.name + "' has unknown key '" + k + "'");
    if (e.kind == "mdp")
      require(m.id == "steel" || m.id == "adaptive",
              "config: method '" + m.id + "' needs single-step data");
  }
}

json ExperimentConfig::to_json() const {
  json ms = json::array();
  for (const auto& m : methods) ms.push_back({{"id", m.id}, {"name", m.name}, {"params", m.params}});
  return {{"env", env},
          {"methods", ms},
          {"seeds", seeds},
          {"sample_sizes", sample_sizes},
          {"horizons", horizons},
          {"eval", {{"states", eval.states}, {"seed", eval.seed}, {"restarts", eval.restarts}}},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::set<std::string> top = {"env",      "methods", "seeds",     "sample_sizes",
                                            "horizons", "eval",    "output_dir"};
  require(j.is_object(), "config: expected a JSON object");
  for (const auto& [k, v] : j.items()) require(top.count(k) == 1, "config: unknown key '" + k + "'");
  ExperimentConfig c;
  c.env = j.at("env");
  for (const auto& m : j.at("methods")) {
    MethodSpec s;
    if (m.is_string()) {
      s.id = m.get<std::string>();
    } else {
      s.id = m.at("id").get<std::string>();
      s.name = m.value("name", std::string());
      s.params = m.value("params", json::object());
    }
    if (s.name.empty()) s.name = s.id;
    c.methods.push_back(std::move(s));
  }
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.sample_sizes = j.at("sample_sizes").get<std::vector<Index>>();
  if (j.contains("horizons")) c.horizons = j.at("horizons").get<std::vector<Index>>();
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    c.eval.states = e.value("states", c.eval.states);
    c.eval.seed = e.value("seed", c.eval.seed);
    c.eval.restarts = e.value("restarts", c.eval.restarts);
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw Error("config '" + path + "': " + e.what());
  }
  return from_json(j);
}

std::uint64_t ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  return fnv1a(j.dump());
}

std::string ExperimentConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

json ResultRecord::to_json() const {
  return {{"method", method},
          {"N", n},
          {"T", horizon},
          {"seed", seed},
          {"regret", regret},
          {"regret_clamped", regret_clamped},
          {"value", value},
          {"stderr", std_error},
          {"reference", reference},
          {"wall_clock_ms", wall_clock_ms},
          {"config_hash", config_hash}};
}

ResultRecord ResultRecord::from_json(const json& j) {
  ResultRecord r;
  r.method = j.at("method").get<std::string>();
  r.n = j.at("N").get<Index>();
  r.horizon = j.value("T", Index{1});
  r.seed = j.at("seed").get<std::uint64_t>();
  r.regret = j.at("regret").get<double>();
  r.regret_clamped = j.value("regret_clamped", std::max(r.regret, 0.0));
  r.value = j.at("value").get<double>();
  r.std_error = j.value("stderr", 0.0);
  r.reference = j.value("reference", 0.0);
  r.wall_clock_ms = j.value("wall_clock_ms", 0.0);
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

std::string CellOutput::file_contents() const {
  json rec = record.to_json();
  rec.erase("wall_clock_ms");
  return json{{"record", rec}, {"result", result}}.dump(1) + "\n";
}

std::vector<Cell> expand_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m)
    for (Index n : cfg.sample_sizes)
      for (Index t : cfg.horizons)
        for (std::uint64_t s : cfg.seeds) cells.push_back({m, n, t, s});
  return cells;
}

std::string cell_file_name(const ExperimentConfig& cfg, const Cell& cell) {
  const auto& m = cfg.methods.at(cell.method);
  return (fs::path(cfg.output_dir) / "cells" / cfg.hash_hex() /
          (m.name + "-N" + std::to_string(cell.n) + "-T" + std::to_string(cell.horizon) + "-s" +
           std::to_string(cell.seed) + ".json"))
      .string();
}

CellOutput run_cell(const ExperimentConfig& cfg, const Cell& cell) {
  const auto start = std::chrono::steady_clock::now();
  const Env env = make_env(cfg.env);
  const MethodSpec& m = cfg.methods.at(cell.method);
  const CellData data = make_data(cfg, env, cell, m.params);
  const Trained trained = train(env, m, data, cell);
  const double elapsed =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const Score sc = score(cfg, env, m, trained.policy, data);

  CellOutput out;
  out.record.method = m.name;
  out.record.n = cell.n;
  out.record.horizon = cell.horizon;
  out.record.seed = cell.seed;
  const Regret rg = regret(sc.reference, sc.value);
  out.record.regret = rg.raw;
  out.record.regret_clamped = rg.clamped;
  out.record.value = sc.value;
  out.record.std_error = sc.std_error;
  out.record.reference = sc.reference;
  out.record.config_hash = cfg.hash_hex();
  out.result = trained.result;
  out.record.wall_clock_ms = elapsed;  // data and training; scoring excluded
  return out;
}

RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  const fs::path results = dir / "results.jsonl";
  const std::string hash = cfg.hash_hex();
  if (opts.overwrite) {
    std::error_code ec;
    fs::remove(results, ec);
    fs::remove_all(dir / "cells" / hash, ec);
  }

  std::set<std::string> done;
  if (fs::exists(results))
    for (const auto& r : read_records(results.string()))
      done.insert(record_key(r.config_hash, r.method, r.n, r.horizon, r.seed));

  RunReport report;
  std::vector<Cell> todo;
  for (const Cell& c : expand_cells(cfg)) {
    const auto& m = cfg.methods[c.method];
    if (done.count(record_key(hash, m.name, c.n, c.horizon, c.seed))) {
      ++report.skipped;
    } else {
      todo.push_back(c);
    }
  }

  Appender appender(results);
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<Index> added{0}, failed{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const Cell& c = todo[i];
      const std::string label = cfg.methods[c.method].name + " N=" + std::to_string(c.n) +
                                " T=" + std::to_string(c.horizon) +
                                " seed=" + std::to_string(c.seed);
      try {
        const CellOutput out = run_cell(cfg, c);
        write_text(cell_file_name(cfg, c), out.file_contents());
        appender.append(out.record.to_json());
        ++added;
        if (!opts.quiet) {
          std::lock_guard<std::mutex> lock(log_mutex);
          std::cerr << "[done] " << label << " regret=" << out.record.regret << " ("
                    << static_cast<long>(out.record.wall_clock_ms) << " ms)\n";
        }
      } catch (const std::exception& e) {
        ++failed;
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "[failed] " << label << ": " << e.what() << "\n";
      }
    }
  };
  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  report.added = added;
  report.failed = failed;
  return report;
}

std::vector<ResultRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<ResultRecord> out;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(ResultRecord::from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SummaryRow> summarize_records(const std::vector<ResultRecord>& records) {
  using Key = std::tuple<std::string, std::string, Index, Index>;
  std::map<Key, std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) groups[{r.config_hash, r.method, r.n, r.horizon}].push_back(&r);

  auto mean_se = [](const std::vector<double>& x) {
    const double k = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / k;
    if (x.size() < 2) return std::pair{mean, 0.0};
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, std::sqrt(ss / (k - 1.0) / k)};
  };

  std::vector<SummaryRow> rows;
  for (const auto& [key, recs] : groups) {
    std::vector<double> reg, val;
    for (const auto* r : recs) {
      reg.push_back(r->regret);
      val.push_back(r->value);
    }
    SummaryRow row;
    std::tie(row.config_hash, row.method, row.n, row.horizon) = key;
    row.seeds = static_cast<Index>(recs.size());
    std::tie(row.mean_regret, row.se_regret) = mean_se(reg);
    std::tie(row.mean_value, row.se_value) = mean_se(val);
    row.single_seed = recs.size() == 1;
    rows.push_back(row);
  }
  return rows;
}

std::string summarize(const std::string& output_dir) {
  const fs::path results = fs::path(output_dir) / "results.jsonl";
  require(fs::exists(results), "no results.jsonl in '" + output_dir + "'");
  const auto records = read_records(results.string());
  require(!records.empty(), "'" + results.string() + "' holds no records");
  const auto rows = summarize_records(records);

  std::ostringstream csv;
  csv.precision(17);
  csv << "config_hash,method,N,T,seeds,mean_regret,se_regret,mean_value,se_value,single_seed\n";
  for (const auto& r : rows)
    csv << r.config_hash << ',' << r.method << ',' << r.n << ',' << r.horizon << ',' << r.seeds
        << ',' << r.mean_regret << ',' << r.se_regret << ',' << r.mean_value << ',' << r.se_value
        << ',' << (r.single_seed ? 1 : 0) << '\n';
  const fs::path out = fs::path(output_dir) / "summary.csv";
  write_text(out, csv.str());
  return out.string();
}

}  // namespace steel

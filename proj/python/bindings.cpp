// Python bindings. Structured results cross the boundary as JSON text and
// are decoded by the package wrapper; arrays go through Eigen.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "steel/bandit.hpp"
#include "steel/experiment.hpp"
#include "steel/kernel.hpp"
#include "steel/residual.hpp"
#include "steel/sim.hpp"
#include "steel/steel.hpp"

namespace py = pybind11;
using namespace steel;
using nlohmann::json;

namespace {

KernelSpec gaussian(double bandwidth) {
  KernelSpec k{KernelFamily::gaussian, bandwidth};
  k.validate();
  return k;
}

py::tuple bandit_arrays(const BanditDataset& d) {
  return py::make_tuple(d.states, d.actions, d.rewards);
}

BanditDataset bandit_from(const Points& states, const Points& actions, const Vector& rewards) {
  BanditDataset d{states, actions, rewards};
  d.validate();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pessimistic batch policy learning";

  py::register_exception<Error>(m, "SteelError", PyExc_ValueError);

  m.def("gram", [](const Points& p, double bw) { return gram(gaussian(bw), p).entries; },
        py::arg("points"), py::arg("bandwidth"));
  m.def("median_heuristic", [](const Points& p, std::uint64_t seed) { return median_heuristic(p, seed); },
        py::arg("points"), py::arg("seed") = 0);
  m.def(
      "mmd2",
      [](const Points& a, const Points& b, double bw, bool unbiased) {
        return mmd2(a, b, gaussian(bw), unbiased ? MmdEstimator::unbiased : MmdEstimator::biased);
      },
      py::arg("a"), py::arg("b"), py::arg("bandwidth"), py::arg("unbiased") = false);
  m.def(
      "rkhs_norm_sq",
      [](const Points& p, const Vector& y, double bw, double zeta) {
        return rkhs_norm_sq(gram(gaussian(bw), p), y, zeta);
      },
      py::arg("points"), py::arg("y"), py::arg("bandwidth"), py::arg("zeta"));
  m.def(
      "krr_predict",
      [](const Points& p, const Vector& y, double bw, double zeta, const Points& at) {
        const KrrFit fit = krr_fit(gram(gaussian(bw), p), y, zeta);
        Vector out(at.rows());
        for (Index i = 0; i < at.rows(); ++i) out(i) = krr_eval(fit, row_vec(at, i));
        return out;
      },
      py::arg("points"), py::arg("y"), py::arg("bandwidth"), py::arg("zeta"), py::arg("at"));
  m.def("default_radii", [](Index n) { return default_radii(n); }, py::arg("n"));

  m.def("standard_bandit_spec", [](const std::string& mode) {
    return BanditEnvSpec::from_json({{"mode", mode}}).to_json().dump();
  }, py::arg("mode") = "deterministic_target");
  m.def(
      "generate_bandit",
      [](const std::string& spec, Index n, std::uint64_t seed) {
        return bandit_arrays(generate_bandit(BanditEnvSpec::from_json(json::parse(spec)), n, seed));
      },
      py::arg("spec"), py::arg("n"), py::arg("seed"));
  m.def(
      "sample_bandit_states",
      [](const std::string& spec, Index n, std::uint64_t seed) {
        return sample_bandit_states(BanditEnvSpec::from_json(json::parse(spec)), n, seed);
      },
      py::arg("spec"), py::arg("n"), py::arg("seed"));
  m.def(
      "policy_value",
      [](const std::string& spec, const std::string& policy, const Points& states) {
        const ValueEstimate v = policy_value_on(BanditEnvSpec::from_json(json::parse(spec)),
                                                ParamPolicy::from_json(json::parse(policy)), states);
        return py::make_tuple(v.value, v.std_error);
      },
      py::arg("spec"), py::arg("policy"), py::arg("states"));

  m.def(
      "bandit_steel",
      [](const Points& states, const Points& actions, const Vector& rewards, const Points& init_states,
         const Vector& action_lo, const Vector& action_hi, int q_degree, int policy_degree,
         double q_clip, double zeta, std::optional<double> eps1, std::optional<double> eps2,
         int max_outer_iters, std::uint64_t seed) {
        const BanditDataset d = bandit_from(states, actions, rewards);
        SteelConfig c;
        c.zeta = zeta;
        c.eps1 = eps1;
        c.eps2 = eps2;
        c.seed = seed;
        c.max_outer_iters = max_outer_iters;
        c.init_states = init_states;
        const Index ds = states.cols(), da = actions.cols();
        c.q_class = ParamQ(FeatureMap::polynomial(ds + da, q_degree), ds, da, q_clip);
        c.policy_class = ParamPolicy(FeatureMap::polynomial(ds, policy_degree), action_lo, action_hi);
        py::gil_scoped_release release;
        return bandit_steel(d, c).to_json().dump();
      },
      py::arg("states"), py::arg("actions"), py::arg("rewards"), py::arg("init_states"),
      py::arg("action_lo"), py::arg("action_hi"), py::arg("q_degree") = 2,
      py::arg("policy_degree") = 1, py::arg("q_clip") = 2.0, py::arg("zeta") = 0.01,
      py::arg("eps1") = py::none(), py::arg("eps2") = py::none(),
      py::arg("max_outer_iters") = 300, py::arg("seed") = 0);
  m.def(
      "policy_act",
      [](const std::string& policy, const Points& states) {
        return ParamPolicy::from_json(json::parse(policy)).act_rows(states);
      },
      py::arg("policy"), py::arg("states"));

  m.def(
      "run_experiment",
      [](const std::string& config, int workers, bool overwrite, bool quiet) {
        const ExperimentConfig cfg = ExperimentConfig::from_json(json::parse(config, nullptr, true, true));
        RunOptions opts{workers, overwrite, quiet};
        RunReport r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, opts);
        }
        return py::make_tuple(r.added, r.skipped, r.failed);
      },
      py::arg("config"), py::arg("workers") = 1, py::arg("overwrite") = false,
      py::arg("quiet") = true);
  m.def("summarize", &summarize, py::arg("output_dir"));
  m.def("config_hash", [](const std::string& config) {
    return ExperimentConfig::from_json(json::parse(config, nullptr, true, true)).hash_hex();
  }, py::arg("config"));
}

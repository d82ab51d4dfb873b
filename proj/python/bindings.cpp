#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "branchgrpo/config.hpp"
#include "branchgrpo/credit.hpp"
#include "branchgrpo/errors.hpp"
#include "branchgrpo/io.hpp"
#include "branchgrpo/metrics.hpp"
#include "branchgrpo/pruning.hpp"
#include "branchgrpo/trainer.hpp"

namespace py = pybind11;
using namespace branchgrpo;

namespace {

SampleSet to_samples(const std::vector<std::vector<double>>& rows) {
  SampleSet s;
  if (rows.empty()) return s;
  s.dim = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != s.dim) throw std::invalid_argument("all points must have the same dimension");
    s.add(r);
  }
  return s;
}

py::dict record_dict(const IterationRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["reward_mean"] = r.reward_mean;
  d["reward_std"] = r.reward_std;
  d["objective"] = r.objective;
  d["grad_norm"] = r.grad_norm;
  d["nfe_old"] = r.nfe_old;
  d["nfe_new"] = r.nfe_new;
  return d;
}

PolicyParams pretrained(const RunConfig& config) {
  PolicyParams p = PolicyParams::init(MlpShape::for_dim(config.trainer.world.dim, config.hidden), config.pretrain.seed);
  p.ema_decay = config.ema_decay;
  pretrain_flow_matching(config.trainer.world, p, config.pretrain);
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Branching rollouts, reward fusion and GRPO training on a toy flow model";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<BranchSchedule>(m, "BranchSchedule")
      .def(py::init<>())
      .def(py::init([](int depth, std::vector<int> split_steps, int branch_factor, double correlation,
                       bool final_step_deterministic) {
             BranchSchedule s;
             s.depth = depth;
             s.split_steps = std::move(split_steps);
             s.branch_factor = branch_factor;
             s.correlation = correlation;
             s.final_step_deterministic = final_step_deterministic;
             s.validate();
             return s;
           }),
           py::arg("depth") = 20, py::arg("split_steps") = std::vector<int>{0, 3, 6, 9},
           py::arg("branch_factor") = 2, py::arg("correlation") = 4.0, py::arg("final_step_deterministic") = true)
      .def_readwrite("depth", &BranchSchedule::depth)
      .def_readwrite("split_steps", &BranchSchedule::split_steps)
      .def_readwrite("branch_factor", &BranchSchedule::branch_factor)
      .def_readwrite("correlation", &BranchSchedule::correlation)
      .def_readwrite("final_step_deterministic", &BranchSchedule::final_step_deterministic)
      .def("validate", &BranchSchedule::validate)
      .def("leaf_count", &BranchSchedule::leaf_count)
      .def("width_at", &BranchSchedule::width_at);

  m.def("dense_schedule", &dense_schedule);
  m.def("mixed_schedule", &mixed_schedule);
  m.def("sparse_schedule", &sparse_schedule);
  m.def("tree_evaluation_count", &tree_evaluation_count);
  m.def("average_per_sample_nfe", &average_per_sample_nfe);

  m.def(
      "branch_noises",
      [](const std::vector<double>& shared, const std::vector<std::vector<double>>& innovations, double s) {
        return branch_noises(shared, innovations, s);
      },
      py::arg("shared"), py::arg("innovations"), py::arg("correlation"));

  m.def(
      "fuse_rewards",
      [](const BranchSchedule& schedule, const std::vector<double>& edge_logprobs,
         const std::vector<double>& leaf_rewards, double beta) {
        auto tree = build_tree_skeleton(schedule, std::vector<double>{0.0});
        if (edge_logprobs.size() != tree.node_count()) {
          throw std::invalid_argument("need one edge log-prob per node (root entry ignored)");
        }
        for (std::size_t i = 1; i < tree.node_count(); ++i) tree.set_transition(tree.node_at(i), true, edge_logprobs[i]);
        return fuse_rewards(tree, leaf_rewards, {beta, FusionMode::kSoftmaxPath});
      },
      py::arg("schedule"), py::arg("edge_logprobs"), py::arg("leaf_rewards"), py::arg("beta") = 1.0,
      "Fused value per node (flat index) with every edge treated as stochastic.");

  m.def(
      "depth_advantages",
      [](const BranchSchedule& schedule, const std::vector<double>& fused, double epsilon, double clip) {
        auto tree = build_tree_skeleton(schedule, std::vector<double>{0.0});
        CreditTable t;
        t.epsilon = epsilon;
        t.advantage_clip = clip;
        t.fused_value = fused;
        depth_normalize(t, tree);
        return t.edge_advantage;
      },
      py::arg("schedule"), py::arg("fused"), py::arg("epsilon") = 1e-8, py::arg("clip") = 5.0);

  m.def("effective_sample_size", [](const std::vector<double>& w) { return effective_sample_size(w); });
  m.def("group_baseline_check", [](const std::vector<double>& v) { return group_baseline_check(v); });

  m.def(
      "grpo_edge_loss",
      [](const std::vector<double>& adv, const std::vector<double>& old_lp, const std::vector<double>& new_lp,
         double clip) {
        const auto r = grpo_edge_loss(adv, old_lp, new_lp, clip);
        py::dict d;
        d["objective"] = r.objective;
        d["ratios"] = r.ratios;
        d["coefficients"] = r.coefficients;
        d["clipped"] = r.clipped;
        return d;
      },
      py::arg("advantages"), py::arg("old_logprobs"), py::arg("new_logprobs"), py::arg("clip_epsilon"));

  m.def(
      "depth_window",
      [](int depth, long iteration, int size, int shift_interval, int start, int stop) {
        SlidingWindow w{true, size, shift_interval, start, stop};
        w.validate(depth);
        return w.steps(iteration, depth);
      },
      py::arg("depth") = 20, py::arg("iteration") = 0, py::arg("size") = 4, py::arg("shift_interval") = 30,
      py::arg("start") = 9, py::arg("stop") = 15);

  m.def(
      "mmd2_unbiased",
      [](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y, double bandwidth) {
        return mmd2_unbiased(to_samples(x), to_samples(y), Kernel::rbf(bandwidth));
      },
      py::arg("x"), py::arg("y"), py::arg("bandwidth"));

  m.def(
      "permutation_test",
      [](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y, int permutations,
         double alpha, std::uint64_t seed) {
        const auto sx = to_samples(x);
        const auto sy = to_samples(y);
        const auto r = permutation_test(sx, sy, Kernel::rbf(median_heuristic_bandwidth(sx, sy, 1024, seed)),
                                        permutations, alpha, seed);
        return py::module_::import("json").attr("loads")(to_json(r).dump());
      },
      py::arg("x"), py::arg("y"), py::arg("permutations") = 200, py::arg("alpha") = 0.01, py::arg("seed") = 0);

  m.def(
      "ks_marginal_test",
      [](const std::vector<double>& samples, double alpha) {
        const auto r = ks_marginal_test(samples, alpha);
        return py::make_tuple(r.statistic, r.critical, r.pass);
      },
      py::arg("samples"), py::arg("alpha") = 0.01);

  m.def(
      "parse_config", [](const std::string& text) { return emit_config(parse_config(text)); }, py::arg("text"),
      "Validates config text and returns every resolved key.");

  m.def(
      "train",
      [](const std::string& config_text, const std::vector<std::string>& overrides, const std::string& mode) {
        RunConfig config = parse_config(config_text);
        for (const auto& o : overrides) set_config_value(config, o);
        config.validate();
        const TrainMode m = mode.empty() ? config.mode : train_mode_from_string(mode);
        PolicyParams policy = pretrained(config);
        RunLog log;
        {
          py::gil_scoped_release release;
          log = train(config.trainer, policy, m);
        }
        py::dict out;
        out["mode"] = to_string(log.mode);
        out["initial_reward"] = log.initial_reward;
        py::list records;
        for (const auto& r : log.records) records.append(record_dict(r));
        out["records"] = records;
        out["csv"] = runlog_csv(log);
        return out;
      },
      py::arg("config_text") = "", py::arg("overrides") = std::vector<std::string>{}, py::arg("mode") = "",
      "Pretrains the toy policy, then runs one training mode and returns its log.");
}

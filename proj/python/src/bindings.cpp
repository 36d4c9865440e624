// Python bindings for the core operations. Matrices cross as lists of rows.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "scalevec/cli.hpp"
#include "scalevec/designs.hpp"
#include "scalevec/error.hpp"
#include "scalevec/flow.hpp"
#include "scalevec/linalg.hpp"
#include "scalevec/nnblock.hpp"
#include "scalevec/rng.hpp"
#include "scalevec/sde.hpp"

namespace py = pybind11;
using namespace scalevec;

namespace {

using Rows = std::vector<std::vector<double>>;

Matrix to_matrix(const Rows& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw Error(ErrorCode::DimensionMismatch, "ragged rows");
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

Rows to_rows(const Matrix& m) {
  Rows out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).begin(), m.row(i).end());
  return out;
}

py::list checks_to_py(const std::vector<Check>& checks) {
  py::list out;
  for (const Check& c : checks) {
    out.append(py::dict(py::arg("name") = c.name, py::arg("observed") = c.observed,
                        py::arg("threshold") = c.threshold, py::arg("passed") = c.pass));
  }
  return out;
}

py::dict report_to_py(const ComparisonReport& r) {
  return py::dict(py::arg("experiment") = r.experiment, py::arg("baseline") = r.baseline_label,
                  py::arg("variant") = r.variant_label, py::arg("times") = r.times,
                  py::arg("loss_baseline") = r.loss_baseline, py::arg("loss_variant") = r.loss_variant,
                  py::arg("gap") = r.gap, py::arg("checks") = checks_to_py(r.checks),
                  py::arg("passed") = r.passed());
}

BlockParams block_params(const std::string& design, std::size_t d_model, std::size_t n_head,
                         std::size_t d_ffn, bool causal, std::uint64_t seed, bool randomize) {
  BlockConfig base;
  base.d_model = d_model;
  base.n_head = n_head;
  base.d_ffn = d_ffn;
  base.causal = causal;
  const BlockConfig c = parse_design(design, base);
  Rng rng(seed);
  BlockParams p = init_params(c, rng);
  if (randomize) randomize_params(p, rng);
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Scale-vector RMSNorm dynamics: gradient flows, weight-decay SDEs and a toy block.";

  static py::exception<Error> exc(m, "ScalevecError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(exc, e.what());
    }
  });

  m.def("sphere_normalize", [](const Vector& x) { return sphere_normalize(x); }, py::arg("x"),
        "sqrt(d) x / ||x||");

  m.def("run_thm1", [](const Rows& target, double horizon, std::size_t steps) {
    return report_to_py(run_thm1(to_matrix(target), horizon, steps));
  }, py::arg("target"), py::arg("horizon") = 5.0, py::arg("steps") = 5000);
  m.def("run_dp_matching_support", [](const Rows& target, double horizon, std::size_t steps) {
    return report_to_py(run_dp_matching_support(to_matrix(target), horizon, steps));
  }, py::arg("target"), py::arg("horizon") = 5.0, py::arg("steps") = 5000);
  m.def("run_thm4", [](const Rows& target, double horizon, std::size_t steps) {
    return report_to_py(run_thm4(to_matrix(target), horizon, steps));
  }, py::arg("target"), py::arg("horizon") = 5.0, py::arg("steps") = 5000);
  m.def("balanced_teacher", [](std::size_t c, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    return to_rows(balanced_teacher(c, d, rng));
  }, py::arg("c"), py::arg("d"), py::arg("seed"));
  m.def("random_unit_teacher", [](std::size_t c, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    return to_rows(random_unit_teacher(c, d, rng));
  }, py::arg("c"), py::arg("d"), py::arg("seed"));

  m.def("hessian_sharpness", [](const Vector& w, const Vector& gamma, const Vector& a_star) {
    const SharpnessRecord r = hessian_sharpness(w, gamma, a_star);
    return py::dict(py::arg("lambda_max") = r.lambda_max, py::arg("trace") = r.trace, py::arg("frob") = r.frob);
  }, py::arg("w"), py::arg("gamma"), py::arg("a_star"));
  m.def("gronwall_bound", &gronwall_bound, py::arg("rate"), py::arg("d"), py::arg("q"), py::arg("a_star_sq"),
        py::arg("t"), py::arg("e0"));
  m.def("euler_maruyama", [](std::size_t d, double lam, double mu, double q, double dt, double horizon,
                             std::uint64_t seed) {
    SdeConfig c;
    c.d = d;
    c.lambda = lam;
    c.mu = mu;
    c.q = q;
    c.dt = dt;
    c.horizon = horizon;
    const SdePath p = euler_maruyama(c, seed);
    return py::dict(py::arg("times") = p.times, py::arg("w") = p.w, py::arg("gamma") = p.gamma,
                    py::arg("diverged") = p.diverged);
  }, py::arg("d") = 4, py::arg("lam") = 0.1, py::arg("mu") = 0.1, py::arg("q") = 0.01, py::arg("dt") = 1e-3,
     py::arg("horizon") = 50.0, py::arg("seed") = 0);
  m.def("sgd_descent_expansion", [](const Vector& w, const Vector& gamma, const Vector& a_star, double eta,
                                    bool aligned, double sigma, std::size_t n_mc, std::uint64_t seed) {
    const DescentExpansion e = sgd_descent_expansion(
        w, gamma, a_star, eta, aligned ? NoiseModel::HessianAligned : NoiseModel::Isotropic, sigma, n_mc, seed);
    return py::dict(py::arg("eta") = e.eta, py::arg("measured") = e.measured, py::arg("predicted") = e.predicted,
                    py::arg("residual") = e.residual, py::arg("stderr") = e.stderr_);
  }, py::arg("w"), py::arg("gamma"), py::arg("a_star"), py::arg("eta"), py::arg("aligned") = false,
     py::arg("sigma") = 1.0, py::arg("n_mc") = 100000, py::arg("seed") = 0);

  m.def("block_forward", [](const std::string& design, const Rows& x, std::size_t n_head, std::size_t d_ffn,
                            bool causal, std::uint64_t seed, bool randomize) {
    const Matrix xm = to_matrix(x);
    return to_rows(block_forward(block_params(design, xm.cols(), n_head, d_ffn, causal, seed, randomize), xm));
  }, py::arg("design"), py::arg("x"), py::arg("n_head"), py::arg("d_ffn"), py::arg("causal") = false,
     py::arg("seed") = 0, py::arg("randomize") = false);
  m.def("block_gradient_check", [](const std::string& design, std::size_t d_model, std::size_t n_head,
                                   std::size_t d_ffn, std::size_t seq_len, std::uint64_t seed) {
    const BlockParams p = block_params(design, d_model, n_head, d_ffn, false, seed, true);
    Rng rng(seed + 1);
    Matrix x(seq_len, d_model), up(seq_len, d_model);
    for (double& v : x.data()) v = rng.normal();
    for (double& v : up.data()) v = rng.normal();
    py::dict out;
    for (const GradCheckRow& r : gradient_check(p, x, up)) out[py::str(r.param_name)] = r.max_rel_err;
    return out;
  }, py::arg("design"), py::arg("d_model") = 8, py::arg("n_head") = 2, py::arg("d_ffn") = 12,
     py::arg("seq_len") = 3, py::arg("seed") = 0);
  m.def("count_params", [](std::size_t layers, std::size_t d_model, std::size_t norms_per_layer,
                           std::size_t final_norms, std::optional<std::size_t> total) {
    const ParamCount c = count_params(layers, d_model, norms_per_layer, final_norms, total);
    return py::make_tuple(c.scale_count, c.ratio);
  }, py::arg("layers"), py::arg("d_model"), py::arg("norms_per_layer") = 2, py::arg("final_norms") = 1,
     py::arg("total") = py::none());
  m.def("classify_norms", [](const std::string& design, const std::string& arch) {
    Architecture a;
    if (arch == "llama") a = Architecture::LlamaLike;
    else if (arch == "gemma") a = Architecture::GemmaLike;
    else if (arch == "llama+dnp") a = Architecture::LlamaDNP;
    else throw Error(ErrorCode::ConfigError, "architecture must be llama, gemma or llama+dnp");
    py::list out;
    for (const NormRoleEntry& e : classify_norms(parse_design(design), a)) {
      out.append(py::make_tuple(e.norm, e.role == NormRole::InputNorm ? "input" : "output", e.decay));
    }
    return out;
  }, py::arg("design"), py::arg("architecture"));

  m.def("experiments", &experiment_names);
  m.def("run_config", [](const std::string& text, std::optional<std::filesystem::path> out_dir,
                         std::optional<std::uint64_t> seed) {
    std::istringstream in(text);
    ExperimentConfig c = parse_config(in);
    if (out_dir) c.out_dir = *out_dir;
    if (seed) c.seed = *seed;
    std::vector<RunResult> results;
    {
      py::gil_scoped_release release;
      results = run(c);
    }
    py::list out;
    for (const RunResult& r : results) {
      out.append(py::dict(py::arg("experiment") = r.experiment, py::arg("checks") = checks_to_py(r.checks),
                          py::arg("artifacts") = r.artifacts, py::arg("passed") = r.passed()));
    }
    return py::make_tuple(exit_status(results), out);
  }, py::arg("config_text"), py::arg("out_dir") = py::none(), py::arg("seed") = py::none(),
     "Run a flat key = value config; returns (exit_status, results).");
}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "partyvec/analytics.hpp"
#include "partyvec/error.hpp"
#include "partyvec/persona.hpp"
#include "partyvec/pipeline.hpp"
#include "partyvec/regression.hpp"
#include "partyvec/tensor.hpp"

namespace py = pybind11;
using namespace partyvec;

namespace {

PartyDistribution dist(const std::vector<double>& p) {
  PartyDistribution d;
  d.probs = p;
  for (std::size_t i = 0; i < p.size(); ++i) d.parties.push_back("p" + std::to_string(i));
  return d;
}

}  // namespace

PYBIND11_MODULE(_partyvec, m) {
  m.doc() = "partyvec core bindings";

  static py::exception<Error> error(m, "PartyvecError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object code = py::int_(exit_code_for(e));
      PyErr_SetObject(error.ptr(), py::make_tuple(e.what(), code).ptr());
    }
  });

  m.def("cosine", [](const std::vector<float>& a, const std::vector<float>& b) { return cosine(a, b); });

  m.def("normalized_entropy", [](const std::vector<double>& p) { return normalized_entropy(p); },
        "Shannon entropy in bits over log2 of the support size.");

  m.def(
      "wasserstein",
      [](const std::vector<double>& a, const std::vector<double>& b, const std::vector<std::size_t>& order) {
        auto da = dist(a), db = dist(b);
        if (order.empty()) return wasserstein(da, db, GroundMetric::unit());
        std::vector<std::string> axis;
        for (auto i : order) axis.push_back("p" + std::to_string(i));
        return wasserstein(da, db, GroundMetric::ordered(axis));
      },
      py::arg("a"), py::arg("b"), py::arg("order") = std::vector<std::size_t>{},
      "W1 distance; unit ground cost unless an axis order of party indices is given.");

  m.def(
      "ols",
      [](const std::vector<double>& y, const std::vector<std::vector<double>>& X) {
        std::vector<std::string> names;
        for (std::size_t j = 0; j < (X.empty() ? 0 : X.front().size()); ++j) names.push_back("x" + std::to_string(j));
        const auto r = ols(y, X, names);
        py::dict d;
        d["beta"] = r.beta;
        d["se"] = r.se;
        d["t"] = r.t;
        d["p"] = r.p;
        d["r2"] = r.r2;
        d["dof"] = r.dof;
        return d;
      },
      py::arg("y"), py::arg("X"));

  m.def("t_two_sided_p", &t_two_sided_p, py::arg("t"), py::arg("dof"));

  m.def("persona_count", [](const std::filesystem::path& grid) { return PersonaGrid::load(grid).persona_count(); });

  m.def(
      "render",
      [](const std::filesystem::path& grid_file, const std::filesystem::path& variants_file, std::uint64_t persona_id,
         int variant) {
        const auto grid = PersonaGrid::load(grid_file);
        Persona p;
        p.id = persona_id;
        p.assignment = grid.assignment_of(persona_id);
        for (const auto& v : load_variants(variants_file)) {
          if (v.id == variant) return render(grid, p, v);
        }
        fail(ErrorCode::InvalidConfig, "no variant " + std::to_string(variant));
      },
      py::arg("grid"), py::arg("variants"), py::arg("persona_id"), py::arg("variant") = 0);

  m.def(
      "run_stage",
      [](const std::filesystem::path& config, const std::filesystem::path& out, const std::string& stage,
         bool force) {
        py::gil_scoped_release release;
        Pipeline p(RunConfig::load(config, out), Logger{false, true}, force);
        p.config().validate();
        const auto o = p.run_stage(stage);
        return std::make_pair(o.skipped, o.gates_passed);
      },
      py::arg("config"), py::arg("out"), py::arg("stage"), py::arg("force") = false,
      "Run one pipeline stage; returns (skipped, gates_passed).");

  m.def(
      "run_all",
      [](const std::filesystem::path& config, const std::filesystem::path& out, std::optional<std::uint64_t> seed,
         bool force) {
        py::gil_scoped_release release;
        Pipeline p(RunConfig::load(config, out, seed), Logger{false, true}, force);
        return p.run_all();
      },
      py::arg("config"), py::arg("out"), py::arg("seed") = std::nullopt, py::arg("force") = false,
      "Run every enabled stage; returns True when all gates passed.");

  m.def("config_hash", [](const std::filesystem::path& config, const std::filesystem::path& out) {
    return RunConfig::load(config, out).hash();
  });
}

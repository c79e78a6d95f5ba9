#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kloak/bench.hpp"
#include "kloak/errors.hpp"
#include "kloak/federation.hpp"
#include "kloak/hash.hpp"

namespace py = pybind11;
using namespace kloak;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
class PyFederation {
 public:
  PyFederation(Dataset data, uint64_t seed) : data_(std::move(data)), fed_(make_local_federation(data_, seed)) {}

  std::string query(const std::string& sql, int k, const std::string& mode) {
    const auto outcome = fed_.coordinator->run_query(sql, k, mode_from_string(mode), "python");
    auto doc = outcome_to_json(outcome);
    doc["trace_hash"] = hex64(outcome.trace.digest());
    return doc.dump();
  }

  void setup_views(const std::vector<std::string>& c, int k) {
    fed_.coordinator->setup_views(ControlFlowSet::parse(c, data_.catalog), k);
  }

  std::string view() const {
    const auto& map = fed_.coordinator->view();
    return map ? serialize_map(*map) : "null";
  }

  std::map<std::string, int> frames_sent() const {
    std::map<std::string, int> out;
    for (const auto& [type, count] : fed_.coordinator->frames_sent()) out[std::string(to_string(type))] = count;
    return out;
  }

  int coordinator_host() const { return fed_.coordinator->coordinator_host(); }

 private:
  Dataset data_;
  LocalFederation fed_;
};

}  // namespace

PYBIND11_MODULE(_kloak, m) {
  m.doc() = "kloak federated query engine";

  static PyObject* kloak_error = PyErr_NewException("kloak._kloak.KloakError", PyExc_RuntimeError, nullptr);
  m.attr("KloakError") = py::reinterpret_borrow<py::object>(kloak_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // Kind first so callers can tell ViewInfeasible from ParseError.
      PyErr_SetString(kloak_error, (std::string(e.kind()) + ": " + e.what()).c_str());
    }
  });

  m.def("generate", [](const std::string& generator, const std::string& out, uint64_t seed, int hosts, double scale,
                       int patients, double zipf_s, int n) {
    DatasetSpec spec;
    spec.generator = generator;
    spec.seed = seed;
    spec.hosts = hosts;
    spec.scale = scale;
    spec.patients = patients;
    spec.zipf_s = zipf_s;
    spec.n = n;
    write_dataset(out, spec.generate());
  }, py::arg("generator"), py::arg("out"), py::arg("seed") = 1, py::arg("hosts") = 2, py::arg("scale") = 0.01,
        py::arg("patients") = 100, py::arg("zipf_s") = 1.0, py::arg("n") = 1000);

  m.def("parse_plan", [](const std::string& sql, const std::string& data_dir) {
    const auto catalog = load_dataset(data_dir).catalog;
    auto plan = parse_query(sql, catalog);
    const auto c = derive_control_flow(plan, catalog);
    plan = assign_modes(std::move(plan), c);
    std::vector<std::pair<std::string, std::string>> nodes;
    for (const auto& node : plan.nodes) {
      nodes.emplace_back(std::string(to_string(node.kind)), std::string(to_string(node.placement)));
    }
    return py::make_tuple(nodes, c.to_strings());
  }, py::arg("sql"), py::arg("data_dir"));

  m.def("run_local", [](const std::string& data_dir, const std::string& sql, const std::string& mode) {
    const auto data = load_dataset(data_dir);
    return result_to_json(run_local(sql, data.catalog, mode_from_string(mode), data.shards, nullptr).result).dump();
  }, py::arg("data_dir"), py::arg("sql"), py::arg("mode") = "plain");

  m.def("check_view", [](const std::string& data_dir, const std::string& map_json, int k) {
    const auto data = load_dataset(data_dir);
    const auto map = map_from_json(nlohmann::json::parse(map_json));
    return violations_to_jsonl(check_view(map, data.shards, k > 0 ? k : map.k, data.catalog));
  }, py::arg("data_dir"), py::arg("map_json"), py::arg("k") = 0);

  m.def("run_scenario", [](const std::string& path, const std::string& out) {
    const auto rows = run_scenario(load_scenario(path));
    if (!out.empty()) write_report(out, rows);
    return report_csv(rows);
  }, py::arg("path"), py::arg("out") = "");

  py::class_<PyFederation>(m, "Federation")
      .def(py::init([](const std::string& data_dir, uint64_t seed) {
             return std::make_unique<PyFederation>(load_dataset(data_dir), seed);
           }),
           py::arg("data_dir"), py::arg("seed") = 42)
      .def("query", &PyFederation::query, py::arg("sql"), py::arg("k") = 2, py::arg("mode") = "kanon")
      .def("setup_views", &PyFederation::setup_views, py::arg("c"), py::arg("k"))
      .def("view", &PyFederation::view)
      .def("frames_sent", &PyFederation::frames_sent)
      .def_property_readonly("coordinator_host", &PyFederation::coordinator_host);
}

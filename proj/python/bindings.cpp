#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "kcmlab/dynamics.hpp"
#include "kcmlab/errors.hpp"
#include "kcmlab/experiments.hpp"
#include "kcmlab/io.hpp"
#include "kcmlab/lattice.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/stats.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

std::string classify_spec(const std::string& spec) {
    return std::string(kcm::to_string(kcm::classify(kcm::parse_family_spec(spec))));
}

std::string family_json(const std::string& spec) { return kcm::family_to_json(kcm::parse_family_spec(spec)).dump(); }

std::string run_json(const std::string& config_json, const std::string& dir) {
    const auto cfg = kcm::config_from_json(json::parse(config_json));
    py::gil_scoped_release release;
    return kcm::record_to_json(kcm::run_experiment(cfg, dir)).dump();
}

std::string load_config_json(const std::string& path) {
    const auto cfg = kcm::load_config(path);
    return cfg.params.dump();
}

std::string validate_json(const std::string& config_json) {
    return kcm::config_from_json(json::parse(config_json)).params.dump();
}

std::string verify_json(const std::string& manifest) {
    const auto rep = kcm::verify_manifest(manifest);
    json out = json::array();
    for (const auto& v : rep.verdicts) out.push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
    return out.dump();
}

std::string summary_csv(const std::vector<std::string>& records) {
    std::vector<kcm::RunRecord> recs;
    for (const auto& r : records) recs.push_back(kcm::record_from_json(json::parse(r)));
    return kcm::emit_summary(recs).to_csv();
}

std::vector<double> lpp_passage_times(int n, std::size_t dim, std::uint64_t seed, std::uint64_t replica) {
    const auto f = kcm::lpp_times(kcm::standard_lpp_rule(dim), kcm::Box::cube(n, dim),
                                  kcm::ExponentialWeights{seed, replica});
    return f.times;
}

std::vector<std::uint8_t> bp_closure_bits(const std::string& spec, int n, double p, std::uint64_t seed) {
    const auto fam = kcm::parse_family_spec(spec);
    const auto box = kcm::Box::cube(n, fam.dim());
    const auto init = kcm::Configuration::bernoulli(box, p, seed, 0);
    return kcm::bp_closure(fam, init, kcm::Domain{box, kcm::AllZeros{}}).bits();
}

}  // namespace

PYBIND11_MODULE(_kcmlab, m) {
    m.doc() = "Kinetically constrained models, contact processes and bootstrap percolation";
    py::register_exception<kcm::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<kcm::GeometryError>(m, "GeometryError", PyExc_ValueError);
    m.def("version", [] { return std::string(kcm::version()); });
    m.def("experiment_kinds", &kcm::experiment_kinds);
    m.def("classify", &classify_spec, py::arg("family"));
    m.def("family_json", &family_json, py::arg("family"));
    m.def("validate_config_json", &validate_json, py::arg("config"));
    m.def("load_config_json", &load_config_json, py::arg("path"));
    m.def("run_experiment_json", &run_json, py::arg("config"), py::arg("out_dir"));
    m.def("verify_manifest_json", &verify_json, py::arg("manifest"));
    m.def("summary_csv", &summary_csv, py::arg("records"));
    m.def("wilson_interval", &kcm::wilson_interval, py::arg("k"), py::arg("n"), py::arg("z") = 1.959963984540054);
    m.def("lpp_passage_times", &lpp_passage_times, py::arg("n"), py::arg("dim") = 2, py::arg("seed") = 1,
          py::arg("replica") = 0);
    m.def("bp_closure", &bp_closure_bits, py::arg("family"), py::arg("n"), py::arg("p"), py::arg("seed") = 1);
    m.def("config_hash", [](const std::string& c) { return kcm::config_hash(kcm::config_from_json(json::parse(c))); });
}

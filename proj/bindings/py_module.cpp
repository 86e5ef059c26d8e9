#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "rost/config.hpp"
#include "rost/estimators.hpp"
#include "rost/evolution.hpp"
#include "rost/experiments.hpp"
#include "rost/samplers.hpp"

namespace py = pybind11;
using namespace rost;

namespace {

OverlapCDF cdf_from_pairs(const std::vector<std::pair<double, double>>& atoms) {
    std::vector<CdfAtom> converted;
    converted.reserve(atoms.size());
    for (const auto& [q, mass] : atoms) converted.push_back({q, mass});
    return OverlapCDF(std::move(converted), false);
}

py::dict estimate_dict(const EstimateWithError& e) {
    py::dict d;
    d["value"] = e.value;
    d["std_error"] = e.std_error;
    d["n_replicas"] = e.n_replicas;
    d["n_draws_per_replica"] = e.n_draws_per_replica;
    return d;
}

py::object json_to_py(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

} // namespace

PYBIND11_MODULE(_rost, m) {
    m.doc() = "random overlap structures: cascade sampling, competitive dynamics, "
              "and the statistical identity checks";
    m.attr("__version__") = "0.1.0";

    py::class_<PsiSpec>(m, "PsiSpec")
        .def_static("linear", &PsiSpec::linear, py::arg("lambda_"))
        .def_static("smooth_shifted", &PsiSpec::smooth_shifted, py::arg("beta"), py::arg("h"),
                    py::arg("centered") = false)
        .def_readwrite("lambda_", &PsiSpec::lambda)
        .def_readwrite("beta", &PsiSpec::beta)
        .def_readwrite("h", &PsiSpec::h)
        .def_readwrite("centered", &PsiSpec::centered)
        .def("__call__", [](const PsiSpec& psi, double z) { return psi_eval(psi, z); });

    py::class_<ObservableSpec>(m, "ObservableSpec")
        .def_static("one", &ObservableSpec::one, py::arg("s"))
        .def_static("pair_power", &ObservableSpec::pair_power, py::arg("s"), py::arg("a"),
                    py::arg("b"), py::arg("power"))
        .def_static("pair_indicator", &ObservableSpec::pair_indicator, py::arg("s"),
                    py::arg("a"), py::arg("b"), py::arg("threshold"),
                    py::arg("less_equal") = true)
        .def("with_term", &ObservableSpec::with_term, py::arg("a"), py::arg("b"),
             py::arg("power"), py::return_value_policy::reference_internal)
        .def("with_indicator", &ObservableSpec::with_indicator, py::arg("a"), py::arg("b"),
             py::arg("threshold"), py::arg("less_equal") = true,
             py::return_value_policy::reference_internal)
        .def_readonly("s", &ObservableSpec::s)
        .def("describe", &ObservableSpec::describe)
        .def("__repr__", [](const ObservableSpec& o) {
            return "ObservableSpec(s=" + std::to_string(o.s) + ", " + o.describe() + ")";
        });

    py::class_<Rost>(m, "Rost")
        .def("__len__", [](const Rost& r) { return r.size(); })
        .def_property_readonly("weights",
                               [](const Rost& r) { return r.weights.values(); })
        .def_property_readonly(
            "overlaps", [](const Rost& r) -> Eigen::MatrixXd { return r.overlaps.matrix(); })
        .def_property_readonly("labels", [](const Rost& r) { return r.labels; });

    py::class_<Trajectory>(m, "Trajectory")
        .def_property_readonly("T", &Trajectory::T)
        .def_readonly("initial", &Trajectory::initial)
        .def_readonly("current", &Trajectory::current)
        .def_readonly("cumulative_increments", &Trajectory::cumulative_increments)
        .def("past_velocity",
             [](const Trajectory& t, std::size_t rank) { return past_velocity(t, rank); },
             py::arg("rank"))
        .def("weighted_mean_increment",
             [](const Trajectory& t) { return weighted_mean_increment(t); })
        .def("velocity_dispersion",
             [](const Trajectory& t, std::size_t top_k) {
                 return velocity_dispersion(t, top_k);
             },
             py::arg("top_k") = 5);

    m.def(
        "sample_poisson_dirichlet",
        [](double alpha, std::size_t n, std::uint64_t seed) {
            RngStream rng(seed);
            return sample_poisson_dirichlet(alpha, n, rng);
        },
        py::arg("alpha"), py::arg("n"), py::arg("seed"),
        "top n atoms of a PD(alpha, 0) mass partition, sorted decreasing");

    m.def(
        "build_rpc",
        [](const std::vector<std::pair<double, double>>& x_atoms, std::size_t n,
           std::uint64_t seed) {
            RngStream rng(seed);
            return build_rpc(cdf_from_pairs(x_atoms), n, rng);
        },
        py::arg("x_atoms"), py::arg("n"), py::arg("seed"),
        "n-atom cascade with overlap distribution given by (q, mass) atoms below 1");

    m.def(
        "evolve_step",
        [](const Rost& rost, const PsiSpec& psi, int r, std::uint64_t seed) {
            RngStream rng(seed);
            auto [next, rec] = evolve_step(rost, psi, r, rng);
            py::dict record;
            record["permutation"] = rec.permutation;
            record["increments"] = rec.increments;
            record["normalizer"] = rec.normalizer;
            return py::make_tuple(next, record);
        },
        py::arg("rost"), py::arg("psi"), py::arg("r"), py::arg("seed"),
        "one step of the competitive dynamics; returns (evolved, step record)");

    m.def(
        "run_trajectory",
        [](const Rost& rost, const PsiSpec& psi, int r, std::size_t T, std::uint64_t seed) {
            RngStream rng(seed);
            return run_trajectory(rost, psi, r, T, rng);
        },
        py::arg("rost"), py::arg("psi"), py::arg("r"), py::arg("T"), py::arg("seed"));

    m.def(
        "sampled_expectation",
        [](const std::vector<Rost>& rosts, const ObservableSpec& obs, std::size_t K,
           std::uint64_t seed, unsigned threads) {
            RngStream rng(seed);
            return estimate_dict(sampled_expectation(rosts, obs, K, rng, threads));
        },
        py::arg("rosts"), py::arg("observable"), py::arg("draws_per_replica"), py::arg("seed"),
        py::arg("threads") = 1);

    m.def(
        "overlap_cdf_values",
        [](const std::vector<Rost>& rosts, const std::vector<double>& grid, std::size_t K,
           std::uint64_t seed, unsigned threads) {
            RngStream rng(seed);
            auto values = overlap_cdf_values(rosts, grid, K, rng, threads);
            py::list out;
            for (std::size_t g = 0; g < grid.size(); ++g) {
                py::dict d = estimate_dict(values[g]);
                d["q"] = grid[g];
                out.append(d);
            }
            return out;
        },
        py::arg("rosts"), py::arg("grid"), py::arg("draws_per_replica"), py::arg("seed"),
        py::arg("threads") = 1);

    m.def(
        "pressure",
        [](const std::vector<Rost>& rosts, const PsiSpec& psi, int r, double lambda,
           std::size_t K, std::uint64_t seed, unsigned threads) {
            RngStream rng(seed);
            return estimate_dict(pressure(rosts, psi, r, lambda, K, rng, threads));
        },
        py::arg("rosts"), py::arg("psi"), py::arg("r"), py::arg("lambda_"),
        py::arg("draws_per_replica"), py::arg("seed"), py::arg("threads") = 1);

    m.def("log_field_mgf", &log_field_mgf, py::arg("psi"), py::arg("lambda_"),
          "quadrature upper bound of the pressure for a standard normal field");

    m.def(
        "gg_residual",
        [](const std::vector<Rost>& rosts, int s, int r, const ObservableSpec& obs,
           std::size_t K, std::uint64_t seed, unsigned threads) {
            RngStream rng(seed);
            return estimate_dict(gg_residual(rosts, s, r, obs, K, rng, threads));
        },
        py::arg("rosts"), py::arg("s"), py::arg("r"), py::arg("observable"),
        py::arg("draws_per_replica"), py::arg("seed"), py::arg("threads") = 1);

    m.def(
        "ac_residual",
        [](const std::vector<Rost>& rosts, int s, int r, const ObservableSpec& obs,
           std::size_t K, std::uint64_t seed, unsigned threads) {
            RngStream rng(seed);
            return estimate_dict(ac_residual(rosts, s, r, obs, K, rng, threads));
        },
        py::arg("rosts"), py::arg("s"), py::arg("r"), py::arg("observable"),
        py::arg("draws_per_replica"), py::arg("seed"), py::arg("threads") = 1);

    m.def(
        "ultrametric_violation",
        [](const std::vector<Rost>& rosts, std::size_t n_triples, double tol,
           std::uint64_t seed) {
            RngStream rng(seed);
            return ultrametric_violation(rosts, n_triples, tol, rng);
        },
        py::arg("rosts"), py::arg("n_triples"), py::arg("tol"), py::arg("seed"));

    m.def(
        "run_experiment",
        [](const std::string& config_path, unsigned threads, py::object seed,
           py::object output_dir) {
            RunConfig cfg = load_config(config_path);
            if (!seed.is_none()) cfg.seed = seed.cast<std::uint64_t>();
            if (!output_dir.is_none()) cfg.output_path = output_dir.cast<std::string>();
            ExperimentResult res = run_experiment(cfg, threads);
            py::dict out;
            out["pass"] = res.pass;
            out["results"] = json_to_py(res.results);
            out["csv"] = res.csv;
            return out;
        },
        py::arg("config_path"), py::arg("threads") = 1, py::arg("seed") = py::none(),
        py::arg("output_dir") = py::none(),
        "load a JSON config, run the named experiment, write its files, return the results");

    m.def(
        "config_hash",
        [](const std::string& config_path) { return config_hash(load_config(config_path)); },
        py::arg("config_path"));

    m.def("known_experiments", [] { return known_experiments(); });
}

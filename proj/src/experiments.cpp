#include "rost/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rost/errors.hpp"
#include "rost/estimators.hpp"
#include "rost/evolution.hpp"
#include "rost/parallel.hpp"
#include "rost/samplers.hpp"

#include "detail.hpp"

namespace rost {

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

std::string num(double v) { return detail::fmt("%.17g", v); }

json estimate_json(const EstimateWithError& e) {
    return json{{"value", e.value},
                {"std_error", e.std_error},
                {"n_replicas", e.n_replicas},
                {"n_draws_per_replica", e.n_draws_per_replica}};
}

json row_json(const QsObservableRow& row) {
    return json{{"name", row.name},       {"pre_mean", row.pre_mean},
                {"pre_se", row.pre_se},   {"post_mean", row.post_mean},
                {"post_se", row.post_se}, {"z", row.z},
                {"p", row.p},             {"reject", row.reject}};
}

std::string rows_csv(const char* header, const std::vector<QsObservableRow>& rows) {
    std::string csv = header;
    csv += '\n';
    for (const auto& row : rows) {
        csv += row.name + ',' + num(row.pre_mean) + ',' + num(row.pre_se) + ',' +
               num(row.post_mean) + ',' + num(row.post_se) + ',' + num(row.z) + ',' +
               num(row.p) + ',' + (row.reject ? "1" : "0") + '\n';
    }
    return csv;
}

struct Dispatch {
    bool pass = true;
    json results;
    std::string csv;
    std::string extra_name; // optional second output file
    std::string extra_body;
};

Dispatch run_sample_rpc(const RunConfig& cfg, const OverlapCDF& x, const RostSource& source,
                        RngStream& root, unsigned threads) {
    Dispatch out;
    const std::size_t R = cfg.n_replicas;

    std::string csv = "replica,sum_w2,sum_w3,top_weight\n";
    std::vector<double> w2(R), w3(R), top(R);
    for (std::size_t i = 0; i < R; ++i) {
        RngStream rep = root.branch(i);
        Rost rost = source(rep);
        const auto& w = rost.weights.values();
        long double s2 = 0.0L, s3 = 0.0L;
        for (double v : w) {
            s2 += (long double)v * v;
            s3 += (long double)v * v * v;
        }
        w2[i] = double(s2);
        w3[i] = double(s3);
        top[i] = w.empty() ? 0.0 : w[0];
        csv += detail::fmt("%zu,", i) + num(w2[i]) + ',' + num(w3[i]) + ',' + num(top[i]) + '\n';
    }
    out.csv = std::move(csv);

    auto mean_se = [&](const std::vector<double>& v) {
        long double mean = 0.0L;
        for (double x_ : v) mean += x_;
        mean /= (long double)v.size();
        long double m2 = 0.0L;
        for (double x_ : v) {
            long double d = x_ - mean;
            m2 += d * d;
        }
        double se = v.size() > 1 ? std::sqrt(double(m2 / (long double)(v.size() - 1)) /
                                             double(v.size()))
                                 : 0.0;
        return json{{"value", double(mean)}, {"std_error", se}};
    };
    out.results["sum_w2"] = mean_se(w2);
    out.results["sum_w3"] = mean_se(w3);
    out.results["top_weight"] = mean_se(top);

    std::vector<double> grid = default_cdf_grid(&x);
    auto cdf = overlap_cdf_values(source, R, grid, cfg.draws_per_replica, root, threads);
    json points = json::array();
    for (std::size_t g = 0; g < grid.size(); ++g)
        points.push_back({{"q", grid[g]},
                          {"value", cdf[g].value},
                          {"std_error", cdf[g].std_error}});
    out.results["cdf"] = points;
    return out;
}

Dispatch run_evolve(const RunConfig& cfg, const RostSource& source, RngStream& root) {
    Dispatch out;
    RngStream st = root.branch(0);
    Rost rost = source(st);
    Trajectory traj = run_trajectory(rost, cfg.psi, cfg.r, cfg.T, st);

    std::string csv = "step,normalizer,max_increment\n";
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const StepRecord& rec = traj.steps[t];
        double mx = rec.increments.empty()
                        ? 0.0
                        : *std::max_element(rec.increments.begin(), rec.increments.end());
        csv += detail::fmt("%zu,", t) + num(rec.normalizer) + ',' + num(mx) + '\n';
    }
    out.csv = std::move(csv);

    out.results["T"] = traj.T();
    out.results["final_top_weight"] = traj.current.weights.values().front();
    out.results["weighted_mean_increment"] = weighted_mean_increment(traj);
    out.results["velocity_dispersion_top5"] = velocity_dispersion(traj, 5);

    std::ostringstream lines;
    dump_trajectory(lines, traj);
    out.extra_name = "evolve.jsonl";
    out.extra_body = lines.str();
    return out;
}

Dispatch run_qs_test(const RunConfig& cfg, const RostSource& source, RngStream& root,
                     unsigned threads) {
    Dispatch out;
    QsReport report = quasi_stationarity_test(source, cfg.psi, cfg.r, cfg.n_replicas,
                                              cfg.draws_per_replica, root, threads,
                                              cfg.tol.alpha);
    out.pass = report.pass;
    out.csv = rows_csv("name,pre_mean,pre_se,post_mean,post_se,z,p,reject", report.rows);
    json rows = json::array();
    for (const auto& row : report.rows) rows.push_back(row_json(row));
    out.results["rows"] = rows;
    out.results["alpha"] = report.alpha;
    return out;
}

Dispatch run_identity(const RunConfig& cfg, const RostSource& source, RngStream& root,
                      unsigned threads, bool cascade_form) {
    Dispatch out;
    EstimateWithError res =
        cascade_form ? gg_residual(source, cfg.n_replicas, cfg.s, cfg.r, cfg.observable,
                                   cfg.draws_per_replica, root, threads)
                     : ac_residual(source, cfg.n_replicas, cfg.s, cfg.r, cfg.observable,
                                   cfg.draws_per_replica, root, threads);
    double z = res.std_error > 0.0 ? res.value / res.std_error
                                   : (res.value == 0.0 ? 0.0 : 1e9);
    bool reject = std::abs(z) > cfg.tol.z_max;
    out.pass = !reject;
    out.csv = "s,r,residual,std_error,z,reject\n";
    out.csv += detail::fmt("%d,%d,", cfg.s, cfg.r) + num(res.value) + ',' +
               num(res.std_error) + ',' + num(z) + ',' + (reject ? "1" : "0") + '\n';
    out.results["s"] = cfg.s;
    out.results["r"] = cfg.r;
    out.results["observable"] = cfg.observable.describe();
    out.results["residual"] = estimate_json(res);
    out.results["z"] = z;
    out.results["z_max"] = cfg.tol.z_max;
    return out;
}

Dispatch run_ultra_test(const RunConfig& cfg, const RostSource& source, RngStream& root) {
    Dispatch out;
    const std::size_t n_triples = cfg.n_replicas * cfg.draws_per_replica;
    double violation =
        ultrametric_violation(source, cfg.n_replicas, n_triples, cfg.tol.ultra_tol, root);
    bool reject = violation > cfg.tol.max_violation_fraction;
    out.pass = !reject;
    out.csv = "n_triples,tol,violation_fraction,max_fraction,reject\n";
    out.csv += detail::fmt("%zu,", n_triples) + num(cfg.tol.ultra_tol) + ',' + num(violation) +
               ',' + num(cfg.tol.max_violation_fraction) + ',' + (reject ? "1" : "0") + '\n';
    out.results["n_triples"] = n_triples;
    out.results["tol"] = cfg.tol.ultra_tol;
    out.results["violation_fraction"] = violation;
    out.results["max_violation_fraction"] = cfg.tol.max_violation_fraction;
    return out;
}

Dispatch run_velocity(const RunConfig& cfg, const RostSource& source, RngStream& root,
                      unsigned threads) {
    Dispatch out;
    const std::size_t R = cfg.n_replicas;
    constexpr std::size_t kRanks = 5;

    std::vector<std::vector<double>> vel(kRanks, std::vector<double>(R));
    std::vector<double> disp(R), wmean(R);
    parallel_for(R, threads, [&](std::size_t i) {
        RngStream st = root.branch(i);
        Rost rost = source(st);
        Trajectory traj = run_trajectory(rost, cfg.psi, cfg.r, cfg.T, st);
        for (std::size_t k = 0; k < kRanks; ++k) vel[k][i] = past_velocity(traj, k + 1);
        disp[i] = velocity_dispersion(traj, kRanks);
        wmean[i] = weighted_mean_increment(traj);
    });

    auto mean_se = [&](const std::vector<double>& v) {
        long double mean = 0.0L;
        for (double x : v) mean += x;
        mean /= (long double)v.size();
        long double m2 = 0.0L;
        for (double x : v) {
            long double d = x - mean;
            m2 += d * d;
        }
        double se = v.size() > 1 ? std::sqrt(double(m2 / (long double)(v.size() - 1)) /
                                             double(v.size()))
                                 : 0.0;
        return std::pair<double, double>(double(mean), se);
    };

    std::string csv = "rank,mean_velocity,std_error\n";
    json ranks = json::array();
    for (std::size_t k = 0; k < kRanks; ++k) {
        auto [m, se] = mean_se(vel[k]);
        csv += detail::fmt("%zu,", k + 1) + num(m) + ',' + num(se) + '\n';
        ranks.push_back({{"rank", k + 1}, {"mean", m}, {"std_error", se}});
    }
    out.csv = std::move(csv);
    out.results["T"] = cfg.T;
    out.results["ranks"] = ranks;
    auto [dm, dse] = mean_se(disp);
    out.results["dispersion"] = {{"value", dm}, {"std_error", dse}};
    auto [wm, wse] = mean_se(wmean);
    out.results["weighted_mean"] = {{"value", wm}, {"std_error", wse}};
    return out;
}

Dispatch run_pressure(const RunConfig& cfg, const RostSource& source, RngStream& root,
                      unsigned threads) {
    Dispatch out;
    const double lambda = cfg.psi.lambda;
    PsiSpec base = cfg.psi.kind == PsiSpec::Kind::linear ? PsiSpec::linear(1.0) : cfg.psi;

    EstimateWithError p = pressure(source, cfg.n_replicas, base, cfg.r, lambda,
                                   cfg.draws_per_replica, root, threads);
    PressureDerivativeCheck deriv =
        pressure_derivative_check(source, cfg.n_replicas, base, cfg.r, lambda, cfg.tol.fd_eps,
                                  cfg.draws_per_replica, root, threads);
    double bound = log_field_mgf(base, lambda);

    bool reject = std::abs(deriv.diff_z) > cfg.tol.z_max ||
                  p.value > bound + 3.0 * p.std_error + 1e-12 ||
                  deriv.min_second_difference < -1e-6;
    out.pass = !reject;

    out.csv = "lambda,r,pressure,std_error,upper_bound,fd_derivative,fd_se,direct_derivative,"
              "direct_se,diff_z,second_difference_min,reject\n";
    out.csv += num(lambda) + detail::fmt(",%d,", cfg.r) + num(p.value) + ',' +
               num(p.std_error) + ',' + num(bound) + ',' + num(deriv.finite_difference.value) +
               ',' + num(deriv.finite_difference.std_error) + ',' + num(deriv.direct.value) +
               ',' + num(deriv.direct.std_error) + ',' + num(deriv.diff_z) + ',' +
               num(deriv.min_second_difference) + ',' + (reject ? "1" : "0") + '\n';

    out.results["lambda"] = lambda;
    out.results["r"] = cfg.r;
    out.results["pressure"] = estimate_json(p);
    out.results["upper_bound"] = bound;
    out.results["derivative"] = {{"finite_difference", estimate_json(deriv.finite_difference)},
                                 {"direct", estimate_json(deriv.direct)},
                                 {"diff_z", deriv.diff_z},
                                 {"second_difference", estimate_json(deriv.second_difference)},
                                 {"min_second_difference", deriv.min_second_difference},
                                 {"eps", deriv.eps}};
    return out;
}

Dispatch run_clt_demo(const RunConfig& cfg, const RostSource& source, RngStream& root,
                      unsigned threads) {
    Dispatch out;
    CltReport report =
        clt_reduction_experiment(source, cfg.psi.lambda, cfg.psi.h, cfg.r, cfg.T,
                                 cfg.n_replicas, cfg.draws_per_replica, root, threads,
                                 cfg.tol.z_max);
    out.pass = report.pass;
    out.csv = rows_csv("name,smooth_mean,smooth_se,linear_mean,linear_se,z,p,reject",
                       report.rows);
    json rows = json::array();
    for (const auto& row : report.rows) rows.push_back(row_json(row));
    out.results["rows"] = rows;
    out.results["increment_variance"] = estimate_json(report.increment_variance);
    out.results["expected_variance"] = report.expected_variance;
    out.results["beta"] = report.beta;
    out.results["z_max"] = report.z_max;
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream outfile(path, std::ios::binary);
    if (!outfile) throw NumericalFailure("cannot write " + path.string());
    outfile << body;
}

} // namespace

ExperimentResult run_experiment(const RunConfig& cfg, unsigned threads) {
    const auto start = std::chrono::steady_clock::now();

    RngStream root(cfg.seed);
    OverlapCDF x = overlap_cdf_from_config(cfg);
    RostSource source = [&x, &cfg](RngStream& st) { return build_rpc(x, cfg.n_atoms, st); };

    Dispatch d;
    if (cfg.experiment == "sample-rpc") {
        d = run_sample_rpc(cfg, x, source, root, threads);
    } else if (cfg.experiment == "evolve") {
        d = run_evolve(cfg, source, root);
    } else if (cfg.experiment == "qs-test") {
        d = run_qs_test(cfg, source, root, threads);
    } else if (cfg.experiment == "gg-test") {
        d = run_identity(cfg, source, root, threads, true);
    } else if (cfg.experiment == "ac-test") {
        d = run_identity(cfg, source, root, threads, false);
    } else if (cfg.experiment == "ultra-test") {
        d = run_ultra_test(cfg, source, root);
    } else if (cfg.experiment == "velocity") {
        d = run_velocity(cfg, source, root, threads);
    } else if (cfg.experiment == "pressure") {
        d = run_pressure(cfg, source, root, threads);
    } else if (cfg.experiment == "clt-demo") {
        d = run_clt_demo(cfg, source, root, threads);
    } else {
        throw InvalidParameter("unknown experiment \"" + cfg.experiment + "\"");
    }

    json results = std::move(d.results);
    results["experiment"] = cfg.experiment;
    results["config_hash"] = config_hash(cfg);
    results["seed"] = cfg.seed;
    results["pass"] = d.pass;

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json manifest = {{"experiment", cfg.experiment},
                     {"config", canonical_config(cfg)},
                     {"config_hash", config_hash(cfg)},
                     {"seed", cfg.seed},
                     {"tool_version", kToolVersion},
                     {"wall_clock_seconds", wall},
                     {"pass", d.pass}};

    namespace fs = std::filesystem;
    fs::path dir(cfg.output_path);
    fs::create_directories(dir);
    write_file(dir / (cfg.experiment + ".csv"), d.csv);
    write_file(dir / "results.json", results.dump(2) + "\n");
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    if (!d.extra_name.empty()) write_file(dir / d.extra_name, d.extra_body);

    ExperimentResult out;
    out.pass = d.pass;
    out.results = std::move(results);
    out.csv = std::move(d.csv);
    return out;
}

} // namespace rost

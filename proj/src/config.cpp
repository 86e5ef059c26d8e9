#include "rost/config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "rost/errors.hpp"

#include "detail.hpp"

namespace rost {

namespace {

using nlohmann::json;

// Keeps a whole run comfortably inside memory and wall-clock at desk scale.
constexpr std::uint64_t kRunDrawBudget = std::uint64_t(1) << 40;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw InvalidParameter(path + ": " + what);
}

void require_object(const json& v, const std::string& path) {
    if (!v.is_object()) fail(path, "must be an object");
}

void check_keys(const json& obj, const std::string& prefix,
                std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) {
            return item.key() == k;
        });
        if (!known) {
            std::string path = prefix.empty() ? item.key() : prefix + "." + item.key();
            throw InvalidParameter(detail::fmt("unknown key \"%s\"", path.c_str()));
        }
    }
}

std::uint64_t get_count(const json& obj, const std::string& path, const char* key,
                        std::uint64_t fallback, std::uint64_t lo) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(path, "must be an integer");
    if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        fail(path, detail::fmt("must be >= %" PRIu64, lo));
    std::uint64_t u = v.get<std::uint64_t>();
    if (u < lo) fail(path, detail::fmt("must be >= %" PRIu64, lo));
    return u;
}

int get_int(const json& obj, const std::string& path, const char* key, int fallback, int lo,
            int hi) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(path, "must be an integer");
    std::int64_t n = v.is_number_unsigned()
                         ? static_cast<std::int64_t>(std::min<std::uint64_t>(
                               v.get<std::uint64_t>(), std::uint64_t(hi) + 1))
                         : v.get<std::int64_t>();
    if (n < lo || n > hi) fail(path, detail::fmt("must be in [%d, %d]", lo, hi));
    return static_cast<int>(n);
}

double get_number(const json& obj, const std::string& path, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) fail(path, "must be a number");
    double x = v.get<double>();
    if (!std::isfinite(x)) fail(path, "must be finite");
    return x;
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_boolean()) fail(path, "must be a boolean");
    return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key,
                       const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_string()) fail(path, "must be a string");
    return v.get<std::string>();
}

std::vector<CdfAtom> parse_x_atoms(const json& v) {
    if (!v.is_array()) fail("x_atoms", "must be an array of {q, mass} atoms");
    if (v.empty()) fail("x_atoms", "needs at least one atom");
    std::vector<CdfAtom> atoms;
    atoms.reserve(v.size());
    double total = 0.0;
    double prev = -1.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::string path = detail::fmt("x_atoms[%zu]", i);
        require_object(v[i], path);
        check_keys(v[i], path, {"q", "mass"});
        if (!v[i].contains("q")) fail(path + ".q", "required");
        if (!v[i].contains("mass")) fail(path + ".mass", "required");
        double q = get_number(v[i], path + ".q", "q", 0.0);
        double mass = get_number(v[i], path + ".mass", "mass", 0.0);
        if (q < 0.0 || q >= 1.0) fail(path + ".q", "must be in [0, 1)");
        if (mass <= 0.0) fail(path + ".mass", "must be > 0");
        if (q <= prev) fail("x_atoms", "locations must be strictly increasing");
        prev = q;
        total += mass;
        atoms.push_back({q, mass});
    }
    if (total >= 1.0)
        fail("x_atoms", detail::fmt("x(1-) must be < 1 (masses sum to %.17g)", total));
    return atoms;
}

PsiSpec parse_psi(const json& v) {
    require_object(v, "psi");
    check_keys(v, "psi", {"kind", "lambda", "beta", "h", "centered"});
    PsiSpec psi = RunConfig{}.psi;
    std::string kind = get_string(v, "psi.kind", "kind", "linear");
    if (kind == "linear") {
        psi.kind = PsiSpec::Kind::linear;
    } else if (kind == "smooth_shifted") {
        psi.kind = PsiSpec::Kind::smooth_shifted;
    } else {
        fail("psi.kind", "must be \"linear\" or \"smooth_shifted\"");
    }
    psi.lambda = get_number(v, "psi.lambda", "lambda", psi.lambda);
    psi.beta = get_number(v, "psi.beta", "beta", psi.beta);
    psi.h = get_number(v, "psi.h", "h", psi.h);
    psi.centered = get_bool(v, "psi.centered", "centered", psi.centered);
    return psi;
}

ObservableSpec parse_observable(const json& v) {
    require_object(v, "observable");
    check_keys(v, "observable", {"s", "monomials", "indicators"});
    ObservableSpec obs = ObservableSpec::one(get_int(v, "observable.s", "s", 2, 1, 16));
    if (v.contains("monomials")) {
        const json& ms = v.at("monomials");
        if (!ms.is_array()) fail("observable.monomials", "must be an array");
        for (std::size_t i = 0; i < ms.size(); ++i) {
            std::string path = detail::fmt("observable.monomials[%zu]", i);
            require_object(ms[i], path);
            check_keys(ms[i], path, {"a", "b", "power"});
            obs.monomials.push_back({get_int(ms[i], path + ".a", "a", 1, 1, 16),
                                     get_int(ms[i], path + ".b", "b", 2, 1, 16),
                                     get_int(ms[i], path + ".power", "power", 1, 1, 64)});
        }
    }
    if (v.contains("indicators")) {
        const json& is = v.at("indicators");
        if (!is.is_array()) fail("observable.indicators", "must be an array");
        for (std::size_t i = 0; i < is.size(); ++i) {
            std::string path = detail::fmt("observable.indicators[%zu]", i);
            require_object(is[i], path);
            check_keys(is[i], path, {"a", "b", "threshold", "less_equal"});
            obs.indicators.push_back(
                {get_int(is[i], path + ".a", "a", 1, 1, 16),
                 get_int(is[i], path + ".b", "b", 2, 1, 16),
                 get_number(is[i], path + ".threshold", "threshold", 0.0),
                 get_bool(is[i], path + ".less_equal", "less_equal", true)});
        }
    }
    try {
        obs.validate();
    } catch (const InvalidParameter& e) {
        fail("observable", e.what());
    }
    return obs;
}

RunConfig::Tolerances parse_tolerances(const json& v) {
    require_object(v, "tolerances");
    check_keys(v, "tolerances",
               {"merge_tol", "ultra_tol", "max_violation_fraction", "alpha", "z_max", "fd_eps"});
    RunConfig::Tolerances tol;
    tol.merge_tol = get_number(v, "tolerances.merge_tol", "merge_tol", tol.merge_tol);
    tol.ultra_tol = get_number(v, "tolerances.ultra_tol", "ultra_tol", tol.ultra_tol);
    tol.max_violation_fraction = get_number(v, "tolerances.max_violation_fraction",
                                            "max_violation_fraction", tol.max_violation_fraction);
    tol.alpha = get_number(v, "tolerances.alpha", "alpha", tol.alpha);
    tol.z_max = get_number(v, "tolerances.z_max", "z_max", tol.z_max);
    tol.fd_eps = get_number(v, "tolerances.fd_eps", "fd_eps", tol.fd_eps);
    if (tol.merge_tol < 0.0) fail("tolerances.merge_tol", "must be >= 0");
    if (tol.ultra_tol < 0.0) fail("tolerances.ultra_tol", "must be >= 0");
    if (tol.max_violation_fraction < 0.0 || tol.max_violation_fraction > 1.0)
        fail("tolerances.max_violation_fraction", "must be in [0, 1]");
    if (tol.alpha <= 0.0 || tol.alpha >= 1.0) fail("tolerances.alpha", "must be in (0, 1)");
    if (tol.z_max <= 0.0) fail("tolerances.z_max", "must be > 0");
    if (tol.fd_eps <= 0.0 || tol.fd_eps > 0.1) fail("tolerances.fd_eps", "must be in (0, 0.1]");
    return tol;
}

} // namespace

const std::vector<std::string>& known_experiments() {
    static const std::vector<std::string> names = {
        "sample-rpc", "evolve",   "qs-test",  "gg-test",  "ac-test",
        "ultra-test", "velocity", "pressure", "clt-demo",
    };
    return names;
}

RunConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidParameter("config root must be an object");
    check_keys(j, "",
               {"experiment", "seed", "n_atoms", "n_replicas", "draws_per_replica", "x_atoms",
                "psi", "r", "T", "s", "observable", "tolerances", "output_path"});

    RunConfig cfg;
    if (!j.contains("experiment")) fail("experiment", "required");
    cfg.experiment = get_string(j, "experiment", "experiment", "");
    const auto& known = known_experiments();
    if (std::find(known.begin(), known.end(), cfg.experiment) == known.end())
        fail("experiment", detail::fmt("unknown experiment \"%s\"", cfg.experiment.c_str()));

    cfg.seed = get_count(j, "seed", "seed", cfg.seed, 0);
    cfg.n_atoms = get_count(j, "n_atoms", "n_atoms", cfg.n_atoms, 1);
    cfg.n_replicas = get_count(j, "n_replicas", "n_replicas", cfg.n_replicas, 1);
    cfg.draws_per_replica =
        get_count(j, "draws_per_replica", "draws_per_replica", cfg.draws_per_replica, 1);
    if (j.contains("x_atoms")) cfg.x_atoms = parse_x_atoms(j.at("x_atoms"));
    if (j.contains("psi")) cfg.psi = parse_psi(j.at("psi"));
    cfg.r = get_int(j, "r", "r", cfg.r, 1, 64);
    cfg.T = get_count(j, "T", "T", cfg.T, 1);
    cfg.s = get_int(j, "s", "s", cfg.s, 1, 16);
    if (j.contains("observable")) cfg.observable = parse_observable(j.at("observable"));
    if (j.contains("tolerances")) cfg.tol = parse_tolerances(j.at("tolerances"));
    cfg.output_path = get_string(j, "output_path", "output_path", cfg.output_path);
    if (cfg.output_path.empty()) fail("output_path", "must be nonempty");

    std::uint64_t per_draw = std::max<std::uint64_t>({std::uint64_t(cfg.s),
                                                      std::uint64_t(cfg.observable.s),
                                                      std::uint64_t(cfg.T), 1});
    if (cfg.n_replicas > kRunDrawBudget / cfg.draws_per_replica ||
        cfg.n_replicas * cfg.draws_per_replica > kRunDrawBudget / per_draw)
        throw BudgetExceeded(detail::fmt(
            "%" PRIu64 " replicas of %" PRIu64 " draws exceed the run budget",
            std::uint64_t(cfg.n_replicas), std::uint64_t(cfg.draws_per_replica)));

    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParameter("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidParameter(path + ": " + e.what());
    }
    return parse_config(j);
}

nlohmann::json canonical_config(const RunConfig& cfg) {
    json atoms = json::array();
    for (const auto& a : cfg.x_atoms) atoms.push_back({{"q", a.location}, {"mass", a.mass}});

    json monomials = json::array();
    for (const auto& m : cfg.observable.monomials)
        monomials.push_back({{"a", m.a}, {"b", m.b}, {"power", m.power}});
    json indicators = json::array();
    for (const auto& i : cfg.observable.indicators)
        indicators.push_back({{"a", i.a},
                              {"b", i.b},
                              {"threshold", i.threshold},
                              {"less_equal", i.less_equal}});

    return json{
        {"experiment", cfg.experiment},
        {"seed", cfg.seed},
        {"n_atoms", cfg.n_atoms},
        {"n_replicas", cfg.n_replicas},
        {"draws_per_replica", cfg.draws_per_replica},
        {"x_atoms", atoms},
        {"psi",
         {{"kind", cfg.psi.kind == PsiSpec::Kind::linear ? "linear" : "smooth_shifted"},
          {"lambda", cfg.psi.lambda},
          {"beta", cfg.psi.beta},
          {"h", cfg.psi.h},
          {"centered", cfg.psi.centered}}},
        {"r", cfg.r},
        {"T", cfg.T},
        {"s", cfg.s},
        {"observable", {{"s", cfg.observable.s}, {"monomials", monomials},
                        {"indicators", indicators}}},
        {"tolerances",
         {{"merge_tol", cfg.tol.merge_tol},
          {"ultra_tol", cfg.tol.ultra_tol},
          {"max_violation_fraction", cfg.tol.max_violation_fraction},
          {"alpha", cfg.tol.alpha},
          {"z_max", cfg.tol.z_max},
          {"fd_eps", cfg.tol.fd_eps}}},
        {"output_path", cfg.output_path},
    };
}

std::string config_hash(const RunConfig& cfg) {
    std::string dump = canonical_config(cfg).dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return detail::fmt("%016" PRIx64, h);
}

OverlapCDF overlap_cdf_from_config(const RunConfig& cfg) {
    return OverlapCDF(cfg.x_atoms, false);
}

} // namespace rost

#include "mfc/config.hpp"

#include <filesystem>

#include "json.hpp"
#include "mfc/io.hpp"

namespace mfc {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& what) { throw Error("cli", "config", what); }

// A number is accepted wherever a length-1 vector is expected.
Vec read_vec(const json& j, int len, const std::string& key) {
    Vec v(len);
    if (j.is_number()) {
        if (len != 1) bad(key + ": scalar given for a vector of length " + std::to_string(len));
        v(0) = j.get<double>();
        return v;
    }
    if (!j.is_array() || static_cast<int>(j.size()) != len) bad(key + ": expected " + std::to_string(len) + " numbers");
    for (int i = 0; i < len; ++i) v(i) = j[i].get<double>();
    return v;
}

// Row-major nested arrays; a number is accepted for 1 x 1.
Mat read_mat(const json& j, int rows, int cols, const std::string& key) {
    Mat m(rows, cols);
    if (j.is_number()) {
        if (rows != 1 || cols != 1) bad(key + ": scalar given for a matrix");
        m(0, 0) = j.get<double>();
        return m;
    }
    if (!j.is_array() || static_cast<int>(j.size()) != rows) bad(key + ": expected " + std::to_string(rows) + " rows");
    for (int r = 0; r < rows; ++r) m.row(r) = read_vec(j[r], cols, key).transpose();
    return m;
}

Mat mat_or_zero(const json& o, const char* key, int rows, int cols) {
    return o.contains(key) ? read_mat(o[key], rows, cols, key) : Mat::Zero(rows, cols);
}

// Per-Brownian-component matrices: a list of n matrices, or for n = 1 a
// single matrix.
std::vector<Mat> read_columns(const json& o, const char* key, int n, int cols) {
    std::vector<Mat> out(n, Mat::Zero(n, cols));
    if (!o.contains(key)) return out;
    const json& j = o[key];
    if (n == 1 && !(j.is_array() && j.size() == 1 && j[0].is_array() && j[0].size() == 1 && j[0][0].is_array())) {
        out[0] = read_mat(j, 1, cols, key);
        return out;
    }
    if (!j.is_array() || static_cast<int>(j.size()) != n) bad(std::string(key) + ": expected one entry per component");
    for (int c = 0; c < n; ++c) out[c] = read_mat(j[c], n, cols, key);
    return out;
}

TimeProfile read_profile(const json& j) {
    TimeProfile p;
    std::string kind = j.value("kind", "constant");
    if (kind == "constant") p.kind = TimeProfile::Kind::Constant;
    else if (kind == "linear") p.kind = TimeProfile::Kind::Linear;
    else if (kind == "sine") p.kind = TimeProfile::Kind::Sine;
    else bad("unknown time profile '" + kind + "'");
    p.slope = j.value("slope", 0.0);
    p.amplitude = j.value("amplitude", 0.0);
    p.frequency = j.value("frequency", 1.0);
    return p;
}

LinearDynamics read_dynamics(const json& o, int n, int d) {
    LinearDynamics dyn = LinearDynamics::zeros(n, d);
    if (o.contains("f0")) dyn.f0 = read_vec(o["f0"], n, "f0");
    dyn.f1 = mat_or_zero(o, "f1", n, n);
    dyn.f2 = mat_or_zero(o, "f2", n, n);
    dyn.f3 = mat_or_zero(o, "f3", n, d);
    if (o.contains("s0")) {
        const json& j = o["s0"];
        if (n == 1 && j.is_number()) dyn.s0[0] = read_vec(j, 1, "s0");
        else {
            if (!j.is_array() || static_cast<int>(j.size()) != n) bad("s0: expected one column per component");
            for (int c = 0; c < n; ++c) dyn.s0[c] = read_vec(j[c], n, "s0");
        }
    }
    dyn.s1 = read_columns(o, "s1", n, n);
    dyn.s2 = read_columns(o, "s2", n, n);
    dyn.s3 = read_columns(o, "s3", n, d);
    if (o.contains("drift_profile")) dyn.drift_profile = read_profile(o["drift_profile"]);
    if (o.contains("diffusion_profile")) dyn.diffusion_profile = read_profile(o["diffusion_profile"]);
    dyn.bound = o.value("bound", 10.0);
    return dyn;
}

std::shared_ptr<const CostModel> read_cost(const json& o, int n, int d) {
    std::string type = o.value("type", "lq_meanfield");
    if (type == "lq_meanfield" || type == "quadratic_plus_quartic") {
        LqWeights w;
        w.q = mat_or_zero(o, "q", n, n);
        w.qbar = mat_or_zero(o, "qbar", n, n);
        w.s = mat_or_zero(o, "s", n, n);
        w.r = o.contains("r") ? read_mat(o["r"], d, d, "r") : Mat(Mat::Identity(d, d));
        w.qT = mat_or_zero(o, "qT", n, n);
        w.qbarT = mat_or_zero(o, "qbarT", n, n);
        w.sT = mat_or_zero(o, "sT", n, n);
        double kappa = o.value("kappa", 0.0), kappa_x = o.value("kappa_x", 0.0);
        if (type == "lq_meanfield" && (kappa != 0.0 || kappa_x != 0.0))
            bad("lq_meanfield takes no quartic coefficients; use quadratic_plus_quartic");
        return std::make_shared<QuadraticCost>(w, kappa, kappa_x);
    }
    return make_registered_cost(type, n, d);
}

std::uint64_t read_seed(const json& j) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
        bad("seeds must be non-negative integers");
    return j.get<std::uint64_t>();
}

}  // namespace

ProblemConfig parse_problem_config(const std::string& text, const std::string& base_dir) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        bad(std::string("parse error: ") + e.what());
    }
    try {
        ProblemConfig cfg;
        ProblemSpec& spec = cfg.spec;
        spec.name = root.value("name", "unnamed");
        spec.n = root.value("n", 1);
        spec.d = root.value("d", 1);
        if (spec.n < 1 || spec.n > kMaxDim || spec.d < 1 || spec.d > kMaxDim)
            bad("dimensions must lie in 1.." + std::to_string(kMaxDim));
        spec.T = root.value("T", 1.0);
        cfg.t0 = root.value("t0", 0.0);
        if (!(spec.T > cfg.t0)) bad("need T > t0");
        spec.dynamics = read_dynamics(root.value("dynamics", json::object()), spec.n, spec.d);
        spec.cost = read_cost(root.value("cost", json::object()), spec.n, spec.d);

        json init = root.value("initial", json::object());
        cfg.initial.kind = init.value("kind", "gaussian");
        cfg.initial.antithetic = init.value("antithetic", false);
        if (cfg.initial.kind == "gaussian") {
            cfg.initial.mean = init.contains("mean") ? read_vec(init["mean"], spec.n, "mean") : Vec(Vec::Zero(spec.n));
            cfg.initial.stddev =
                init.contains("stddev") ? read_vec(init["stddev"], spec.n, "stddev") : Vec(Vec::Ones(spec.n));
        } else if (cfg.initial.kind == "csv") {
            std::filesystem::path p = init.at("path").get<std::string>();
            cfg.initial.path = p.is_absolute() ? p.string() : (std::filesystem::path(base_dir) / p).string();
        } else {
            bad("unknown initial law '" + cfg.initial.kind + "'");
        }

        cfg.particles = root.value("particles", 4096);
        cfg.steps = root.value("steps", 50);
        if (cfg.particles < 2 || cfg.steps < 1) bad("need particles >= 2 and steps >= 1");
        if (root.contains("seeds")) {
            cfg.seeds.clear();
            for (const auto& s : root["seeds"]) cfg.seeds.push_back(read_seed(s));
            if (cfg.seeds.empty()) bad("seeds must not be empty");
        }

        json so = root.value("solver", json::object());
        SolverOptions& o = cfg.solver;
        o.picard_max = so.value("picard_max", o.picard_max);
        o.picard_tol = so.value("picard_tol", o.picard_tol);
        o.damping = so.value("damping", o.damping);
        std::string basis = so.value("basis", "affine");
        if (basis == "affine") o.basis = Basis::Affine;
        else if (basis == "quadratic") o.basis = Basis::Quadratic;
        else bad("unknown basis '" + basis + "'");
        o.continuation_steps = so.value("continuation_steps", o.continuation_steps);
        o.max_bisections = so.value("max_bisections", o.max_bisections);
        o.auto_continuation = so.value("auto_continuation", o.auto_continuation);
        o.divergence_factor = so.value("divergence_factor", o.divergence_factor);
        o.newton.foc_tol = so.value("foc_tol", o.newton.foc_tol);
        o.newton.max_iter = so.value("newton_max_iter", o.newton.max_iter);
        o.validate();

        json layers = root.value("layers", json::object());
        cfg.layers.bellman = layers.value("bellman", false);
        cfg.layers.master = layers.value("master", false);
        cfg.master_point = root.contains("master_point") ? read_vec(root["master_point"], spec.n, "master_point")
                                                         : Vec(Vec::Zero(spec.n));
        cfg.master_probes = root.value("master_probes", 256);
        return cfg;
    } catch (const json::exception& e) {
        bad(std::string("bad field: ") + e.what());
    }
}

ProblemConfig load_problem_config(const std::string& path) {
    std::filesystem::path p(path);
    return parse_problem_config(read_text_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

ParticleEnsemble make_initial(const ProblemConfig& cfg, int N, std::uint64_t seed) {
    if (cfg.initial.kind == "csv") {
        ParticleEnsemble m = ensemble_from_csv(read_text_file(cfg.initial.path));
        return cfg.initial.antithetic ? antithetic(m) : m;
    }
    if (!cfg.initial.antithetic) return gaussian_ensemble(N, cfg.initial.mean, cfg.initial.stddev, seed);
    if (N % 2 != 0) throw Error("cli", "config", "antithetic initial law needs an even particle count");
    return antithetic(gaussian_ensemble(N / 2, cfg.initial.mean, cfg.initial.stddev, seed));
}

}  // namespace mfc

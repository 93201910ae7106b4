#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfc/bench.hpp"
#include "mfc/config.hpp"
#include "mfc/io.hpp"

using nlohmann::json;
using namespace mfc;

namespace {

constexpr const char* kVersion = "0.1.0";

struct RunConfig {
    std::string command;
    std::string config_path;
    int particles = -1, steps = -1, jobs = 1;
    std::int64_t seed = -1;
    double tolerance = -1.0;
    std::string out_dir = ".";
    std::vector<std::string> flows;  // gateaux, spatial
    std::vector<double> probe;       // master evaluation point
    std::string suite = "lq";
    std::vector<int> ns, ks;
    int samples = 1000;
};

json vec_json(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json mat_json(const Mat& m) {
    json a = json::array();
    for (int r = 0; r < m.rows(); ++r) a.push_back(vec_json(m.row(r).transpose()));
    return a;
}

std::string timestamp() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

json provenance(const RunConfig& rc, const ProblemConfig& cfg, int N, int K, std::uint64_t seed) {
    return {{"command", rc.command},
            {"config", rc.config_path},
            {"problem", cfg.spec.name},
            {"seed", seed},
            {"seeds", cfg.seeds},
            {"N", N},
            {"K", K},
            {"t0", cfg.t0},
            {"jobs", rc.jobs},
            {"versions",
             {{"mfc", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__}}},
            {"timestamp", timestamp()}};
}

json residual_json(const ResidualReport& r) {
    return {{"forward_reconstruction", r.forward_reconstruction},
            {"backward_one_step", r.backward_one_step},
            {"martingale", r.martingale},
            {"foc_max", r.foc_max}};
}

json diag_json(const SolveDiagnostics& d) {
    return {{"iterations", d.iterations},
            {"converged", d.converged},
            {"diverged", d.diverged},
            {"final_delta", d.deltas.empty() ? 0.0 : d.deltas.back()},
            {"rho_schedule", d.rho_schedule},
            {"newton_max_iterations", d.newton_max_iterations}};
}

void write_json(const RunConfig& rc, const std::string& name, const json& j) {
    write_text_file((std::filesystem::path(rc.out_dir) / name).string(), j.dump(2) + "\n");
}

void write_file(const RunConfig& rc, const std::string& name, const std::string& text) {
    write_text_file((std::filesystem::path(rc.out_dir) / name).string(), text);
}

struct Setup {
    ProblemConfig cfg;
    int N = 0, K = 0;
    std::uint64_t seed = 0;
    ParticleEnsemble initial;
};

Setup prepare(const RunConfig& rc) {
    Setup s;
    s.cfg = load_problem_config(rc.config_path);
    if (rc.particles > 0) s.cfg.particles = rc.particles;
    if (rc.steps > 0) s.cfg.steps = rc.steps;
    if (rc.seed >= 0) s.cfg.seeds = {static_cast<std::uint64_t>(rc.seed)};
    if (rc.tolerance > 0.0) s.cfg.solver.picard_tol = rc.tolerance;
    s.cfg.solver.jobs = rc.jobs;
    if (!rc.probe.empty()) {
        if (static_cast<int>(rc.probe.size()) != s.cfg.spec.n)
            throw Error("cli", "config", "--probe needs one coordinate per state component");
        s.cfg.master_point = Eigen::Map<const Eigen::VectorXd>(rc.probe.data(), s.cfg.spec.n);
    }
    s.N = s.cfg.particles;
    s.K = s.cfg.steps;
    s.seed = s.cfg.seeds.front();
    // The initial sample uses its own seed so that changing the Brownian seed
    // keeps the same initial measure.
    s.initial = make_initial(s.cfg, s.N, 0x5eed0000ULL + s.N);
    s.N = s.initial.size();
    std::filesystem::create_directories(rc.out_dir);
    return s;
}

FbsdeSolution run_solver(const Setup& s) {
    validate_spec(s.cfg.spec, s.cfg.layers);
    TimeGrid grid = make_grid(s.cfg.t0, s.cfg.spec.T, s.K);
    auto noise = make_noise(s.initial, grid, s.cfg.spec.n, s.seed, 0, s.cfg.solver.jobs);
    return solve(s.cfg.spec, s.initial, grid, noise, s.cfg.solver);
}

int cmd_solve(const RunConfig& rc) {
    Setup s = prepare(rc);
    const ProblemSpec& spec = s.cfg.spec;
    FbsdeSolution sol = run_solver(s);
    write_file(rc, "solution.csv", solution_to_csv(sol, spec.n, spec.d));
    json rep = {{"value", evaluate_value(spec, sol)},
                {"gradient_norm", std::sqrt(s.initial.weights.dot(sol.P[0].rowwise().squaredNorm()))},
                {"rho", sol.rho},
                {"diagnostics", diag_json(sol.diag)},
                {"residuals", residual_json(residuals(spec, sol))}};
    if (!rc.flows.empty()) {
        std::vector<Flow> flows;
        for (const auto& f : rc.flows) {
            if (f == "gateaux") {
                flows.push_back(gateaux_flow(spec, sol, Eigen::MatrixXd::Ones(s.N, spec.n), s.cfg.solver));
            } else if (f == "spatial") {
                for (auto& fl : spatial_jacobian(spec, sol, s.cfg.solver)) flows.push_back(std::move(fl));
            } else {
                throw Error("cli", "config", "unknown flow '" + f + "' (gateaux, spatial)");
            }
        }
        write_file(rc, "flows.csv", flows_to_csv(flows, sol, spec.n, spec.d));
        json fl = json::array();
        for (const auto& f : flows) fl.push_back({{"iterations", f.sol.diag.iterations}, {"column", f.column}});
        rep["flows"] = fl;
    }
    rep["provenance"] = provenance(rc, s.cfg, s.N, s.K, s.seed);
    write_json(rc, "report.json", rep);
    std::cout << "value " << rep["value"].get<double>() << "  iterations " << sol.diag.iterations << '\n';
    return 0;
}

int cmd_verify(const RunConfig& rc) {
    Setup s = prepare(rc);
    const ProblemSpec& spec = s.cfg.spec;
    json props = json::array();
    bool all = true;
    auto add = [&](const std::string& name, bool pass, json detail) {
        props.push_back({{"property", name}, {"pass", pass}, {"detail", std::move(detail)}});
        all = all && pass;
        std::cout << (pass ? "PASS " : "FAIL ") << name << '\n';
    };
    ValidationReport vr = validate_spec(spec, s.cfg.layers);
    for (const auto& c : vr.checks) add("model." + c.name, c.passed, c.detail);

    FbsdeSolution sol = run_solver(s);
    ResidualReport res = residuals(spec, sol);
    add("first_order_condition", res.foc_max <= 1e-8, residual_json(res));

    Eigen::MatrixXd dir = (s.initial.states.rowwise() - ensemble_mean(s.initial).transpose()) * 0.5;
    dir.array() += 1.0;
    GradientCheck gc = gradient_identity_check(spec, sol, dir, {1e-1, 1e-2, 1e-3});
    add("gradient_identity", gc.slope >= 0.8 || gc.error.back() <= 1e-8,
        {{"slope", gc.slope}, {"errors", gc.error}, {"predicted", gc.predicted}});

    int K = s.K;
    RestartCheck fc = flow_property_check(spec, sol, K / 2, s.seed, s.cfg.solver);
    add("flow_property", fc.restart_error <= 2.0 * fc.one_step_error + 1e-9,
        {{"restart_error", fc.restart_error}, {"one_step_error", fc.one_step_error}});

    if (K >= 6) {
        std::vector<int> knots{K / 6, K / 3, K / 2, 2 * K / 3, 5 * K / 6};
        auto se = sensitivity_errors(spec, sol, knots, s.seed + 1000, s.cfg.solver);
        double worst = *std::max_element(se.begin(), se.end());
        add("sensitivity", worst <= 0.05, {{"knots", knots}, {"errors", se}});
    }

    MonotonicityReport mr = monotonicity_certificate(spec, rc.samples, s.seed);
    add("monotonicity", mr.violations == 0,
        {{"samples", mr.samples},
         {"violations", mr.violations},
         {"lambda_hat", mr.lambda_hat},
         {"alpha", mr.alpha},
         {"alpha_needed", mr.alpha_needed}});

    json rep = {{"all_pass", all}, {"properties", props}, {"provenance", provenance(rc, s.cfg, s.N, s.K, s.seed)}};
    write_json(rc, "report.json", rep);
    return all ? 0 : 3;
}

int cmd_bellman(const RunConfig& rc) {
    Setup s = prepare(rc);
    BellmanReport b = bellman_residual(s.cfg.spec, s.initial, s.cfg.t0, s.K, s.seed, s.cfg.solver);
    json rep = {{"value", b.value},
                {"dV_dt_fd", b.dVdt_fd},
                {"hamiltonian_integral", b.h_integral},
                {"bellman_residual_raw", b.residual_raw},
                {"bellman_residual_rel", b.residual_rel},
                {"provenance", provenance(rc, s.cfg, s.N, s.K, s.seed)}};
    write_json(rc, "report.json", rep);
    std::cout << "bellman residual raw " << b.residual_raw << "  rel " << b.residual_rel << '\n';
    return 0;
}

int cmd_master(const RunConfig& rc) {
    Setup s = prepare(rc);
    MasterSettings st;
    st.probes = s.cfg.master_probes;
    MasterReport m = evaluate_master(s.cfg.spec, s.cfg.master_point, s.initial, s.cfg.t0, s.K, s.seed, s.cfg.solver, st);
    json rep = {{"master",
                 {{"x", vec_json(m.x)},
                  {"U", m.U},
                  {"D_xU", vec_json(m.D_xU)},
                  {"D_xxU", mat_json(m.D_xxU)},
                  {"dU_dt", m.dUdt},
                  {"hamiltonian", m.hamiltonian},
                  {"drift_term", m.drift_term},
                  {"trace_term", m.trace_term},
                  {"dH_dnu_term", m.dH_term},
                  {"residual_raw", m.residual_raw},
                  {"residual_rel", m.residual_rel},
                  {"terminal_gap", m.terminal_gap},
                  {"fd_eps", m.eps},
                  {"fd_error_costate", m.fd_error_p},
                  {"fd_error_jacobian", m.fd_error_jac},
                  {"fd_value_gap", m.fd_value_gap}}},
                {"provenance", provenance(rc, s.cfg, s.N, s.K, s.seed)}};
    write_json(rc, "report.json", rep);
    std::cout << "master residual raw " << m.residual_raw << "  rel " << m.residual_rel << '\n';
    return 0;
}

int cmd_bench(const RunConfig& rc) {
    Setup s = prepare(rc);
    const ProblemSpec& spec = s.cfg.spec;
    json rep;
    bool pass = true;
    if (rc.suite == "lq") {
        // Seeds from the config unless overridden.
        std::vector<LqBenchmarkRow> rows;
        double mean_value_err = 0.0, worst_feedback = 0.0;
        for (auto seed : s.cfg.seeds) {
            rows.push_back(run_lq_benchmark(spec, s.initial, s.cfg.t0, s.K, seed, s.cfg.solver));
            mean_value_err += rows.back().value_rel_error / s.cfg.seeds.size();
            worst_feedback = std::max(worst_feedback, rows.back().feedback_rel_error);
        }
        write_file(rc, "bench.csv", bench_csv(rows));
        RiccatiSolution R = solve_riccati(spec, s.cfg.t0, s.K);
        bool value_ok = mean_value_err <= 0.03, feedback_ok = worst_feedback <= 0.05;
        pass = value_ok && feedback_ok;
        rep = {{"suite", "lq"},
               {"mean_value_rel_error", mean_value_err},
               {"value_threshold", 0.03},
               {"value_pass", value_ok},
               {"max_feedback_rel_error", worst_feedback},
               {"feedback_threshold", 0.05},
               {"feedback_pass", feedback_ok},
               {"riccati_self_check", R.self_check}};
        std::cout << "value error " << mean_value_err << (value_ok ? " PASS" : " FAIL") << "  feedback error "
                  << worst_feedback << (feedback_ok ? " PASS" : " FAIL") << '\n';
    } else if (rc.suite == "deterministic") {
        DeterministicBenchmarkRow r = run_deterministic_benchmark(spec, s.initial, s.cfg.t0, s.K, s.cfg.solver);
        pass = r.control_rms_error <= 1e-3 && r.oracle_residual <= 1e-10;
        std::string csv = "N,K,control_rms_error,control_rel_error,costate_rel_error,value,value_oracle,"
                          "oracle_residual,runtime_s\n" +
                          std::to_string(r.N) + "," + std::to_string(r.K) + "," + format_double(r.control_rms_error) +
                          "," + format_double(r.control_rel_error) + "," + format_double(r.costate_rel_error) + "," +
                          format_double(r.value) + "," + format_double(r.value_oracle) + "," +
                          format_double(r.oracle_residual) + "," + format_double(r.runtime_s) + "\n";
        write_file(rc, "bench.csv", csv);
        rep = {{"suite", "deterministic"},
               {"control_rms_error", r.control_rms_error},
               {"threshold", 1e-3},
               {"oracle_residual", r.oracle_residual},
               {"pass", pass}};
        std::cout << "control rms error " << r.control_rms_error << (pass ? " PASS" : " FAIL") << '\n';
    } else {
        throw Error("cli", "config", "unknown suite '" + rc.suite + "' (lq, deterministic)");
    }
    rep["provenance"] = provenance(rc, s.cfg, s.N, s.K, s.seed);
    write_json(rc, "report.json", rep);
    return pass ? 0 : 3;
}

int cmd_converge(const RunConfig& rc) {
    Setup s = prepare(rc);
    std::vector<int> ns = rc.ns.empty() ? std::vector<int>{256, 1024, 4096} : rc.ns;
    std::vector<int> ks = rc.ks.empty() ? std::vector<int>{10, 20, 40} : rc.ks;
    const ProblemConfig& cfg = s.cfg;
    auto initial = [&](int N) { return make_initial(cfg, N, 0x5eed0000ULL + N); };
    ConvergenceStudy st = convergence_study(cfg.spec, initial, cfg.t0, ns, ks, cfg.seeds, cfg.solver);
    std::string csv = "N,K,seeds,value_rel_error,value_rel_error_sd,feedback_rel_error\n";
    for (const auto& r : st.rows)
        csv += std::to_string(r.N) + "," + std::to_string(r.K) + "," + std::to_string(r.seeds) + "," +
               format_double(r.value_error) + "," + format_double(r.value_error_sd) + "," +
               format_double(r.feedback_error) + "\n";
    write_file(rc, "bench.csv", csv);
    json rep = {{"rate_dt", st.rate_dt}, {"rate_N", st.rate_N}, {"provenance", provenance(rc, cfg, s.N, s.K, s.seed)}};
    write_json(rc, "report.json", rep);
    std::cout << "feedback error rate in dt " << st.rate_dt << ", in N " << st.rate_N << '\n';
    return 0;
}

void print_error(const std::string& module, const std::string& kind, const std::string& message) {
    json e = {{"error", {{"module", module}, {"kind", kind}, {"message", message}}}};
    std::cout << e.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-field control FBSDE solver"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    RunConfig rc;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", rc.config_path, "problem file (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--particles,-N", rc.particles, "number of particles");
        sub->add_option("--steps,-K", rc.steps, "number of time steps");
        sub->add_option("--seed", rc.seed, "Brownian seed (overrides the config seeds)");
        sub->add_option("--tolerance", rc.tolerance, "Picard tolerance");
        sub->add_option("--out,-o", rc.out_dir, "output directory");
        sub->add_option("--jobs,-j", rc.jobs, "worker threads")->check(CLI::PositiveNumber);
    };
    auto* solve_cmd = app.add_subcommand("solve", "solve the FBSDE system; writes solution.csv and report.json");
    common(solve_cmd);
    solve_cmd->add_option("--flows", rc.flows, "derivative flows to emit: gateaux, spatial");
    auto* verify_cmd = app.add_subcommand("verify", "run the invariant suite");
    common(verify_cmd);
    verify_cmd->add_option("--samples", rc.samples, "monotonicity samples");
    auto* bellman_cmd = app.add_subcommand("bellman", "Bellman residual");
    common(bellman_cmd);
    auto* master_cmd = app.add_subcommand("master", "master field and master-equation residual");
    common(master_cmd);
    master_cmd->add_option("--probe", rc.probe, "evaluation point x");
    auto* bench_cmd = app.add_subcommand("bench", "oracle benchmarks; writes bench.csv");
    common(bench_cmd);
    bench_cmd->add_option("--suite", rc.suite, "lq or deterministic");
    auto* conv_cmd = app.add_subcommand("converge", "convergence study against the Riccati oracle");
    common(conv_cmd);
    conv_cmd->add_option("--ns", rc.ns, "particle counts");
    conv_cmd->add_option("--ks", rc.ks, "step counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        print_error("cli", "config", e.what());
        return 2;
    }
    rc.command = app.get_subcommands().front()->get_name();
    try {
        if (rc.command == "solve") return cmd_solve(rc);
        if (rc.command == "verify") return cmd_verify(rc);
        if (rc.command == "bellman") return cmd_bellman(rc);
        if (rc.command == "master") return cmd_master(rc);
        if (rc.command == "bench") return cmd_bench(rc);
        return cmd_converge(rc);
    } catch (const Error& e) {
        print_error(e.module(), e.kind(), e.what());
        return e.kind() == "config" ? 2 : 1;
    } catch (const std::exception& e) {
        print_error("cli", "internal", e.what());
        return 1;
    }
}

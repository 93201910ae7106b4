#include <doctest.h>

#include <cmath>

#include "mfc/analysis.hpp"
#include "mfc/bench.hpp"
#include "mfc/config.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::lq_spec;
using mfc::testing::vec1;

namespace {

FbsdeSolution solve_lq(int N, int K, std::uint64_t seed, int jobs = 1, double sigma = 0.6) {
    ProblemSpec spec = lq_spec(sigma);
    ParticleEnsemble m = antithetic(gaussian_ensemble(N / 2, vec1(0.0), vec1(1.0), 42));
    TimeGrid g = make_grid(0.0, spec.T, K);
    SolverOptions opt;
    opt.jobs = jobs;
    return solve(spec, m, g, make_noise(m, g, 1, seed, 0, jobs), opt);
}

}  // namespace

TEST_CASE("LQ solve converges near the Riccati value") {
    ProblemSpec spec = lq_spec();
    FbsdeSolution sol = solve_lq(1024, 20, 1);
    CHECK(sol.diag.converged);
    ResidualReport r = residuals(spec, sol);
    CHECK(r.foc_max <= 1e-8);
    CHECK(r.forward_reconstruction <= 1e-12);
    RiccatiSolution ric = solve_riccati(spec, 0.0, 20);
    double exact = ric.value(0, sol.initial);
    CHECK(std::abs(evaluate_value(spec, sol) - exact) / std::abs(exact) < 0.05);
    // Costate at t0 against Pi (x - m) + Gamma m.
    Eigen::MatrixXd P = ric.costate(0, sol.initial.states, ensemble_mean(sol.initial));
    CHECK((sol.P[0] - P).norm() / P.norm() < 0.05);
}

TEST_CASE("worker count does not change the solution") {
    FbsdeSolution a = solve_lq(256, 10, 3, 1), b = solve_lq(256, 10, 3, 4);
    for (int k = 0; k <= 10; ++k) {
        CHECK((a.Y[k].array() == b.Y[k].array()).all());
        CHECK((a.P[k].array() == b.P[k].array()).all());
    }
    CHECK(a.diag.iterations == b.diag.iterations);
}

TEST_CASE("zero-horizon knots: the terminal costate is the terminal gradient") {
    ProblemSpec spec = lq_spec();
    FbsdeSolution sol = solve_lq(64, 5, 2);
    const int K = 5;
    Vec mK = sol.mean[K];
    for (int i = 0; i < sol.particles(); ++i) {
        Jet j = spec.cost->terminal(Vec(sol.Y[K].row(i).transpose()), mK, 1);
        // Terminal costate adds the mean-field term E[d gT / dm] = qbarT m (sT = 0).
        double expect = j.gx()(0) + 0.5 * mK(0);
        CHECK(sol.lambda[K](i, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("deterministic problem converges to the shooting solution at first order") {
    ProblemSpec spec = lq_spec(0.0);
    LqWeights w = std::static_pointer_cast<const QuadraticCost>(spec.cost)->weights();
    spec.cost = std::make_shared<QuadraticCost>(w, 0.2, 0.0);
    ParticleEnsemble m = gaussian_ensemble(8, vec1(1.0), vec1(0.5), 5);
    SolverOptions opt;
    double e1 = run_deterministic_benchmark(spec, m, 0.0, 40, opt).control_rms_error;
    double e2 = run_deterministic_benchmark(spec, m, 0.0, 80, opt).control_rms_error;
    CHECK(e2 < e1);
    CHECK(std::log2(e1 / e2) == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("stiff problem needs continuation at full damping") {
    ProblemConfig cfg = load_problem_config(MFC_SOURCE_DIR "/configs/stiff_continuation.json");
    ParticleEnsemble m = make_initial(cfg, cfg.particles, 1);
    TimeGrid g = make_grid(0.0, cfg.spec.T, cfg.steps);
    auto noise = make_noise(m, g, 1, 1);
    SolverOptions plain = cfg.solver;
    plain.auto_continuation = false;
    try {
        solve(cfg.spec, m, g, noise, plain);
        FAIL("plain Picard was expected to stall");
    } catch (const Error& e) {
        CHECK(e.module() == "fbsde");
        CHECK(e.kind() == "solver");
    }
    FbsdeSolution sol = solve(cfg.spec, m, g, noise, cfg.solver);
    CHECK(sol.diag.converged);
    REQUIRE_FALSE(sol.diag.rho_schedule.empty());
    CHECK(sol.diag.rho_schedule.back() == 1.0);
    CHECK(residuals(cfg.spec, sol).foc_max <= 1e-8);
}

TEST_CASE("solver rejects inconsistent inputs") {
    SolverOptions bad;
    bad.damping = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = SolverOptions{};
    bad.picard_tol = -1.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    ProblemSpec spec = lq_spec();
    ParticleEnsemble m = gaussian_ensemble(16, vec1(0.0), vec1(1.0), 1);
    TimeGrid g = make_grid(0.0, 1.0, 10), other = make_grid(0.0, 1.0, 12);
    CHECK_THROWS_AS(solve(spec, m, g, make_noise(m, other, 1, 1), SolverOptions{}), Error);
}

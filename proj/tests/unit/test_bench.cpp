#include <doctest.h>

#include <cmath>

#include "mfc/bench.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::lq_spec;
using mfc::testing::vec1;

namespace {

// Scalar Riccati -P' = q + 2aP - beta P^2, P(T) = pT, in closed form via
// the two stationary roots.
double scalar_riccati(double a, double beta, double q, double pT, double tau) {
    double root = std::sqrt(a * a + beta * q);
    double hi = (a + root) / beta, lo = (a - root) / beta;
    double C = (pT - hi) / (pT - lo);
    double e = C * std::exp(-2.0 * root * tau);
    return (hi - e * lo) / (1.0 - e);
}

}  // namespace

TEST_CASE("Riccati integration matches the closed form") {
    ProblemSpec spec = lq_spec(0.6);
    RiccatiSolution ric = solve_riccati(spec, 0.0, 50);
    CHECK(ric.self_check < 1e-9);
    // Deviation gain uses (a, q, qT); mean gain uses a + abar and the
    // aggregated weights q + 2s + qbar, qT + 2sT + qbarT.
    for (int k : {0, 25, 50}) {
        int f = ric.fine_index(k);
        double tau = 1.0 - ric.t[f];
        CHECK(ric.Pi[f](0, 0) == doctest::Approx(scalar_riccati(0.2, 1.0, 1.0, 1.0, tau)).epsilon(1e-9));
        CHECK(ric.Gamma[f](0, 0) == doctest::Approx(scalar_riccati(0.5, 1.0, 1.9, 1.5, tau)).epsilon(1e-9));
    }
    // chi(t0) = 1/2 sigma^2 int Pi, by composite Simpson on the closed form.
    const int M = 20000;
    double integral = 0.0;
    for (int i = 0; i <= M; ++i) {
        double w = (i == 0 || i == M) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        integral += w * scalar_riccati(0.2, 1.0, 1.0, 1.0, double(i) / M);
    }
    integral /= 3.0 * M;
    CHECK(ric.chi[0] == doctest::Approx(0.5 * 0.36 * integral).epsilon(1e-9));

    ParticleEnsemble m = gaussian_ensemble(50, vec1(0.3), vec1(1.0), 2);
    double mbar = ensemble_mean(m)(0);
    double dev = 0.0;
    for (int i = 0; i < 50; ++i) dev += m.weights(i) * std::pow(m.states(i, 0) - mbar, 2);
    double expect = 0.5 * dev * ric.Pi[0](0, 0) + 0.5 * mbar * mbar * ric.Gamma[0](0, 0) + ric.chi[0];
    CHECK(ric.value(0, m) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("Riccati benchmark applicability") {
    std::string why;
    CHECK(riccati_applicable(lq_spec(), &why));
    ProblemSpec quartic = lq_spec();
    LqWeights w = std::static_pointer_cast<const QuadraticCost>(quartic.cost)->weights();
    quartic.cost = std::make_shared<QuadraticCost>(w, 0.1, 0.0);
    CHECK_FALSE(riccati_applicable(quartic, &why));
    CHECK_FALSE(why.empty());
}

TEST_CASE("shooting reproduces the Riccati feedback without noise") {
    ProblemSpec spec = lq_spec(0.0);
    ParticleEnsemble m = gaussian_ensemble(6, vec1(1.0), vec1(0.5), 4);
    ShootingSolution shot = solve_shooting(spec, m, 0.0, 20);
    CHECK(shot.boundary_residual < 1e-10);
    RiccatiSolution ric = solve_riccati(spec, 0.0, 20);
    Eigen::MatrixXd v = ric.control(spec, 0, m.states, ensemble_mean(m));
    CHECK((shot.v[0] - v).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("log slope fit") {
    CHECK(fit_log_slope({1, 10, 100}, {2, 20, 200}) == doctest::Approx(1.0));
    CHECK(fit_log_slope({1, 2, 4}, {1, 0.25, 0.0625}) == doctest::Approx(-2.0));
}

TEST_CASE("LQ benchmark row and CSV") {
    ProblemSpec spec = lq_spec();
    ParticleEnsemble m = antithetic(gaussian_ensemble(256, vec1(0.0), vec1(1.0), 1));
    LqBenchmarkRow row = run_lq_benchmark(spec, m, 0.0, 10, 1, SolverOptions{});
    CHECK(row.value_rel_error < 0.1);
    CHECK(row.feedback_rel_error < 0.1);
    std::string csv = bench_csv({row});
    CHECK(csv.rfind("seed,N,K,value,value_exact", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

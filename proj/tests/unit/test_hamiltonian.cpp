#include <doctest.h>

#include <cmath>

#include "mfc/hamiltonian.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::lq_spec;
using mfc::testing::mat1;
using mfc::testing::vec1;

namespace {

ProblemSpec quartic_spec(double kappa) {
    ProblemSpec spec = lq_spec(0.4);
    spec.dynamics.s1[0] = mat1(0.2);
    spec.dynamics.s2[0] = mat1(-0.1);
    LqWeights w = std::static_pointer_cast<const QuadraticCost>(spec.cost)->weights();
    spec.cost = std::make_shared<QuadraticCost>(w, kappa, 0.3);
    return spec;
}

// Golden-section minimum of a convex scalar function on [lo, hi].
double golden_min(const std::function<double(double)>& f, double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    for (int it = 0; it < 200; ++it) {
        double c = b - g * (b - a), d = a + g * (b - a);
        if (f(c) < f(d))
            b = d;
        else
            a = c;
    }
    return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("LQ minimiser is the closed-form feedback") {
    ProblemSpec spec = lq_spec();
    Coefficients c = spec.dynamics.at(0.0);
    Vec x = vec1(0.7), m = vec1(-0.2), p = vec1(1.3);
    Mat q = mat1(0.4);
    HamiltonianValue h = hamiltonian(spec, c, x, m, 0.0, p, q);
    double v = -1.3;  // -r^{-1} f3' p
    CHECK(h.v_hat(0) == doctest::Approx(v).epsilon(1e-12));
    double drift = 0.2 * 0.7 + 0.3 * -0.2 + v;
    double g = 0.5 * 0.49 + 0.7 * 0.2 * -0.2 + 0.5 * 0.5 * 0.04 + 0.5 * v * v;
    CHECK(h.H == doctest::Approx(1.3 * drift + g + 0.4 * 0.6).epsilon(1e-12));
    CHECK(h.D_xH(0) == doctest::Approx(0.2 * 1.3 + 0.7 + 0.2 * -0.2).epsilon(1e-12));
    CHECK(h.foc_residual <= 1e-10);
}

TEST_CASE("quartic minimiser agrees with a derivative-free search") {
    ProblemSpec spec = quartic_spec(0.8);
    for (double pv : {-3.0, -0.5, 0.0, 2.0, 6.0}) {
        Coefficients c = spec.dynamics.at(0.3);
        Vec x = vec1(0.5), m = vec1(0.1), p = vec1(pv);
        Mat q = mat1(-0.7);
        ControlResult r = minimize_control(spec, c, x, m, 0.3, p, q);
        double ref = golden_min(
            [&](double v) { return lagrangian(spec, c, x, m, vec1(v), 0.3, p, q); }, -20.0, 20.0);
        CHECK(r.v(0) == doctest::Approx(ref).epsilon(1e-7));
        CHECK(std::abs(lagrangian_dv(spec, c, x, m, r.v, 0.3, p, q)(0)) <= 1e-10 * std::max(1.0, std::abs(pv)));
    }
}

TEST_CASE("envelope derivatives match differences of H") {
    ProblemSpec spec = quartic_spec(0.5);
    Coefficients c = spec.dynamics.at(0.0);
    Vec x = vec1(0.4), m = vec1(-0.3), p = vec1(0.9);
    Mat q = mat1(0.25);
    const double h = 1e-6;
    HamiltonianValue H0 = hamiltonian(spec, c, x, m, 0.0, p, q);
    double dx = (hamiltonian(spec, c, vec1(0.4 + h), m, 0.0, p, q).H -
                 hamiltonian(spec, c, vec1(0.4 - h), m, 0.0, p, q).H) / (2 * h);
    CHECK(H0.D_xH(0) == doctest::Approx(dx).epsilon(1e-7));
    double dm = (hamiltonian(spec, c, x, vec1(-0.3 + h), 0.0, p, q).H -
                 hamiltonian(spec, c, x, vec1(-0.3 - h), 0.0, p, q).H) / (2 * h);
    Vec term = hamiltonian_measure_term(spec, c, x, m, H0.v_hat, 0.0, p, q);
    CHECK(term(0) == doctest::Approx(dm).epsilon(1e-7));
    CHECK(dH_dnu(spec, c, x, m, H0.v_hat, 0.0, p, q, vec1(2.0)) == doctest::Approx(2.0 * dm).epsilon(1e-7));
    double dp = (hamiltonian(spec, c, x, m, 0.0, vec1(0.9 + h), q).H -
                 hamiltonian(spec, c, x, m, 0.0, vec1(0.9 - h), q).H) / (2 * h);
    CHECK(dp == doctest::Approx(drift(c, x, m, H0.v_hat)(0)).epsilon(1e-7));
}

TEST_CASE("warm start does not change the minimiser") {
    ProblemSpec spec = quartic_spec(1.0);
    Coefficients c = spec.dynamics.at(0.0);
    Vec x = vec1(1.0), m = vec1(0.0), p = vec1(40.0), warm = vec1(5.0);
    Mat q = mat1(0.0);
    ControlResult cold = minimize_control(spec, c, x, m, 0.0, p, q);
    ControlResult hot = minimize_control(spec, c, x, m, 0.0, p, q, &warm);
    CHECK(hot.v(0) == doctest::Approx(cold.v(0)).epsilon(1e-10));
}

TEST_CASE("non-convex control cost is reported") {
    ProblemSpec spec = lq_spec();
    LqWeights w = std::static_pointer_cast<const QuadraticCost>(spec.cost)->weights();
    w.r = mat1(-1.0);
    spec.cost = std::make_shared<QuadraticCost>(w);
    try {
        minimize_control(spec, vec1(0.0), vec1(0.0), 0.0, vec1(1.0), mat1(0.0));
        FAIL("expected a convexity error");
    } catch (const Error& e) {
        CHECK(e.kind() == "convexity");
    }
}

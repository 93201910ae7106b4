#include <doctest.h>

#include <cmath>

#include "mfc/model.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::lq_spec;

namespace {

LqWeights weights2() {
    LqWeights w;
    w.q = Mat(2, 2);
    w.q << 2.0, 0.3, 0.3, 1.0;
    w.qbar = Mat::Identity(2, 2) * 0.5;
    w.s = Mat(2, 2);
    w.s << 0.1, -0.2, 0.05, 0.3;
    w.r = Mat(2, 2);
    w.r << 1.5, 0.2, 0.2, 0.8;
    w.qT = Mat::Identity(2, 2);
    w.qbarT = Mat::Identity(2, 2) * 0.25;
    w.sT = Mat::Identity(2, 2) * 0.1;
    return w;
}

}  // namespace

TEST_CASE("quadratic cost jets agree with central differences") {
    QuadraticCost lq(weights2());
    lq.n = lq.d = 2;
    CHECK(cost_derivative_mismatch(lq, 50, 3) < 1e-6);
    QuadraticCost quartic(weights2(), 0.3, 0.2);
    quartic.n = quartic.d = 2;
    CHECK(cost_derivative_mismatch(quartic, 50, 4) < 1e-5);
}

TEST_CASE("quadratic cost value matches the written formula") {
    QuadraticCost c(weights2(), 0.3, 0.2);
    Vec x(2), m(2), v(2);
    x << 0.4, -1.0;
    m << 0.2, 0.7;
    v << -0.3, 0.9;
    LqWeights w = weights2();
    double expect = 0.5 * x.dot(w.q * x) + x.dot(w.s * m) + 0.5 * m.dot(w.qbar * m) + 0.5 * v.dot(w.r * v) +
                    0.3 / 4 * (std::pow(v(0), 4) + std::pow(v(1), 4)) +
                    0.2 / 4 * (std::pow(x(0), 4) + std::pow(x(1), 4));
    CHECK(c.running(x, m, v, 0.0, 0).value == doctest::Approx(expect).epsilon(1e-14));
    CHECK(c.id() == "quadratic_plus_quartic");
    CHECK(c.declared_convexity() ==
          doctest::Approx(0.5 * Eigen::SelfAdjointEigenSolver<Mat>(w.r).eigenvalues().minCoeff()));
}

TEST_CASE("third derivatives match differences of the Hessian") {
    QuadraticCost c(weights2(), 0.3, 0.2);
    c.n = c.d = 2;
    Vec x(2), m(2), v(2);
    x << 0.4, -1.0;
    m << 0.2, 0.7;
    v << -0.3, 0.9;
    JetVec dz(6);
    dz << 0.3, -0.1, 0.2, 0.5, -0.4, 0.6;
    const double h = 1e-5;
    auto shifted = [&](double t) {
        Vec xs = x + t * dz.segment(0, 2), ms = m + t * dz.segment(2, 2), vs = v + t * dz.segment(4, 2);
        return c.running(xs, ms, vs, 0.0, 2).hess;
    };
    JetMat fd = (shifted(h) - shifted(-h)) / (2 * h);
    CHECK((c.running_hessian_dir(x, m, v, 0.0, dz) - fd).cwiseAbs().maxCoeff() < 1e-7);
    JetVec dzT = dz.head(4);
    auto shiftedT = [&](double t) {
        return c.terminal(Vec(x + t * dzT.segment(0, 2)), Vec(m + t * dzT.segment(2, 2)), 2).hess;
    };
    JetMat fdT = (shiftedT(h) - shiftedT(-h)) / (2 * h);
    CHECK((c.terminal_hessian_dir(x, m, dzT) - fdT).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("finite-difference cost recovers analytic derivatives") {
    FiniteDifferenceCost c(
        "smooth", 1, 1,
        [](const Vec& x, const Vec& m, const Vec& v, double) {
            return std::cos(x(0)) + x(0) * m(0) + v(0) * v(0) + std::exp(0.1 * v(0));
        },
        [](const Vec& x, const Vec&) { return x(0) * x(0); }, 1.0, 10.0);
    Vec x = mfc::testing::vec1(0.3), m = mfc::testing::vec1(-0.5), v = mfc::testing::vec1(0.2);
    Jet j = c.running(x, m, v, 0.0, 2);
    CHECK(j.gx()(0) == doctest::Approx(-std::sin(0.3) - 0.5).epsilon(1e-8));
    CHECK(j.gm()(0) == doctest::Approx(0.3).epsilon(1e-8));
    CHECK(j.gv()(0) == doctest::Approx(0.4 + 0.1 * std::exp(0.02)).epsilon(1e-8));
    CHECK(j.hvv()(0, 0) == doctest::Approx(2.0 + 0.01 * std::exp(0.02)).epsilon(1e-5));
    CHECK(j.hxm()(0, 0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK_FALSE(c.has_third_derivatives());
    CHECK_THROWS_AS(c.running_hessian_dir(x, m, v, 0.0, JetVec::Zero(3)), Error);
}

TEST_CASE("cost registry resolves ids and rejects unknown ones") {
    register_cost("unit_test_cost", [](int n, int d) {
        LqWeights w{Mat::Identity(n, n), Mat::Zero(n, n), Mat::Zero(n, n), Mat::Identity(d, d),
                    Mat::Identity(n, n), Mat::Zero(n, n), Mat::Zero(n, n)};
        auto c = std::make_shared<QuadraticCost>(w);
        c->n = n;
        c->d = d;
        return c;
    });
    auto c = make_registered_cost("unit_test_cost", 2, 1);
    CHECK(c->n == 2);
    CHECK_THROWS_AS(make_registered_cost("no_such_cost", 1, 1), Error);
}

TEST_CASE("time profiles") {
    TimeProfile p;
    CHECK(p(0.3) == 1.0);
    p.kind = TimeProfile::Kind::Linear;
    p.slope = 2.0;
    CHECK(p(0.25) == doctest::Approx(1.5));
    p.kind = TimeProfile::Kind::Sine;
    p.amplitude = 0.5;
    p.frequency = 1.0;
    CHECK(p(0.25) == doctest::Approx(1.5));
}

TEST_CASE("specification checks") {
    ProblemSpec spec = lq_spec();
    ValidationReport rep = validate_spec(spec, {true, true});
    CHECK(rep.ok());
    CHECK(estimate_convexity(spec).lambda_hat == doctest::Approx(0.5).epsilon(1e-6));

    ProblemSpec bad_shape = lq_spec();
    bad_shape.dynamics.f3 = Mat::Zero(1, 2);
    CHECK_THROWS_AS(validate_spec(bad_shape), Error);

    ProblemSpec control_noise = lq_spec();
    control_noise.dynamics.s3[0] = Mat::Constant(1, 1, 0.1);
    CHECK_NOTHROW(validate_spec(control_noise));
    try {
        validate_spec(control_noise, {true, false});
        FAIL("expected the Bellman layer to be refused");
    } catch (const Error& e) {
        CHECK(e.module() == "model");
        CHECK(e.kind() == "specification");
    }

    ProblemSpec loose = lq_spec();
    loose.dynamics.bound = 0.5;
    rep = validate_spec(loose);
    CHECK_FALSE(rep.ok());
    CHECK(rep.failed()->name == "dynamics_bound");

    ProblemSpec concave = lq_spec();
    LqWeights w = std::static_pointer_cast<const QuadraticCost>(spec.cost)->weights();
    w.r = mfc::testing::mat1(-1.0);
    concave.cost = std::make_shared<QuadraticCost>(w);
    CHECK_THROWS_AS(validate_spec(concave), Error);
}

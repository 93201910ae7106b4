#include <doctest.h>

#include "mfc/paths.hpp"
#include "mfc/regression.hpp"

using namespace mfc;

namespace {

Eigen::MatrixXd gaussian_matrix(int N, int n, std::uint64_t seed) {
    Eigen::MatrixXd Y(N, n);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < n; ++j) Y(i, j) = standard_normal(seed, i, 0, j);
    return Y;
}

}  // namespace

TEST_CASE("feature layout") {
    Eigen::MatrixXd Y(2, 2), E(2, 1);
    Y << 1, 2, 3, 4;
    E << 5, 6;
    Eigen::MatrixXd F = regression_features(Basis::Quadratic, Y, &E);
    REQUIRE(F.cols() == 2 + 1 + 3 + 2);
    Eigen::RowVectorXd row(8);
    row << 1, 2, 5, 1, 2, 4, 5, 10;
    CHECK((F.row(0) - row).norm() == 0.0);
    CHECK(regression_features(Basis::Affine, Y, &E).cols() == 3);
}

TEST_CASE("affine data is reproduced exactly") {
    Eigen::MatrixXd Y = gaussian_matrix(200, 2, 1);
    Eigen::MatrixXd T(200, 2);
    T.col(0) = 1.5 + 2.0 * Y.col(0).array() - Y.col(1).array();
    T.col(1) = -0.5 * Y.col(1);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(200, 1.0 / 200);
    RegressionFit fit = fit_regression(regression_features(Basis::Affine, Y), T, w);
    CHECK((fit.predict(regression_features(Basis::Affine, Y)) - T).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("quadratic basis reproduces quadratics, affine basis projects them") {
    Eigen::MatrixXd Y = gaussian_matrix(5000, 1, 2);
    Eigen::MatrixXd T = (Y.array().square() + 0.5 * Y.array()).matrix();
    Eigen::VectorXd w = Eigen::VectorXd::Constant(5000, 1.0 / 5000);
    RegressionFit quad = fit_regression(regression_features(Basis::Quadratic, Y), T, w);
    CHECK((quad.predict(regression_features(Basis::Quadratic, Y)) - T).cwiseAbs().maxCoeff() < 1e-10);
    RegressionFit aff = fit_regression(regression_features(Basis::Affine, Y), T, w);
    // Residual is orthogonal to the regressors.
    Eigen::VectorXd r = T - aff.predict(regression_features(Basis::Affine, Y));
    CHECK(std::abs(r.sum()) < 1e-9);
    CHECK(std::abs(r.dot(Y.col(0))) < 1e-9);
}

TEST_CASE("zero-weight rows do not shape the fit") {
    Eigen::MatrixXd Y = gaussian_matrix(100, 1, 3);
    Eigen::MatrixXd T = (3.0 * Y.array() + 1.0).matrix();
    Eigen::VectorXd w = Eigen::VectorXd::Constant(100, 1.0 / 90);
    for (int i = 90; i < 100; ++i) {
        w(i) = 0.0;
        T(i, 0) = 1e6;
    }
    RegressionFit fit = fit_regression(regression_features(Basis::Affine, Y), T, w);
    Eigen::MatrixXd pred = fit.predict(regression_features(Basis::Affine, Y));
    CHECK(pred(95, 0) == doctest::Approx(3.0 * Y(95, 0) + 1.0).epsilon(1e-12));
}

TEST_CASE("constant columns are absorbed into the intercept") {
    Eigen::MatrixXd Y = gaussian_matrix(50, 1, 4);
    Eigen::MatrixXd E = Eigen::MatrixXd::Constant(50, 1, 2.0);
    Eigen::MatrixXd T = (Y.array() + 4.0).matrix();
    Eigen::VectorXd w = Eigen::VectorXd::Constant(50, 0.02);
    RegressionFit fit = fit_regression(regression_features(Basis::Affine, Y, &E), T, w);
    CHECK(fit.active.size() == 1);
    CHECK((fit.predict(regression_features(Basis::Affine, Y, &E)) - T).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("too few samples for the basis") {
    Eigen::MatrixXd Y = gaussian_matrix(3, 2, 5);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(3, 1.0 / 3);
    CHECK_THROWS_AS(fit_regression(regression_features(Basis::Quadratic, Y), Y, w), Error);
}

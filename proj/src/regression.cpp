#include "mfc/regression.hpp"

#include <cmath>

namespace mfc {

Eigen::MatrixXd regression_features(Basis basis, const Eigen::MatrixXd& Y, const Eigen::MatrixXd* extra) {
    int N = int(Y.rows()), n = int(Y.cols());
    int e = extra ? int(extra->cols()) : 0;
    int cols = n + e;
    if (basis == Basis::Quadratic) cols += n * (n + 1) / 2 + n * e;
    Eigen::MatrixXd F(N, cols);
    int c = 0;
    F.middleCols(c, n) = Y;
    c += n;
    if (e) {
        F.middleCols(c, e) = *extra;
        c += e;
    }
    if (basis == Basis::Quadratic) {
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b) F.col(c++) = Y.col(a).cwiseProduct(Y.col(b));
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < e; ++b) F.col(c++) = Y.col(a).cwiseProduct(extra->col(b));
    }
    return F;
}

RegressionFit fit_regression(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                             const Eigen::VectorXd& weights) {
    int N = int(features.rows()), p = int(features.cols());
    std::vector<int> rows;
    double wsum = 0.0;
    for (int i = 0; i < N; ++i)
        if (weights(i) > 0.0) {
            rows.push_back(i);
            wsum += weights(i);
        }
    RegressionFit fit;
    fit.mean = Eigen::RowVectorXd::Zero(p);
    fit.scale = Eigen::RowVectorXd::Ones(p);
    for (int i : rows) fit.mean += weights(i) / wsum * features.row(i);
    for (int c = 0; c < p; ++c) {
        double var = 0.0;
        for (int i : rows) var += weights(i) / wsum * std::pow(features(i, c) - fit.mean(c), 2);
        double sd = std::sqrt(var);
        if (sd > 1e-9 * std::max(1.0, std::abs(fit.mean(c)))) {
            fit.scale(c) = sd;
            fit.active.push_back(c);
        }
    }
    int cols = 1 + int(fit.active.size());
    if (int(rows.size()) < cols)
        throw Error("fbsde", "basis",
                    "regression has " + std::to_string(rows.size()) + " weighted samples for " +
                        std::to_string(cols) + " basis functions");
    Eigen::MatrixXd A(rows.size(), cols), B(rows.size(), targets.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        int i = rows[r];
        double sw = std::sqrt(weights(i));
        A(r, 0) = sw;
        for (int a = 0; a < int(fit.active.size()); ++a) {
            int c = fit.active[a];
            A(r, 1 + a) = sw * (features(i, c) - fit.mean(c)) / fit.scale(c);
        }
        B.row(r) = sw * targets.row(i);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    fit.coef = qr.solve(B);
    return fit;
}

Eigen::MatrixXd RegressionFit::predict(const Eigen::MatrixXd& features) const {
    int N = int(features.rows());
    Eigen::MatrixXd Z(N, 1 + active.size());
    Z.col(0).setOnes();
    for (int a = 0; a < int(active.size()); ++a) {
        int c = active[a];
        Z.col(1 + a) = (features.col(c).array() - mean(c)) / scale(c);
    }
    return Z * coef;
}

}  // namespace mfc

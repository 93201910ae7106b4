#pragma once

#include <vector>

#include "mfc/types.hpp"

namespace mfc {

enum class Basis { Affine, Quadratic };

// Raw regressors without the intercept: y, then y_a y_b (a <= b) for the
// quadratic basis. With an extra block e (flow variables) the affine basis
// appends e and the quadratic basis appends e and y_a e_b.
Eigen::MatrixXd regression_features(Basis basis, const Eigen::MatrixXd& Y, const Eigen::MatrixXd* extra = nullptr);

// Weighted least squares on standardised regressors. Columns with no spread
// over the positive-weight rows are absorbed into the intercept.
struct RegressionFit {
    Eigen::RowVectorXd mean, scale;
    std::vector<int> active;
    Eigen::MatrixXd coef;  // (1 + active.size()) x outputs

    Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const;
    bool empty() const { return coef.size() == 0; }
};

RegressionFit fit_regression(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                             const Eigen::VectorXd& weights);

}  // namespace mfc

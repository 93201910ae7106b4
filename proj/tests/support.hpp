#pragma once

#include <memory>

#include "mfc/model.hpp"

namespace mfc::testing {

// Scalar mean-field LQ problem shared by the solver tests and the
// acceptance run; the same numbers sit in configs/lq.json.
inline ProblemSpec lq_spec(double sigma = 0.6) {
    ProblemSpec spec;
    spec.name = "lq";
    spec.n = spec.d = 1;
    spec.T = 1.0;
    spec.dynamics = LinearDynamics::zeros(1, 1);
    spec.dynamics.f1(0, 0) = 0.2;
    spec.dynamics.f2(0, 0) = 0.3;
    spec.dynamics.f3(0, 0) = 1.0;
    spec.dynamics.s0[0](0) = sigma;
    LqWeights w;
    w.q = Mat::Constant(1, 1, 1.0);
    w.qbar = Mat::Constant(1, 1, 0.5);
    w.s = Mat::Constant(1, 1, 0.2);
    w.r = Mat::Constant(1, 1, 1.0);
    w.qT = Mat::Constant(1, 1, 1.0);
    w.qbarT = Mat::Constant(1, 1, 0.5);
    w.sT = Mat::Zero(1, 1);
    spec.cost = std::make_shared<QuadraticCost>(w);
    return spec;
}

inline Vec vec1(double a) {
    Vec v(1);
    v << a;
    return v;
}

inline Mat mat1(double a) { return Mat::Constant(1, 1, a); }

}  // namespace mfc::testing

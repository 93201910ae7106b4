#include "mfc/hamiltonian.hpp"

#include <cmath>

#include "mfc/format.hpp"

namespace mfc {

double lagrangian(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v,
                  double s, const Vec& p, const Mat& q) {
    double val = p.dot(drift(c, x, mbar, v)) + spec.cost->running(x, mbar, v, s, 0).value;
    for (int j = 0; j < spec.n; ++j) val += q.col(j).dot(diffusion_column(c, j, x, mbar, v));
    return val;
}

namespace {

Vec dv_from_jet(const ProblemSpec& spec, const Coefficients& c, const Jet& g, const Vec& p, const Mat& q) {
    Vec r = c.f3.transpose() * p + g.gv();
    for (int j = 0; j < spec.n; ++j) r += c.s3[j].transpose() * q.col(j);
    return r;
}

}  // namespace

Vec lagrangian_dv(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v,
                  double s, const Vec& p, const Mat& q) {
    return dv_from_jet(spec, c, spec.cost->running(x, mbar, v, s, 1), p, q);
}

ControlResult minimize_control(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar,
                               double s, const Vec& p, const Mat& q, const Vec* warm, const NewtonOptions& opt) {
    ControlResult res;
    res.v = warm ? *warm : Vec::Zero(spec.d);
    const CostModel& g = *spec.cost;
    // Terms of L that do not involve v are dropped from the line search.
    auto merit = [&](const Vec& v) {
        double val = p.dot(c.f3 * v) + g.running(x, mbar, v, s, 0).value;
        for (int j = 0; j < spec.n; ++j) val += q.col(j).dot(c.s3[j] * v);
        return val;
    };
    Jet jet = g.running(x, mbar, res.v, s, 2);
    Vec grad = dv_from_jet(spec, c, jet, p, q);
    // With a large costate the gradient is a difference of large terms, so the
    // tolerance follows their size once it exceeds one.
    Vec linear = c.f3.transpose() * p;
    for (int j = 0; j < spec.n; ++j) linear += c.s3[j].transpose() * q.col(j);
    const double tol = opt.foc_tol * std::max(1.0, linear.cwiseAbs().maxCoeff());
    for (res.iterations = 0;; ++res.iterations) {
        res.foc_residual = grad.cwiseAbs().maxCoeff();
        if (res.foc_residual <= tol) return res;
        if (res.iterations == opt.max_iter) break;
        Eigen::LLT<Mat> llt(Mat(jet.hvv()));
        if (llt.info() != Eigen::Success)
            throw Error("hamiltonian", "convexity", "control Hessian is not positive definite");
        Vec step = -llt.solve(grad);
        // Full Newton steps that shrink the first-order residual are taken
        // directly; otherwise fall back to Armijo backtracking on L.
        Vec trial = res.v + step;
        Jet jt = g.running(x, mbar, trial, s, 2);
        Vec gt = dv_from_jet(spec, c, jt, p, q);
        if (gt.norm() <= (1.0 - 1e-4) * grad.norm()) {
            res.v = trial;
            jet = jt;
            grad = gt;
            continue;
        }
        double f0 = merit(res.v), slope = grad.dot(step), t = 1.0;
        // The slack keeps rounding in the merit from rejecting steps near the optimum.
        double slack = 1e-13 * (1.0 + std::abs(f0));
        while (merit(trial) > f0 + 1e-4 * t * slope + slack && t > 1e-10) {
            t *= 0.5;
            trial = res.v + t * step;
        }
        res.v = trial;
        jet = g.running(x, mbar, res.v, s, 2);
        grad = dv_from_jet(spec, c, jet, p, q);
    }
    throw Error("hamiltonian", "solver",
                "control minimisation did not reach the first-order tolerance (residual " +
                    format_double(res.foc_residual) + ")");
}

HamiltonianValue hamiltonian(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, double s,
                             const Vec& p, const Mat& q, const Vec* warm, const NewtonOptions& opt) {
    ControlResult cr = minimize_control(spec, c, x, mbar, s, p, q, warm, opt);
    HamiltonianValue h;
    h.v_hat = cr.v;
    h.iterations = cr.iterations;
    h.foc_residual = cr.foc_residual;
    Jet jet = spec.cost->running(x, mbar, cr.v, s, 1);
    h.H = p.dot(drift(c, x, mbar, cr.v)) + jet.value;
    h.D_xH = c.f1.transpose() * p + jet.gx();
    for (int j = 0; j < spec.n; ++j) {
        h.H += q.col(j).dot(diffusion_column(c, j, x, mbar, cr.v));
        h.D_xH += c.s1[j].transpose() * q.col(j);
    }
    return h;
}

ControlResult minimize_control(const ProblemSpec& spec, const Vec& x, const Vec& mbar, double s, const Vec& p,
                               const Mat& q) {
    return minimize_control(spec, spec.dynamics.at(s), x, mbar, s, p, q);
}

HamiltonianValue hamiltonian(const ProblemSpec& spec, const Vec& x, const Vec& mbar, double s, const Vec& p,
                             const Mat& q) {
    return hamiltonian(spec, spec.dynamics.at(s), x, mbar, s, p, q);
}

Vec hamiltonian_measure_term(const ProblemSpec& spec, const Coefficients& c, const Vec& xi, const Vec& mbar,
                             const Vec& v_xi, double s, const Vec& p_xi, const Mat& q_xi) {
    Vec r = c.f2.transpose() * p_xi + spec.cost->running(xi, mbar, v_xi, s, 1).gm();
    for (int j = 0; j < spec.n; ++j) r += c.s2[j].transpose() * q_xi.col(j);
    return r;
}

double dH_dnu(const ProblemSpec& spec, const Coefficients& c, const Vec& xi, const Vec& mbar, const Vec& v_xi,
              double s, const Vec& p_xi, const Mat& q_xi, const Vec& x) {
    return x.dot(hamiltonian_measure_term(spec, c, xi, mbar, v_xi, s, p_xi, q_xi));
}

}  // namespace mfc

#pragma once

#include "mfc/model.hpp"

namespace mfc {

struct NewtonOptions {
    double foc_tol = 1e-10;
    int max_iter = 50;
};

// Adjoint pair at one point: p in R^n, q an n x n matrix whose column j
// pairs with the j-th diffusion column.
struct ControlResult {
    Vec v;
    int iterations = 0;
    double foc_residual = 0.0;
};

struct HamiltonianValue {
    Vec v_hat;
    double H = 0.0;
    Vec D_xH;  // envelope derivative in x at fixed (p, q)
    int iterations = 0;
    double foc_residual = 0.0;
};

double lagrangian(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v,
                  double s, const Vec& p, const Mat& q);
Vec lagrangian_dv(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v,
                  double s, const Vec& p, const Mat& q);

// argmin_v of the Lagrangian by damped Newton with Armijo backtracking.
ControlResult minimize_control(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar,
                               double s, const Vec& p, const Mat& q, const Vec* warm = nullptr,
                               const NewtonOptions& opt = {});

HamiltonianValue hamiltonian(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, double s,
                             const Vec& p, const Mat& q, const Vec* warm = nullptr, const NewtonOptions& opt = {});

// Convenience overloads that evaluate the coefficients at s.
ControlResult minimize_control(const ProblemSpec& spec, const Vec& x, const Vec& mbar, double s, const Vec& p,
                               const Mat& q);
HamiltonianValue hamiltonian(const ProblemSpec& spec, const Vec& x, const Vec& mbar, double s, const Vec& p,
                             const Mat& q);

// Gradient in x of the flat measure derivative of H at fixed (p, q), taken
// for a donor atom (xi, v_xi, p_xi, q_xi): f2' p + sum_j s2^j' q^j + G_m.
// It does not depend on the evaluation point because costs see the
// measure through its mean.
Vec hamiltonian_measure_term(const ProblemSpec& spec, const Coefficients& c, const Vec& xi, const Vec& mbar,
                             const Vec& v_xi, double s, const Vec& p_xi, const Mat& q_xi);

// dH/dnu(xi)(x) for the mean-field structure: x' times the term above.
double dH_dnu(const ProblemSpec& spec, const Coefficients& c, const Vec& xi, const Vec& mbar, const Vec& v_xi,
              double s, const Vec& p_xi, const Mat& q_xi, const Vec& x);

}  // namespace mfc

#pragma once

#include <vector>

#include "mfc/flows.hpp"

namespace mfc {

// Left-point rule: sum_k dt sum_i w_i g(Y_ki, m_k, v_ki) + sum_i w_i g_T(Y_Ki, m_K).
double evaluate_value(const ProblemSpec& spec, const FbsdeSolution& sol);

// Cost of the stored controls v_ki applied from shifted initial atoms under
// the same noise. Its derivative in the shift is the pathwise adjoint at
// knot 0.
double fixed_control_cost(const ProblemSpec& spec, const FbsdeSolution& sol, const Eigen::MatrixXd& initial_states);

inline const Eigen::MatrixXd& value_gradient(const FbsdeSolution& sol) { return sol.P[0]; }
inline const Eigen::MatrixXd& hessian_action(const Flow& gateaux) { return gateaux.sol.DP[0]; }

struct GradientCheck {
    std::vector<double> eps, fd, error;
    double predicted = 0.0;  // <P(t0), direction>_w
    double slope = 0.0;      // log-log slope of error against eps
    double floor = 0.0;      // error extrapolated to eps -> 0
};

// (J(X + eps d) - J(X)) / eps against <P(t0), d> with controls held fixed.
GradientCheck gradient_identity_check(const ProblemSpec& spec, const FbsdeSolution& sol,
                                      const Eigen::MatrixXd& direction, const std::vector<double>& eps);

// -sum_i w_i H(x_i, m, t0; P_i, 1/2 D_xP_i sigma(x_i)).
double value_time_derivative(const ProblemSpec& spec, const FbsdeSolution& sol, const std::vector<Flow>& spatial,
                             double gradient_scale = 1.0);

struct BellmanReport {
    double value = 0.0;
    double dVdt_fd = 0.0;
    double h_integral = 0.0;
    double residual_raw = 0.0;
    double residual_rel = 0.0;
    int K = 0, N = 0;
};

// Finite difference in t0 with step (T - t0) / 200 under common random
// numbers; gradient_scale multiplies P inside H (fault injection).
BellmanReport bellman_residual(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K,
                               std::uint64_t seed, const SolverOptions& opt, double gradient_scale = 1.0);

// Relative RMS gap between stored P at each knot in `knots` and a fresh
// solve from (Y(s), s) under new noise.
std::vector<double> sensitivity_errors(const ProblemSpec& spec, const FbsdeSolution& sol, const std::vector<int>& knots,
                                       std::uint64_t fresh_seed, const SolverOptions& opt);

struct RestartCheck {
    int knot = 0;
    double restart_error = 0.0;  // sup over later knots of RMS(Y) + RMS(P) gaps
    double one_step_error = 0.0;
};

// Re-solve from (Y(t_k), t_k) with the same Brownian tail.
RestartCheck flow_property_check(const ProblemSpec& spec, const FbsdeSolution& sol, int knot, std::uint64_t seed,
                                 const SolverOptions& opt);

struct MonotonicityReport {
    int samples = 0;
    int violations = 0;
    double lambda_hat = 0.0;
    double alpha = 0.0;       // constant from the Young-inequality construction
    double alpha_needed = 0.0;  // smallest alpha that would have sufficed
    double worst_margin = 0.0;  // max of lhs - rhs
};

// Samples tuples (X, P, Q), (X', P', Q') of small ensembles and checks the
// bilinear inequality built from the lifted drivers with beta = v_hat.
MonotonicityReport monotonicity_certificate(const ProblemSpec& spec, int samples, std::uint64_t seed,
                                            int atoms = 6, double radius = 1.5);

struct MasterSettings {
    int probes = 256;
    std::vector<double> eps{0.02, 0.01};
    bool fd_checks = true;
    double measure_scale = 1.0;  // fault injection on the measure-derivative terms
};

struct MasterReport {
    Vec x;
    double U = 0.0;
    Vec D_xU;
    Mat D_xxU;
    double dUdt = 0.0;
    double hamiltonian = 0.0;
    double drift_term = 0.0, trace_term = 0.0, dH_term = 0.0;
    double residual_raw = 0.0, residual_rel = 0.0;
    double terminal_gap = 0.0;
    // Dirac finite differences: errors of D_x dU/dnu and D_x^2 dU/dnu at
    // the probe against the centered measure flows, one entry per eps.
    std::vector<double> eps, fd_error_p, fd_error_jac;
    double fd_value_gap = 0.0;  // FD of V against U(x) - int U dm, smallest eps
    double dUdnu_probe = 0.0;   // D_x dU/dnu(x)(x), first component
};

MasterReport evaluate_master(const ProblemSpec& spec, const Vec& x, const ParticleEnsemble& m, double t0, int K,
                             std::uint64_t seed, const SolverOptions& opt, const MasterSettings& settings = {});

// U(x, m, T) from the representation against g_T(x, m) + int dg_T/dnu(xi)(x) dm.
double master_terminal_gap(const ProblemSpec& spec, const Vec& x, const ParticleEnsemble& m);

}  // namespace mfc

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfc/analysis.hpp"

namespace mfc {

// Closed-form benchmark for linear dynamics with additive noise and the
// quadratic mean-field cost. The value splits into a deviation part
// (Pi), a mean part (Gamma) and a noise part (chi):
//   V = 1/2 sum w (x - m)' Pi (x - m) + 1/2 m' Gamma m + chi.
struct RiccatiSolution {
    double t0 = 0.0, T = 1.0;
    int refine = 10;
    std::vector<double> t;  // fine grid, refine steps per solver step
    std::vector<Mat> Pi, Gamma;
    std::vector<double> chi;
    double self_check = 0.0;  // max gap to the half-step integration

    int fine_index(int coarse_knot) const { return coarse_knot * refine; }
    double value(int fine, const ParticleEnsemble& m) const;
    Eigen::MatrixXd costate(int fine, const Eigen::MatrixXd& X, const Vec& mbar) const;
    Eigen::MatrixXd control(const ProblemSpec& spec, int fine, const Eigen::MatrixXd& X, const Vec& mbar) const;
    // d/dt of the value along the flow of the Riccati equations.
    double value_time_derivative(const ProblemSpec& spec, int fine, const ParticleEnsemble& m) const;
};

bool riccati_applicable(const ProblemSpec& spec, std::string* why = nullptr);
RiccatiSolution solve_riccati(const ProblemSpec& spec, double t0, int K, int refine = 10);

// Deterministic benchmark: with no diffusion the particle system is a
// two-point boundary value problem in (Y, P) solved by Newton shooting on
// P(t0) with RK4 transport of the state-costate ODE.
struct ShootingSolution {
    std::vector<double> t;                 // fine grid
    std::vector<Eigen::MatrixXd> Y, P, v;  // per fine knot, N x n / N x d
    double boundary_residual = 0.0;
    int newton_iterations = 0;
    int refine = 10;
};

ShootingSolution solve_shooting(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K, int refine = 10,
                                double tol = 1e-10);

struct LqBenchmarkRow {
    std::uint64_t seed = 0;
    int N = 0, K = 0;
    double value = 0.0, value_exact = 0.0, value_rel_error = 0.0;
    double feedback_rel_error = 0.0;
    double gradient_rel_error = 0.0;
    ResidualReport residuals;
    int iterations = 0;
    double runtime_s = 0.0;
};

LqBenchmarkRow run_lq_benchmark(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K,
                                std::uint64_t seed, const SolverOptions& opt);

struct DeterministicBenchmarkRow {
    int N = 0, K = 0;
    double control_rms_error = 0.0;  // absolute RMS over knots and atoms
    double control_rel_error = 0.0;
    double costate_rel_error = 0.0;
    double value = 0.0, value_oracle = 0.0;
    double oracle_residual = 0.0;
    double runtime_s = 0.0;
};

DeterministicBenchmarkRow run_deterministic_benchmark(const ProblemSpec& spec, const ParticleEnsemble& m, double t0,
                                                      int K, const SolverOptions& opt);

struct ConvergenceRow {
    int N = 0, K = 0;
    double value_error = 0.0, feedback_error = 0.0, value_error_sd = 0.0;
    int seeds = 0;
};

struct ConvergenceStudy {
    std::vector<ConvergenceRow> rows;
    double rate_dt = 0.0;  // fitted slope of log error against log dt
    double rate_N = 0.0;   // fitted slope against log N
};

// Grid of (N, K) runs over several seeds against the Riccati oracle.
ConvergenceStudy convergence_study(const ProblemSpec& spec, const std::function<ParticleEnsemble(int N)>& initial,
                                   double t0, const std::vector<int>& Ns, const std::vector<int>& Ks,
                                   const std::vector<std::uint64_t>& seeds, const SolverOptions& opt);

double fit_log_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string bench_csv(const std::vector<LqBenchmarkRow>& rows);

}  // namespace mfc

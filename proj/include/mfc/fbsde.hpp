#pragma once

#include <memory>
#include <vector>

#include "mfc/hamiltonian.hpp"
#include "mfc/measure.hpp"
#include "mfc/paths.hpp"
#include "mfc/regression.hpp"

namespace mfc {

struct SolverOptions {
    int picard_max = 400;
    double picard_tol = 1e-10;
    double damping = 0.5;
    Basis basis = Basis::Affine;
    int continuation_steps = 8;
    int max_bisections = 6;
    bool auto_continuation = true;
    double divergence_factor = 1e8;
    int jobs = 1;
    NewtonOptions newton;
    // Regression weights; empty means the measure weights. Atoms with weight
    // zero are simulated but do not shape the fitted costate.
    Eigen::VectorXd fit_weights;

    void validate() const;
};

// Costate feedback on every knot below K. With a non-degenerate diffusion it
// is a regression on features of the state; when the diffusion vanishes the
// conditional expectation is the identity and the values are kept per atom.
struct Policy {
    bool pathwise = false;
    Basis basis = Basis::Affine;
    std::vector<RegressionFit> p_fit, q_fit;
    std::vector<Eigen::MatrixXd> p_path, q_path;

    bool empty() const { return p_fit.empty() && p_path.empty(); }
    // P (N x n) and Q (N x n*n, column j*n + a holds component a of Q^j).
    void evaluate(int k, const Eigen::MatrixXd& Y, int n, Eigen::MatrixXd& P, Eigen::MatrixXd& Q) const;
};

struct SolveDiagnostics {
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
    std::vector<double> deltas;
    std::vector<double> rho_schedule;
    int newton_max_iterations = 0;
};

struct FbsdeSolution {
    TimeGrid grid;
    ParticleEnsemble initial;
    std::shared_ptr<const BrownianBundle> noise;
    Eigen::VectorXd fit_weights;
    // Y, P, Q, lambda and mean have K+1 knots; v has K. Q at knot K is zero.
    std::vector<Eigen::MatrixXd> Y, P, Q, v, lambda;
    std::vector<Vec> mean;
    Policy policy;
    double rho = 1.0;
    SolveDiagnostics diag;

    int particles() const { return initial.size(); }
    int steps() const { return grid.K; }
    Mat q_at(int k, int i, int n) const;
};

struct ResidualReport {
    double forward_reconstruction = 0.0;
    double backward_one_step = 0.0;
    double martingale = 0.0;
    double foc_max = 0.0;
};

bool use_pathwise(const ProblemSpec& spec);

// Forward Euler-Maruyama under the policy; the control uses the costate
// scaled by rho. Fills Y, mean, P, Q (policy values) and v; P at knot K is
// the terminal condition.
void forward_pass(const ProblemSpec& spec, const Policy& policy, double rho, const SolverOptions& opt,
                  FbsdeSolution& sol);

// Pathwise adjoint of the discrete forward map, then per-knot projection.
// Returns the damped policy and the relative size of the undamped update.
struct BackwardResult {
    Policy policy;
    double delta = 0.0;
};
BackwardResult backward_pass(const ProblemSpec& spec, const SolverOptions& opt, FbsdeSolution& sol);

FbsdeSolution make_solution_shell(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                                  std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt);

FbsdeSolution picard_solve(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                           std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt,
                           const Policy* warm = nullptr, double rho = 1.0);

FbsdeSolution continuation_solve(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                                 std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt);

// Picard, then continuation when Picard does not converge and
// auto_continuation is set. Throws a solver error if neither converges.
FbsdeSolution solve(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                    std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt);

// Brownian bundle matching the ensemble's stream ids.
std::shared_ptr<const BrownianBundle> make_noise(const ParticleEnsemble& ensemble, const TimeGrid& grid, int dim,
                                                 std::uint64_t seed, int step_offset = 0, int jobs = 1);

ResidualReport residuals(const ProblemSpec& spec, const FbsdeSolution& sol);

// Linear FBSDE around a frozen base solution. Unknowns DY, DP, DQ, Dv per
// atom; DM = sum_j w_j DY_j + mean_source when the population is coupled.
struct LinearFlowProblem {
    bool population = true;
    Eigen::MatrixXd initial;               // N x n
    std::vector<Vec> mean_source;          // K+1, added to DM (empty = zero)
    std::vector<Vec> common_backward;      // K, added to every atom's adjoint step (already scaled)
    Vec common_terminal;                   // added to every atom's terminal adjoint
    std::vector<Eigen::MatrixXd> backward_source;  // K, N x n, rate (multiplied by dt)
    std::vector<Eigen::MatrixXd> control_source;   // K, N x d, inside the control equation
    Eigen::MatrixXd terminal_source;               // N x n
};

struct LinearFlowSolution {
    std::vector<Eigen::MatrixXd> DY, DP, DQ, Dv, Dlambda;
    std::vector<Vec> DM;
    SolveDiagnostics diag;
};

LinearFlowSolution solve_linear_fbsde(const ProblemSpec& spec, const FbsdeSolution& base,
                                      const LinearFlowProblem& problem, const SolverOptions& opt);

}  // namespace mfc

#pragma once

#include <string>
#include <vector>

#include "mfc/fbsde.hpp"

namespace mfc {

enum class FlowKind { Gateaux, Spatial, Measure, MeasureSpatial };

struct Flow {
    FlowKind kind = FlowKind::Gateaux;
    int column = -1;  // spatial direction for Spatial / MeasureSpatial
    std::vector<int> anchors;  // probe atoms carrying the Dirac mass
    bool centered = false;
    LinearFlowSolution sol;
};

// Directional derivative of (Y, P, Q, v) when the initial atoms move along
// `direction` (N x n), population terms included.
Flow gateaux_flow(const ProblemSpec& spec, const FbsdeSolution& base, const Eigen::MatrixXd& direction,
                  const SolverOptions& opt);

// Derivative of each atom's own trajectory in its starting point with the
// population frozen; one flow per coordinate direction.
std::vector<Flow> spatial_jacobian(const ProblemSpec& spec, const FbsdeSolution& base, const SolverOptions& opt);

// Linear functional derivative in the measure at the anchor point carried by
// the probe atoms `anchors` (zero weight, same start). With centered = true
// the sources are taken relative to the population, which is what a Dirac
// finite difference (1 - eps) m + eps delta_xi measures.
Flow measure_flow(const ProblemSpec& spec, const FbsdeSolution& base, const std::vector<int>& anchors, bool centered,
                  const SolverOptions& opt);

// Measure derivative of the spatial Jacobian, one flow per column.
std::vector<Flow> measure_spatial_flow(const ProblemSpec& spec, const FbsdeSolution& base,
                                       const std::vector<Flow>& spatial, const Flow& measure,
                                       const SolverOptions& opt);

// D_x P at (knot, atom) assembled from the spatial flows: column c is DP of
// flow c.
Mat spatial_costate_jacobian(const std::vector<Flow>& spatial, int knot, int atom, int n);

struct FdCheck {
    std::vector<double> eps;
    std::vector<double> error_Y, error_P;  // sup-knot RMS relative errors
    double slope_P = 0.0;                  // log-log slope of error_P
};

// Finite differences of re-solved trajectories from X + eps * direction
// under common random numbers, compared with the Gateaux flow.
FdCheck gateaux_fd_check(const ProblemSpec& spec, const FbsdeSolution& base, const Flow& flow,
                         const Eigen::MatrixXd& direction, const std::vector<double>& eps, const SolverOptions& opt);

// One row per (flow, knot, particle): DY, DP, Dv; Dv is empty on the
// terminal knot.
std::string flows_to_csv(const std::vector<Flow>& flows, const FbsdeSolution& base, int n, int d);

}  // namespace mfc

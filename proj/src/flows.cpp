#include "mfc/flows.hpp"

#include <cmath>
#include <sstream>

#include "mfc/bench.hpp"
#include "mfc/io.hpp"
#include "mfc/parallel.hpp"

namespace mfc {

Flow gateaux_flow(const ProblemSpec& spec, const FbsdeSolution& base, const Eigen::MatrixXd& direction,
                  const SolverOptions& opt) {
    LinearFlowProblem pb;
    pb.population = true;
    pb.initial = direction;
    Flow f;
    f.kind = FlowKind::Gateaux;
    f.sol = solve_linear_fbsde(spec, base, pb, opt);
    return f;
}

std::vector<Flow> spatial_jacobian(const ProblemSpec& spec, const FbsdeSolution& base, const SolverOptions& opt) {
    std::vector<Flow> out;
    for (int c = 0; c < spec.n; ++c) {
        LinearFlowProblem pb;
        pb.population = false;
        pb.initial = Eigen::MatrixXd::Zero(base.particles(), spec.n);
        pb.initial.col(c).setOnes();
        Flow f;
        f.kind = FlowKind::Spatial;
        f.column = c;
        f.sol = solve_linear_fbsde(spec, base, pb, opt);
        out.push_back(std::move(f));
    }
    return out;
}

Flow measure_flow(const ProblemSpec& spec, const FbsdeSolution& base, const std::vector<int>& anchors, bool centered,
                  const SolverOptions& opt) {
    if (anchors.empty()) throw Error("flows", "specification", "measure flow needs at least one anchor atom");
    const int K = base.grid.K, N = base.particles(), n = spec.n;
    const double dt = base.grid.dt();
    const Eigen::VectorXd& w = base.initial.weights;
    const auto& dW = base.noise->dW;
    const double share = 1.0 / anchors.size();

    LinearFlowProblem pb;
    pb.population = true;
    pb.initial = Eigen::MatrixXd::Zero(N, n);
    pb.mean_source.resize(K + 1);
    pb.common_backward.resize(K);
    for (int k = 0; k <= K; ++k) {
        Vec src = Vec::Zero(n);
        for (int a : anchors) src += share * base.Y[k].row(a).transpose();
        if (centered) src -= base.mean[k];
        pb.mean_source[k] = src;
    }
    // The anchor's own contribution to the population-averaged adjoint terms,
    // the same donor integrand the base backward pass averages over atoms.
    for (int k = 0; k < K; ++k) {
        Coefficients c = spec.dynamics.at(base.grid.time(k));
        const double s = base.grid.time(k);
        auto donor = [&](int i) {
            Vec l1 = base.lambda[k + 1].row(i).transpose();
            Vec x = base.Y[k].row(i).transpose(), v = base.v[k].row(i).transpose();
            Vec b = (c.f2.transpose() * l1 + spec.cost->running(x, base.mean[k], v, s, 1).gm()) * dt;
            for (int j = 0; j < n; ++j) b += c.s2[j].transpose() * l1 * dW[k](i, j);
            return b;
        };
        Vec src = Vec::Zero(n);
        for (int a : anchors) src += share * donor(a);
        if (centered)
            for (int i = 0; i < N; ++i)
                if (w(i) > 0.0) src -= w(i) * donor(i);
        pb.common_backward[k] = src;
    }
    auto terminal_donor = [&](int i) {
        return Vec(spec.cost->terminal(base.Y[K].row(i).transpose(), base.mean[K], 1).gm());
    };
    pb.common_terminal = Vec::Zero(n);
    for (int a : anchors) pb.common_terminal += share * terminal_donor(a);
    if (centered)
        for (int i = 0; i < N; ++i)
            if (w(i) > 0.0) pb.common_terminal -= w(i) * terminal_donor(i);

    Flow f;
    f.kind = FlowKind::Measure;
    f.anchors = anchors;
    f.centered = centered;
    f.sol = solve_linear_fbsde(spec, base, pb, opt);
    return f;
}

std::vector<Flow> measure_spatial_flow(const ProblemSpec& spec, const FbsdeSolution& base,
                                       const std::vector<Flow>& spatial, const Flow& measure,
                                       const SolverOptions& opt) {
    if (!spec.cost->has_third_derivatives())
        throw Error("flows", "capability", "measure-spatial flow needs third derivatives of the cost");
    const int K = base.grid.K, N = base.particles(), n = spec.n, d = spec.d;
    const auto& ms = measure.sol;
    std::vector<Flow> out;
    for (const Flow& sp : spatial) {
        const auto& ss = sp.sol;
        LinearFlowProblem pb;
        pb.population = false;
        pb.initial = Eigen::MatrixXd::Zero(N, n);
        pb.backward_source.assign(K, Eigen::MatrixXd::Zero(N, n));
        pb.control_source.assign(K, Eigen::MatrixXd::Zero(N, d));
        for (int k = 0; k < K; ++k) {
            const double s = base.grid.time(k);
            parallel_for(N, opt.jobs, [&](int lo, int hi) {
                for (int i = lo; i < hi; ++i) {
                    JetVec dz(2 * n + d);
                    dz << ms.DY[k].row(i).transpose(), ms.DM[k], ms.Dv[k].row(i).transpose();
                    JetMat h = spec.cost->running_hessian_dir(base.Y[k].row(i).transpose(), base.mean[k],
                                                              base.v[k].row(i).transpose(), s, dz);
                    Vec dy = ss.DY[k].row(i).transpose(), dv = ss.Dv[k].row(i).transpose();
                    pb.backward_source[k].row(i) =
                        (h.block(0, 0, n, n) * dy + h.block(0, 2 * n, n, d) * dv).transpose();
                    pb.control_source[k].row(i) =
                        (h.block(2 * n, 0, d, n) * dy + h.block(2 * n, 2 * n, d, d) * dv).transpose();
                }
            });
        }
        pb.terminal_source = Eigen::MatrixXd::Zero(N, n);
        for (int i = 0; i < N; ++i) {
            JetVec dz(2 * n);
            dz << ms.DY[K].row(i).transpose(), ms.DM[K];
            JetMat h = spec.cost->terminal_hessian_dir(base.Y[K].row(i).transpose(), base.mean[K], dz);
            pb.terminal_source.row(i) = (h.block(0, 0, n, n) * ss.DY[K].row(i).transpose()).transpose();
        }
        Flow f;
        f.kind = FlowKind::MeasureSpatial;
        f.column = sp.column;
        f.anchors = measure.anchors;
        f.centered = measure.centered;
        f.sol = solve_linear_fbsde(spec, base, pb, opt);
        out.push_back(std::move(f));
    }
    return out;
}

Mat spatial_costate_jacobian(const std::vector<Flow>& spatial, int knot, int atom, int n) {
    Mat J(n, n);
    for (int c = 0; c < n; ++c) J.col(c) = spatial[c].sol.DP[knot].row(atom).transpose();
    return J;
}

FdCheck gateaux_fd_check(const ProblemSpec& spec, const FbsdeSolution& base, const Flow& flow,
                         const Eigen::MatrixXd& direction, const std::vector<double>& eps, const SolverOptions& opt) {
    FdCheck out;
    out.eps = eps;
    const Eigen::VectorXd& w = base.fit_weights;
    auto rms = [&](const Eigen::MatrixXd& A) { return std::sqrt(w.dot(A.rowwise().squaredNorm()) / w.sum()); };
    for (double e : eps) {
        ParticleEnsemble shifted = base.initial;
        shifted.states += e * direction;
        SolverOptions o = opt;
        o.fit_weights = base.fit_weights;
        FbsdeSolution pert = picard_solve(spec, shifted, base.grid, base.noise, o);
        if (!pert.diag.converged) throw Error("flows", "solver", "perturbed solve did not converge");
        double ey = 0.0, ep = 0.0;
        for (int k = 0; k <= base.grid.K; ++k) {
            Eigen::MatrixXd fy = (pert.Y[k] - base.Y[k]) / e, fp = (pert.P[k] - base.P[k]) / e;
            ey = std::max(ey, rms(fy - flow.sol.DY[k]) / std::max(rms(flow.sol.DY[k]), 1e-12));
            ep = std::max(ep, rms(fp - flow.sol.DP[k]) / std::max(rms(flow.sol.DP[k]), 1e-12));
        }
        out.error_Y.push_back(ey);
        out.error_P.push_back(ep);
    }
    if (eps.size() >= 2) out.slope_P = fit_log_slope(eps, out.error_P);
    return out;
}

namespace {

const char* kind_name(FlowKind k) {
    switch (k) {
        case FlowKind::Gateaux: return "gateaux";
        case FlowKind::Spatial: return "spatial";
        case FlowKind::Measure: return "measure";
        case FlowKind::MeasureSpatial: return "measure_spatial";
    }
    return "?";
}

}  // namespace

std::string flows_to_csv(const std::vector<Flow>& flows, const FbsdeSolution& base, int n, int d) {
    std::ostringstream os;
    os << "flow,kind,column,knot,t,particle";
    for (int a = 0; a < n; ++a) os << ",DY" << a + 1;
    for (int a = 0; a < n; ++a) os << ",DP" << a + 1;
    for (int a = 0; a < d; ++a) os << ",Dv" << a + 1;
    os << '\n';
    const int K = base.grid.K;
    for (std::size_t f = 0; f < flows.size(); ++f) {
        const auto& s = flows[f].sol;
        for (int k = 0; k <= K; ++k)
            for (int i = 0; i < base.particles(); ++i) {
                os << f << ',' << kind_name(flows[f].kind) << ',' << flows[f].column << ',' << k << ','
                   << format_double(base.grid.time(k)) << ',' << i;
                for (int a = 0; a < n; ++a) os << ',' << format_double(s.DY[k](i, a));
                for (int a = 0; a < n; ++a) os << ',' << format_double(s.DP[k](i, a));
                for (int a = 0; a < d; ++a) os << ',' << (k < K ? format_double(s.Dv[k](i, a)) : "");
                os << '\n';
            }
    }
    return os.str();
}

}  // namespace mfc

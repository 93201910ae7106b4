#include <cmath>

#include "mfc/fbsde.hpp"
#include "mfc/format.hpp"
#include "mfc/parallel.hpp"

namespace mfc {

namespace {

double weighted_rms(const Eigen::MatrixXd& A, const Eigen::VectorXd& w) {
    double s = w.sum();
    return s <= 0.0 ? 0.0 : std::sqrt(w.dot(A.rowwise().squaredNorm()) / s);
}

Mat row_as_q(const Eigen::MatrixXd& Q, int i, int n) {
    Mat q(n, n);
    for (int j = 0; j < n; ++j)
        for (int a = 0; a < n; ++a) q(a, j) = Q(i, j * n + a);
    return q;
}

void evaluate_flow_policy(const Policy& pol, int k, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& DY, int n,
                          Eigen::MatrixXd& DP, Eigen::MatrixXd& DQ) {
    int N = int(Y.rows());
    if (pol.pathwise && !pol.p_path.empty()) {
        DP = pol.p_path[k];
        DQ = Eigen::MatrixXd::Zero(N, n * n);
        return;
    }
    if (pol.p_fit.empty()) {
        DP = Eigen::MatrixXd::Zero(N, n);
        DQ = Eigen::MatrixXd::Zero(N, n * n);
        return;
    }
    Eigen::MatrixXd F = regression_features(pol.basis, Y, &DY);
    DP = pol.p_fit[k].predict(F);
    DQ = pol.q_fit[k].predict(F);
}

struct FlowState {
    std::vector<Eigen::MatrixXd> DY, DP, DQ, Dv, Dl;
    std::vector<Vec> DM;
};

class LinearSolver {
public:
    LinearSolver(const ProblemSpec& spec, const FbsdeSolution& base, const LinearFlowProblem& pb,
                 const SolverOptions& opt)
        : spec_(spec), b_(base), pb_(pb), opt_(opt), K_(base.grid.K), N_(base.particles()), n_(spec.n),
          d_(spec.d), dt_(base.grid.dt()), pathwise_(use_pathwise(spec)), theta_(opt.damping) {
        if (pb.initial.rows() != N_ || pb.initial.cols() != n_)
            throw Error("fbsde", "specification", "flow initial value has the wrong shape");
        st_.DY.resize(K_ + 1);
        st_.DP.resize(K_ + 1);
        st_.DQ.resize(K_ + 1);
        st_.Dl.resize(K_ + 1);
        st_.Dv.resize(K_);
        st_.DM.resize(K_ + 1);
    }

    Vec mean_shift(int k) const {
        Vec dm = pb_.population ? Vec(st_.DY[k].transpose() * b_.initial.weights) : Vec(Vec::Zero(n_));
        if (!pb_.mean_source.empty()) dm += pb_.mean_source[k];
        return dm;
    }

    void forward(const Policy& pol) {
        const auto& dW = b_.noise->dW;
        st_.DY[0] = pb_.initial;
        for (int k = 0; k < K_; ++k) {
            st_.DM[k] = mean_shift(k);
            evaluate_flow_policy(pol, k, b_.Y[k], st_.DY[k], n_, st_.DP[k], st_.DQ[k]);
            Coefficients c = spec_.dynamics.at(b_.grid.time(k));
            const double s = b_.grid.time(k);
            const Vec dm = st_.DM[k];
            Eigen::MatrixXd next(N_, n_), dv(N_, d_);
            parallel_for(N_, opt_.jobs, [&](int lo, int hi) {
                for (int i = lo; i < hi; ++i) {
                    Vec x = b_.Y[k].row(i).transpose(), v = b_.v[k].row(i).transpose();
                    Jet g = spec_.cost->running(x, b_.mean[k], v, s, 2);
                    Vec dy = st_.DY[k].row(i).transpose();
                    Vec dp = st_.DP[k].row(i).transpose();
                    Mat dq = row_as_q(st_.DQ[k], i, n_);
                    Vec rhs = c.f3.transpose() * dp + g.hxv().transpose() * dy + g.hmv().transpose() * dm;
                    for (int j = 0; j < n_; ++j) rhs += c.s3[j].transpose() * dq.col(j);
                    if (!pb_.control_source.empty()) rhs += pb_.control_source[k].row(i).transpose();
                    Vec u = -Mat(g.hvv()).llt().solve(rhs);
                    dv.row(i) = u.transpose();
                    Vec y = dy + (c.f1 * dy + c.f2 * dm + c.f3 * u) * dt_;
                    for (int j = 0; j < n_; ++j) y += (c.s1[j] * dy + c.s2[j] * dm + c.s3[j] * u) * dW[k](i, j);
                    next.row(i) = y.transpose();
                }
            });
            if (!next.allFinite())
                throw Error("fbsde", "divergence", "flow state became non-finite at step " + std::to_string(k));
            st_.Dv[k] = std::move(dv);
            st_.DY[k + 1] = std::move(next);
        }
        st_.DM[K_] = mean_shift(K_);
        st_.DQ[K_] = Eigen::MatrixXd::Zero(N_, n_ * n_);

        const Vec dm = st_.DM[K_];
        Eigen::MatrixXd own(N_, n_), donor(N_, n_);
        parallel_for(N_, opt_.jobs, [&](int lo, int hi) {
            for (int i = lo; i < hi; ++i) {
                Jet g = spec_.cost->terminal(b_.Y[K_].row(i).transpose(), b_.mean[K_], 2);
                Vec dy = st_.DY[K_].row(i).transpose();
                own.row(i) = (g.hxx() * dy + g.hxm() * dm).transpose();
                donor.row(i) = (g.hxm().transpose() * dy + g.hmm() * dm).transpose();
            }
        });
        Eigen::MatrixXd DP = own;
        if (pb_.population) DP.rowwise() += b_.initial.weights.transpose() * donor;
        if (pb_.common_terminal.size()) DP.rowwise() += pb_.common_terminal.transpose();
        if (pb_.terminal_source.size()) DP += pb_.terminal_source;
        st_.DP[K_] = DP;
    }

    struct Update {
        Policy policy;
        double delta = 0.0;
    };

    Update backward() {
        const auto& dW = b_.noise->dW;
        const Eigen::VectorXd& fw = b_.fit_weights;
        const double theta = theta_;
        Update out;
        out.policy.pathwise = pathwise_;
        out.policy.basis = opt_.basis;
        if (pathwise_)
            out.policy.p_path.resize(K_);
        else {
            out.policy.p_fit.resize(K_);
            out.policy.q_fit.resize(K_);
        }
        double change = 0.0, scale = 0.0;
        st_.Dl[K_] = st_.DP[K_];
        for (int k = K_ - 1; k >= 0; --k) {
            Coefficients c = spec_.dynamics.at(b_.grid.time(k));
            const double s = b_.grid.time(k);
            const Vec dm = st_.DM[k];
            const Eigen::MatrixXd& L1 = st_.Dl[k + 1];
            Eigen::MatrixXd own(N_, n_), donor(N_, n_);
            parallel_for(N_, opt_.jobs, [&](int lo, int hi) {
                for (int i = lo; i < hi; ++i) {
                    Vec x = b_.Y[k].row(i).transpose(), v = b_.v[k].row(i).transpose();
                    Jet g = spec_.cost->running(x, b_.mean[k], v, s, 2);
                    Vec dy = st_.DY[k].row(i).transpose(), u = st_.Dv[k].row(i).transpose();
                    Vec l1 = L1.row(i).transpose();
                    Vec a = c.f1.transpose() * l1 + g.hxx() * dy + g.hxm() * dm + g.hxv() * u;
                    if (!pb_.backward_source.empty()) a += pb_.backward_source[k].row(i).transpose();
                    a *= dt_;
                    Vec bb = (c.f2.transpose() * l1 + g.hxm().transpose() * dy + g.hmm() * dm + g.hmv() * u) * dt_;
                    for (int j = 0; j < n_; ++j) {
                        a += c.s1[j].transpose() * l1 * dW[k](i, j);
                        bb += c.s2[j].transpose() * l1 * dW[k](i, j);
                    }
                    own.row(i) = a.transpose();
                    donor.row(i) = bb.transpose();
                }
            });
            Eigen::MatrixXd Dl = L1 + own;
            if (pb_.population) Dl.rowwise() += b_.initial.weights.transpose() * donor;
            if (!pb_.common_backward.empty()) Dl.rowwise() += pb_.common_backward[k].transpose();
            if (!Dl.allFinite())
                throw Error("fbsde", "divergence", "flow costate became non-finite at step " + std::to_string(k));
            st_.Dl[k] = Dl;

            const Eigen::MatrixXd& Pold = st_.DP[k];
            scale = std::max(scale, weighted_rms(Pold, fw));
            if (pathwise_) {
                out.policy.p_path[k] = theta * Dl + (1.0 - theta) * Pold;
                change = std::max(change, weighted_rms(Dl - Pold, fw));
                continue;
            }
            Eigen::MatrixXd F = regression_features(opt_.basis, b_.Y[k], &st_.DY[k]);
            auto& pf = out.policy.p_fit[k];
            pf = fit_regression(F, theta * Dl + (1.0 - theta) * Pold, fw);
            change = std::max(change, weighted_rms(pf.predict(F) - Pold, fw) / theta);
            RegressionFit l1fit = fit_regression(F, L1, fw);
            Eigen::MatrixXd resid = L1 - l1fit.predict(F);
            Eigen::MatrixXd target(N_, n_ * n_);
            for (int j = 0; j < n_; ++j)
                target.middleCols(j * n_, n_) = resid.array().colwise() * (dW[k].col(j).array() / dt_);
            auto& qf = out.policy.q_fit[k];
            qf = fit_regression(F, theta * target + (1.0 - theta) * st_.DQ[k], fw);
            change = std::max(change, weighted_rms(qf.predict(F) - st_.DQ[k], fw) / theta);
        }
        out.delta = change / (1.0 + scale);
        return out;
    }

    LinearFlowSolution run() {
        LinearFlowSolution out;
        Policy pol;
        auto& dg = out.diag;
        for (dg.iterations = 1; dg.iterations <= opt_.picard_max; ++dg.iterations) {
            forward(pol);
            Update u = backward();
            pol = std::move(u.policy);
            dg.deltas.push_back(u.delta);
            if (!std::isfinite(u.delta) || u.delta > opt_.divergence_factor * std::max(1.0, dg.deltas.front())) {
                dg.diverged = true;
                break;
            }
            if (u.delta < opt_.picard_tol) {
                dg.converged = true;
                break;
            }
            // Open-loop directions (a flow input shared by every atom cannot be
            // resolved by the regression) can make the damped map oscillate;
            // halve the damping when two iterations did not gain.
            std::size_t m = dg.deltas.size();
            if (m >= last_cut_ + 3 && dg.deltas[m - 1] > 0.9 * dg.deltas[m - 3] && theta_ > 1.0 / 256.0) {
                theta_ *= 0.5;
                last_cut_ = m;
            }
        }
        dg.iterations = std::min(dg.iterations, opt_.picard_max);
        if (!dg.converged)
            throw Error("fbsde", "solver",
                        std::string(dg.diverged ? "linear flow diverged" : "linear flow did not converge") +
                            " after " + std::to_string(dg.deltas.size()) + " iterations (last delta " +
                            format_double(dg.deltas.back()) + ")");
        forward(pol);
        backward();
        out.DY = std::move(st_.DY);
        out.DP = std::move(st_.DP);
        out.DQ = std::move(st_.DQ);
        out.Dv = std::move(st_.Dv);
        out.Dlambda = std::move(st_.Dl);
        out.DM = std::move(st_.DM);
        return out;
    }

private:
    const ProblemSpec& spec_;
    const FbsdeSolution& b_;
    const LinearFlowProblem& pb_;
    const SolverOptions& opt_;
    int K_, N_, n_, d_;
    double dt_;
    bool pathwise_;
    double theta_;
    std::size_t last_cut_ = 0;
    FlowState st_;
};

}  // namespace

LinearFlowSolution solve_linear_fbsde(const ProblemSpec& spec, const FbsdeSolution& base,
                                      const LinearFlowProblem& problem, const SolverOptions& opt) {
    opt.validate();
    LinearSolver solver(spec, base, problem, opt);
    return solver.run();
}

}  // namespace mfc

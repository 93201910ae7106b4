#include "mfc/fbsde.hpp"

#include <cmath>

#include "mfc/format.hpp"
#include "mfc/parallel.hpp"

namespace mfc {

void SolverOptions::validate() const {
    if (!(picard_tol > 0.0)) throw Error("fbsde", "specification", "picard_tol must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw Error("fbsde", "specification", "damping must lie in (0, 1]");
    if (picard_max < 1) throw Error("fbsde", "specification", "picard_max must be at least 1");
    if (continuation_steps < 1) throw Error("fbsde", "specification", "continuation_steps must be at least 1");
}

void Policy::evaluate(int k, const Eigen::MatrixXd& Y, int n, Eigen::MatrixXd& P, Eigen::MatrixXd& Q) const {
    int N = int(Y.rows());
    if (pathwise && !p_path.empty()) {
        P = p_path[k];
        Q = q_path.empty() ? Eigen::MatrixXd::Zero(N, n * n) : q_path[k];
        return;
    }
    if (p_fit.empty()) {
        P = Eigen::MatrixXd::Zero(N, n);
        Q = Eigen::MatrixXd::Zero(N, n * n);
        return;
    }
    Eigen::MatrixXd F = regression_features(basis, Y);
    P = p_fit[k].predict(F);
    Q = q_fit.empty() || q_fit[k].empty() ? Eigen::MatrixXd::Zero(N, n * n) : q_fit[k].predict(F);
}

Mat FbsdeSolution::q_at(int k, int i, int n) const {
    Mat q(n, n);
    for (int j = 0; j < n; ++j)
        for (int a = 0; a < n; ++a) q(a, j) = Q[k](i, j * n + a);
    return q;
}

namespace {

Mat row_as_q(const Eigen::MatrixXd& Q, int i, int n) {
    Mat q(n, n);
    for (int j = 0; j < n; ++j)
        for (int a = 0; a < n; ++a) q(a, j) = Q(i, j * n + a);
    return q;
}

double weighted_rms(const Eigen::MatrixXd& A, const Eigen::VectorXd& w) {
    double s = w.sum();
    if (s <= 0.0) return 0.0;
    return std::sqrt(w.dot(A.rowwise().squaredNorm()) / s);
}

void check_finite(const Eigen::MatrixXd& A, int k, const char* what) {
    if (!A.allFinite())
        throw Error("fbsde", "divergence", std::string(what) + " became non-finite at step " + std::to_string(k));
}

// Terminal adjoint D_x g_T(Y_i) + sum_j w_j D_m g_T(Y_j), the discrete
// terminal condition of the adjoint equation.
Eigen::MatrixXd terminal_adjoint(const ProblemSpec& spec, const Eigen::MatrixXd& Y, const Vec& mbar,
                                 const Eigen::VectorXd& w, int jobs) {
    int N = int(Y.rows()), n = spec.n;
    Eigen::MatrixXd gx(N, n), gm(N, n);
    parallel_for(N, jobs, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            Jet j = spec.cost->terminal(Y.row(i).transpose(), mbar, 1);
            gx.row(i) = j.gx().transpose();
            gm.row(i) = j.gm().transpose();
        }
    });
    Eigen::RowVectorXd common = w.transpose() * gm;
    return gx.rowwise() + common;
}

}  // namespace

bool use_pathwise(const ProblemSpec& spec) { return spec.dynamics.diffusion_is_zero(); }

std::shared_ptr<const BrownianBundle> make_noise(const ParticleEnsemble& ensemble, const TimeGrid& grid, int dim,
                                                 std::uint64_t seed, int step_offset, int jobs) {
    return std::make_shared<BrownianBundle>(sample_increments(grid, ensemble.streams, dim, seed, step_offset, jobs));
}

FbsdeSolution make_solution_shell(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                                  std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt) {
    opt.validate();
    ensemble.validate();
    if (ensemble.dim() != spec.n) throw Error("fbsde", "specification", "ensemble dimension differs from the state");
    if (!noise || noise->particles() != ensemble.size() || noise->steps() != grid.K || noise->dim != spec.n)
        throw Error("fbsde", "specification", "Brownian bundle does not match the ensemble and grid");
    FbsdeSolution sol;
    sol.grid = grid;
    sol.initial = ensemble;
    sol.noise = std::move(noise);
    sol.fit_weights = opt.fit_weights.size() ? opt.fit_weights : ensemble.weights;
    if (sol.fit_weights.size() != ensemble.size())
        throw Error("fbsde", "specification", "fit weights differ in length from the ensemble");
    int K = grid.K;
    sol.Y.resize(K + 1);
    sol.P.resize(K + 1);
    sol.Q.resize(K + 1);
    sol.lambda.resize(K + 1);
    sol.mean.resize(K + 1);
    sol.v.resize(K);
    sol.Y[0] = ensemble.states;
    return sol;
}

void forward_pass(const ProblemSpec& spec, const Policy& policy, double rho, const SolverOptions& opt,
                  FbsdeSolution& sol) {
    const int K = sol.grid.K, N = sol.particles(), n = spec.n, d = spec.d;
    const double dt = sol.grid.dt();
    const Eigen::VectorXd& w = sol.initial.weights;
    const auto& dW = sol.noise->dW;
    std::vector<int> iters(N, 0);
    for (int k = 0; k < K; ++k) {
        const Eigen::MatrixXd& Y = sol.Y[k];
        sol.mean[k] = Y.transpose() * w;
        policy.evaluate(k, Y, n, sol.P[k], sol.Q[k]);
        Coefficients c = spec.dynamics.at(sol.grid.time(k));
        bool warm = sol.v[k].rows() == N;
        if (!warm) sol.v[k].setZero(N, d);
        Eigen::MatrixXd next(N, n);
        const Vec mbar = sol.mean[k];
        const double s = sol.grid.time(k);
        parallel_for(N, opt.jobs, [&](int lo, int hi) {
            for (int i = lo; i < hi; ++i) {
                Vec x = Y.row(i).transpose();
                Vec p = rho * sol.P[k].row(i).transpose();
                Mat q = rho * row_as_q(sol.Q[k], i, n);
                Vec v0 = sol.v[k].row(i).transpose();
                ControlResult cr = minimize_control(spec, c, x, mbar, s, p, q, warm ? &v0 : nullptr, opt.newton);
                iters[i] = std::max(iters[i], cr.iterations);
                sol.v[k].row(i) = cr.v.transpose();
                Vec y = x + drift(c, x, mbar, cr.v) * dt;
                for (int j = 0; j < n; ++j) y += diffusion_column(c, j, x, mbar, cr.v) * dW[k](i, j);
                next.row(i) = y.transpose();
            }
        });
        check_finite(next, k, "state");
        sol.Y[k + 1] = std::move(next);
    }
    sol.mean[K] = sol.Y[K].transpose() * w;
    sol.P[K] = terminal_adjoint(spec, sol.Y[K], sol.mean[K], w, opt.jobs);
    sol.Q[K] = Eigen::MatrixXd::Zero(N, n * n);
    check_finite(sol.P[K], K, "terminal costate");
    int mx = 0;
    for (int it : iters) mx = std::max(mx, it);
    sol.diag.newton_max_iterations = std::max(sol.diag.newton_max_iterations, mx);
}

BackwardResult backward_pass(const ProblemSpec& spec, const SolverOptions& opt, FbsdeSolution& sol) {
    const int K = sol.grid.K, N = sol.particles(), n = spec.n;
    const double dt = sol.grid.dt(), theta = opt.damping;
    const Eigen::VectorXd& w = sol.initial.weights;
    const Eigen::VectorXd& fw = sol.fit_weights;
    const auto& dW = sol.noise->dW;
    const bool pathwise = use_pathwise(spec);

    BackwardResult out;
    out.policy.pathwise = pathwise;
    out.policy.basis = opt.basis;
    if (pathwise) {
        out.policy.p_path.resize(K);
    } else {
        out.policy.p_fit.resize(K);
        out.policy.q_fit.resize(K);
    }
    double change = 0.0, scale = 0.0;
    sol.lambda[K] = sol.P[K];
    for (int k = K - 1; k >= 0; --k) {
        const Eigen::MatrixXd& Y = sol.Y[k];
        const Eigen::MatrixXd& L1 = sol.lambda[k + 1];
        Coefficients c = spec.dynamics.at(sol.grid.time(k));
        const Vec mbar = sol.mean[k];
        const double s = sol.grid.time(k);
        Eigen::MatrixXd own(N, n), donor(N, n);
        parallel_for(N, opt.jobs, [&](int lo, int hi) {
            for (int i = lo; i < hi; ++i) {
                Vec x = Y.row(i).transpose(), v = sol.v[k].row(i).transpose();
                Vec l1 = L1.row(i).transpose();
                Jet g = spec.cost->running(x, mbar, v, s, 1);
                Vec a = (c.f1.transpose() * l1 + g.gx()) * dt;
                Vec b = (c.f2.transpose() * l1 + g.gm()) * dt;
                for (int j = 0; j < n; ++j) {
                    a += c.s1[j].transpose() * l1 * dW[k](i, j);
                    b += c.s2[j].transpose() * l1 * dW[k](i, j);
                }
                own.row(i) = a.transpose();
                donor.row(i) = b.transpose();
            }
        });
        Eigen::RowVectorXd common = w.transpose() * donor;
        sol.lambda[k] = (L1 + own).rowwise() + common;
        check_finite(sol.lambda[k], k, "costate");

        const Eigen::MatrixXd& Pold = sol.P[k];
        scale = std::max(scale, weighted_rms(Pold, fw));
        if (pathwise) {
            out.policy.p_path[k] = theta * sol.lambda[k] + (1.0 - theta) * Pold;
            change = std::max(change, weighted_rms(sol.lambda[k] - Pold, fw));
            continue;
        }
        Eigen::MatrixXd F = regression_features(opt.basis, Y);
        auto& pf = out.policy.p_fit[k];
        pf = fit_regression(F, theta * sol.lambda[k] + (1.0 - theta) * Pold, fw);
        change = std::max(change, weighted_rms(pf.predict(F) - Pold, fw) / theta);

        // Q from the increment of the projected-out part of the next costate,
        // which removes the O(1) conditional mean from the product with dW.
        RegressionFit l1fit = fit_regression(F, L1, fw);
        Eigen::MatrixXd resid = L1 - l1fit.predict(F);
        Eigen::MatrixXd target(N, n * n);
        for (int j = 0; j < n; ++j)
            target.middleCols(j * n, n) = resid.array().colwise() * (dW[k].col(j).array() / dt);
        const Eigen::MatrixXd& Qold = sol.Q[k];
        auto& qf = out.policy.q_fit[k];
        qf = fit_regression(F, theta * target + (1.0 - theta) * Qold, fw);
        change = std::max(change, weighted_rms(qf.predict(F) - Qold, fw) / theta);
    }
    out.delta = change / (1.0 + scale);
    return out;
}

FbsdeSolution picard_solve(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                           std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt, const Policy* warm,
                           double rho) {
    FbsdeSolution sol = make_solution_shell(spec, ensemble, grid, std::move(noise), opt);
    sol.rho = rho;
    Policy policy;
    if (warm) policy = *warm;
    auto& dg = sol.diag;
    try {
        for (dg.iterations = 1; dg.iterations <= opt.picard_max; ++dg.iterations) {
            forward_pass(spec, policy, rho, opt, sol);
            BackwardResult br = backward_pass(spec, opt, sol);
            policy = std::move(br.policy);
            dg.deltas.push_back(br.delta);
            if (!std::isfinite(br.delta) || br.delta > opt.divergence_factor * std::max(1.0, dg.deltas.front())) {
                dg.diverged = true;
                break;
            }
            if (br.delta < opt.picard_tol) {
                dg.converged = true;
                break;
            }
        }
        dg.iterations = std::min(dg.iterations, opt.picard_max);
        if (!dg.diverged) {
            sol.policy = policy;
            forward_pass(spec, sol.policy, rho, opt, sol);
            backward_pass(spec, opt, sol);
        }
    } catch (const Error& e) {
        if (e.kind() != "divergence") throw;
        dg.diverged = true;
        dg.converged = false;
    }
    dg.rho_schedule.push_back(rho);
    return sol;
}

FbsdeSolution continuation_solve(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                                 std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt) {
    double rho = 0.0, step = 1.0 / opt.continuation_steps;
    int depth = 0, stage = 0, total_iterations = 0;
    // A failed stage halves both the homotopy step and the Picard damping:
    // the coupling added per stage shrinks and the damped map contracts.
    SolverOptions so = opt;
    Policy policy;
    std::vector<double> schedule, deltas;
    FbsdeSolution last;
    bool have = false;
    while (rho < 1.0) {
        double target = std::min(1.0, rho + step);
        if (1.0 - target < 1e-12) target = 1.0;
        FbsdeSolution sol = picard_solve(spec, ensemble, grid, noise, so, have ? &policy : nullptr, target);
        total_iterations += sol.diag.iterations;
        deltas.insert(deltas.end(), sol.diag.deltas.begin(), sol.diag.deltas.end());
        if (sol.diag.converged) {
            rho = target;
            policy = sol.policy;
            schedule.push_back(target);
            last = std::move(sol);
            have = true;
            ++stage;
            continue;
        }
        if (++depth > opt.max_bisections)
            throw Error("fbsde", "solver",
                        "continuation stage " + std::to_string(stage) + " at rho=" + format_double(target) +
                            " did not converge after " + std::to_string(opt.max_bisections) + " bisections");
        step *= 0.5;
        so.damping *= 0.5;
    }
    last.diag.rho_schedule = schedule;
    last.diag.deltas = deltas;
    last.diag.iterations = total_iterations;
    return last;
}

FbsdeSolution solve(const ProblemSpec& spec, const ParticleEnsemble& ensemble, const TimeGrid& grid,
                    std::shared_ptr<const BrownianBundle> noise, const SolverOptions& opt) {
    FbsdeSolution sol = picard_solve(spec, ensemble, grid, noise, opt);
    if (sol.diag.converged) return sol;
    if (opt.auto_continuation) return continuation_solve(spec, ensemble, grid, noise, opt);
    double last = sol.diag.deltas.empty() ? NAN : sol.diag.deltas.back();
    throw Error("fbsde", "solver",
                "Picard iteration did not converge in " + std::to_string(opt.picard_max) +
                    " iterations (last delta " + format_double(last) + ")");
}

ResidualReport residuals(const ProblemSpec& spec, const FbsdeSolution& sol) {
    ResidualReport r;
    const int K = sol.grid.K, N = sol.particles(), n = spec.n;
    const double dt = sol.grid.dt();
    const Eigen::VectorXd& w = sol.initial.weights;
    const Eigen::VectorXd& fw = sol.fit_weights;
    const auto& dW = sol.noise->dW;
    const bool pathwise = use_pathwise(spec);

    Eigen::MatrixXd Y = sol.initial.states;
    double back_sq = 0.0, mart_sq = 0.0;
    for (int k = 0; k < K; ++k) {
        Coefficients c = spec.dynamics.at(sol.grid.time(k));
        const double s = sol.grid.time(k);
        Vec mbar = Y.transpose() * w;
        Eigen::MatrixXd next(N, n), own(N, n), donor(N, n), mart(N, n);
        for (int i = 0; i < N; ++i) {
            Vec x = Y.row(i).transpose(), v = sol.v[k].row(i).transpose();
            Vec y = x + drift(c, x, mbar, v) * dt;
            for (int j = 0; j < n; ++j) y += diffusion_column(c, j, x, mbar, v) * dW[k](i, j);
            next.row(i) = y.transpose();

            Vec xs = sol.Y[k].row(i).transpose(), p = sol.P[k].row(i).transpose();
            Mat q = sol.q_at(k, i, n);
            Jet g = spec.cost->running(xs, sol.mean[k], v, s, 1);
            Vec a = c.f1.transpose() * p + g.gx(), b = c.f2.transpose() * p + g.gm();
            Vec qdw = Vec::Zero(n);
            for (int j = 0; j < n; ++j) {
                a += c.s1[j].transpose() * q.col(j);
                b += c.s2[j].transpose() * q.col(j);
                qdw += q.col(j) * dW[k](i, j);
            }
            own.row(i) = a.transpose();
            donor.row(i) = b.transpose();
            mart.row(i) = -qdw.transpose();
            Vec gv = c.f3.transpose() * p + g.gv();
            for (int j = 0; j < n; ++j) gv += c.s3[j].transpose() * q.col(j);
            r.foc_max = std::max(r.foc_max, gv.cwiseAbs().maxCoeff());
        }
        r.forward_reconstruction = std::max(r.forward_reconstruction, (next - sol.Y[k + 1]).cwiseAbs().maxCoeff());
        Y = next;

        Eigen::RowVectorXd common = w.transpose() * donor;
        Eigen::MatrixXd target = (sol.P[k + 1] + own * dt).rowwise() + common * dt;
        Eigen::MatrixXd fitted = target;
        if (!pathwise) {
            Eigen::MatrixXd F = regression_features(sol.policy.basis, sol.Y[k]);
            fitted = fit_regression(F, target, fw).predict(F);
        }
        double e = weighted_rms(sol.P[k] - fitted, fw);
        back_sq += e * e;
        Eigen::RowVectorXd m = w.transpose() * (target - sol.P[k] + mart);
        mart_sq += m.squaredNorm();
    }
    r.backward_one_step = std::sqrt(back_sq / K);
    r.martingale = std::sqrt(mart_sq / K);
    return r;
}

}  // namespace mfc

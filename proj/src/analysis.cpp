#include "mfc/analysis.hpp"

#include <cmath>

#include "mfc/bench.hpp"
#include "mfc/parallel.hpp"

namespace mfc {

namespace {

double weighted_rms(const Eigen::MatrixXd& A, const Eigen::VectorXd& w) {
    double s = w.sum();
    return s <= 0.0 ? 0.0 : std::sqrt(w.dot(A.rowwise().squaredNorm()) / s);
}

// Diffusion columns at a point stacked as an n x n matrix.
Mat diffusion_matrix(const ProblemSpec& spec, const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v) {
    Mat S(spec.n, spec.n);
    for (int j = 0; j < spec.n; ++j) S.col(j) = diffusion_column(c, j, x, mbar, v);
    return S;
}

FbsdeSolution solve_from(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K, std::uint64_t seed,
                         const SolverOptions& opt, int step_offset = 0) {
    TimeGrid grid = make_grid(t0, spec.T, K);
    auto noise = make_noise(m, grid, spec.n, seed, step_offset, opt.jobs);
    return solve(spec, m, grid, noise, opt);
}

}  // namespace

double evaluate_value(const ProblemSpec& spec, const FbsdeSolution& sol) {
    const int K = sol.grid.K, N = sol.particles();
    const double dt = sol.grid.dt();
    const Eigen::VectorXd& w = sol.initial.weights;
    double V = 0.0;
    for (int k = 0; k < K; ++k) {
        double s = 0.0;
        for (int i = 0; i < N; ++i)
            if (w(i) > 0.0)
                s += w(i) * spec.cost->running(sol.Y[k].row(i).transpose(), sol.mean[k], sol.v[k].row(i).transpose(),
                                               sol.grid.time(k), 0).value;
        V += dt * s;
    }
    for (int i = 0; i < N; ++i)
        if (w(i) > 0.0) V += w(i) * spec.cost->terminal(sol.Y[K].row(i).transpose(), sol.mean[K], 0).value;
    return V;
}

double fixed_control_cost(const ProblemSpec& spec, const FbsdeSolution& sol, const Eigen::MatrixXd& initial_states) {
    const int K = sol.grid.K, N = sol.particles(), n = spec.n;
    const double dt = sol.grid.dt();
    const Eigen::VectorXd& w = sol.initial.weights;
    const auto& dW = sol.noise->dW;
    Eigen::MatrixXd Y = initial_states;
    double J = 0.0;
    for (int k = 0; k < K; ++k) {
        Coefficients c = spec.dynamics.at(sol.grid.time(k));
        Vec mbar = Y.transpose() * w;
        Eigen::MatrixXd next(N, n);
        for (int i = 0; i < N; ++i) {
            Vec x = Y.row(i).transpose(), v = sol.v[k].row(i).transpose();
            if (w(i) > 0.0) J += dt * w(i) * spec.cost->running(x, mbar, v, sol.grid.time(k), 0).value;
            Vec y = x + drift(c, x, mbar, v) * dt;
            for (int j = 0; j < n; ++j) y += diffusion_column(c, j, x, mbar, v) * dW[k](i, j);
            next.row(i) = y.transpose();
        }
        Y = next;
    }
    Vec mbar = Y.transpose() * w;
    for (int i = 0; i < N; ++i)
        if (w(i) > 0.0) J += w(i) * spec.cost->terminal(Y.row(i).transpose(), mbar, 0).value;
    return J;
}

GradientCheck gradient_identity_check(const ProblemSpec& spec, const FbsdeSolution& sol,
                                      const Eigen::MatrixXd& direction, const std::vector<double>& eps) {
    GradientCheck gc;
    gc.eps = eps;
    const Eigen::VectorXd& w = sol.initial.weights;
    gc.predicted = (sol.P[0].cwiseProduct(direction).rowwise().sum()).dot(w);
    double J0 = fixed_control_cost(spec, sol, sol.initial.states);
    double scale = std::max(std::abs(gc.predicted), 1e-300);
    std::vector<double> signed_err;
    for (double e : eps) {
        double Je = fixed_control_cost(spec, sol, sol.initial.states + e * direction);
        double fd = (Je - J0) / e;
        gc.fd.push_back(fd);
        gc.error.push_back(std::abs(fd - gc.predicted) / scale);
        signed_err.push_back((fd - gc.predicted) / scale);
    }
    if (eps.size() >= 2) {
        gc.slope = fit_log_slope(eps, gc.error);
        std::size_t a = eps.size() - 2, b = eps.size() - 1;
        gc.floor = std::abs((eps[a] * signed_err[b] - eps[b] * signed_err[a]) / (eps[a] - eps[b]));
    }
    return gc;
}

double value_time_derivative(const ProblemSpec& spec, const FbsdeSolution& sol, const std::vector<Flow>& spatial,
                             double gradient_scale) {
    const int N = sol.particles(), n = spec.n;
    const Eigen::VectorXd& w = sol.initial.weights;
    const double t0 = sol.grid.t0;
    Coefficients c = spec.dynamics.at(t0);
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        if (w(i) <= 0.0) continue;
        Vec x = sol.Y[0].row(i).transpose();
        Vec p = gradient_scale * sol.P[0].row(i).transpose();
        Mat J = spatial_costate_jacobian(spatial, 0, i, n);
        Mat q = 0.5 * J * diffusion_matrix(spec, c, x, sol.mean[0], Vec::Zero(spec.d));
        Vec warm = sol.v[0].row(i).transpose();
        total += w(i) * hamiltonian(spec, c, x, sol.mean[0], t0, p, q, &warm).H;
    }
    return -total;
}

BellmanReport bellman_residual(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K,
                               std::uint64_t seed, const SolverOptions& opt, double gradient_scale) {
    validate_spec(spec, {.bellman = true});
    BellmanReport r;
    r.K = K;
    r.N = m.size();
    double delta = (spec.T - t0) / 200.0;
    FbsdeSolution s0 = solve_from(spec, m, t0, K, seed, opt);
    FbsdeSolution s1 = solve_from(spec, m, t0 + delta, K, seed, opt);
    r.value = evaluate_value(spec, s0);
    r.dVdt_fd = (evaluate_value(spec, s1) - r.value) / delta;
    auto spatial = spatial_jacobian(spec, s0, opt);
    r.h_integral = -value_time_derivative(spec, s0, spatial, gradient_scale);
    r.residual_raw = std::abs(r.dVdt_fd + r.h_integral);
    r.residual_rel = r.residual_raw / std::max(std::abs(r.h_integral), 1e-300);
    return r;
}

std::vector<double> sensitivity_errors(const ProblemSpec& spec, const FbsdeSolution& sol, const std::vector<int>& knots,
                                       std::uint64_t fresh_seed, const SolverOptions& opt) {
    std::vector<double> out;
    const Eigen::VectorXd& fw = sol.fit_weights;
    for (int k : knots) {
        if (k <= 0 || k >= sol.grid.K) throw Error("analysis", "range", "sensitivity knot must be interior");
        ParticleEnsemble restart = sol.initial;
        restart.states = sol.Y[k];
        SolverOptions o = opt;
        o.fit_weights = fw;
        FbsdeSolution fresh = solve_from(spec, restart, sol.grid.time(k), sol.grid.K - k, fresh_seed, o);
        out.push_back(weighted_rms(fresh.P[0] - sol.P[k], fw) / std::max(weighted_rms(sol.P[k], fw), 1e-300));
    }
    return out;
}

RestartCheck flow_property_check(const ProblemSpec& spec, const FbsdeSolution& sol, int knot, std::uint64_t seed,
                                 const SolverOptions& opt) {
    RestartCheck rc;
    rc.knot = knot;
    const Eigen::VectorXd& fw = sol.fit_weights;
    ParticleEnsemble restart = sol.initial;
    restart.states = sol.Y[knot];
    SolverOptions o = opt;
    o.fit_weights = fw;
    FbsdeSolution tail =
        solve_from(spec, restart, sol.grid.time(knot), sol.grid.K - knot, seed, o, sol.noise->step_offset + knot);
    for (int k = knot; k <= sol.grid.K; ++k) {
        double e = weighted_rms(tail.Y[k - knot] - sol.Y[k], fw) + weighted_rms(tail.P[k - knot] - sol.P[k], fw);
        rc.restart_error = std::max(rc.restart_error, e);
    }
    rc.one_step_error = residuals(spec, sol).backward_one_step;
    return rc;
}

MonotonicityReport monotonicity_certificate(const ProblemSpec& spec, int samples, std::uint64_t seed, int atoms,
                                            double radius) {
    MonotonicityReport rep;
    rep.samples = samples;
    const int n = spec.n, d = spec.d;
    rep.lambda_hat = estimate_convexity(spec).lambda_hat;
    double Lc = 4.0 * spec.cost->declared_bound();
    rep.alpha = Lc + Lc * Lc / (4.0 * rep.lambda_hat);
    rep.worst_margin = -std::numeric_limits<double>::infinity();
    std::uint64_t draw = 0;
    auto U = [&](double r) { return r * (2.0 * uniform01(seed, 0xA11CE, draw++, 0) - 1.0); };
    const double w = 1.0 / atoms;

    struct Lifted {
        Eigen::MatrixXd X, P, Q, G, F, A, V;
    };
    auto lift = [&](double s, Lifted& L) {
        Coefficients c = spec.dynamics.at(s);
        Vec mbar = L.X.colwise().mean().transpose();
        L.V.resize(atoms, d);
        L.F.resize(atoms, n);
        L.A.resize(atoms, n * n);
        L.G.resize(atoms, n);
        Eigen::MatrixXd meas(atoms, n);
        for (int i = 0; i < atoms; ++i) {
            Vec x = L.X.row(i).transpose(), p = L.P.row(i).transpose();
            Mat q(n, n);
            for (int j = 0; j < n; ++j)
                for (int a = 0; a < n; ++a) q(a, j) = L.Q(i, j * n + a);
            HamiltonianValue h = hamiltonian(spec, c, x, mbar, s, p, q);
            L.V.row(i) = h.v_hat.transpose();
            L.F.row(i) = drift(c, x, mbar, h.v_hat).transpose();
            for (int j = 0; j < n; ++j)
                L.A.row(i).segment(j * n, n) = diffusion_column(c, j, x, mbar, h.v_hat).transpose();
            L.G.row(i) = -h.D_xH.transpose();
            meas.row(i) = hamiltonian_measure_term(spec, c, x, mbar, h.v_hat, s, p, q).transpose();
        }
        L.G.rowwise() -= meas.colwise().mean();
    };
    for (int it = 0; it < samples; ++it) {
        double s = 0.5 * spec.T * (1.0 + U(1.0));
        Lifted a, b;
        for (Lifted* L : {&a, &b}) {
            L->X.resize(atoms, n);
            L->P.resize(atoms, n);
            L->Q.resize(atoms, n * n);
            for (int i = 0; i < atoms; ++i) {
                for (int j = 0; j < n; ++j) L->X(i, j) = U(radius);
                for (int j = 0; j < n; ++j) L->P(i, j) = U(radius);
                for (int j = 0; j < n * n; ++j) L->Q(i, j) = U(radius);
            }
            lift(s, *L);
        }
        auto ip = [&](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) { return w * A.cwiseProduct(B).sum(); };
        Eigen::MatrixXd dX = b.X - a.X, dP = b.P - a.P, dQ = b.Q - a.Q, dV = b.V - a.V;
        double lhs = ip(b.G - a.G, dX) + ip(b.F - a.F, dP) + ip(b.A - a.A, dQ);
        double spread = ip(dX, dX) + ip(dP, dP) + ip(dQ, dQ);
        double control = ip(dV, dV);
        double rhs = -rep.lambda_hat * control + rep.alpha * spread;
        rep.worst_margin = std::max(rep.worst_margin, lhs - rhs);
        if (lhs > rhs) ++rep.violations;
        rep.alpha_needed = std::max(rep.alpha_needed, (lhs + rep.lambda_hat * control) / spread);
    }
    return rep;
}

namespace {

// Path functional whose expectation over a test particle's noise gives the
// master field: running cost plus the measure derivative of H against the
// population, and the terminal cost plus its measure derivative.
std::vector<double> master_functional(const ProblemSpec& spec, const FbsdeSolution& sol) {
    const int K = sol.grid.K, N = sol.particles(), n = spec.n;
    const double dt = sol.grid.dt();
    const Eigen::VectorXd& w = sol.initial.weights;
    std::vector<double> phi(N, 0.0);
    for (int k = 0; k < K; ++k) {
        Coefficients c = spec.dynamics.at(sol.grid.time(k));
        const double s = sol.grid.time(k);
        Vec M = Vec::Zero(n);
        for (int j = 0; j < N; ++j) {
            if (w(j) <= 0.0) continue;
            Mat q = 0.5 * sol.q_at(k, j, n);
            M += w(j) * hamiltonian_measure_term(spec, c, sol.Y[k].row(j).transpose(), sol.mean[k],
                                                 sol.v[k].row(j).transpose(), s, sol.P[k].row(j).transpose(), q);
        }
        for (int i = 0; i < N; ++i) {
            Vec y = sol.Y[k].row(i).transpose();
            phi[i] += dt * (spec.cost->running(y, sol.mean[k], sol.v[k].row(i).transpose(), s, 0).value + y.dot(M));
        }
    }
    Vec MT = Vec::Zero(n);
    for (int j = 0; j < N; ++j)
        if (w(j) > 0.0) MT += w(j) * spec.cost->terminal(sol.Y[K].row(j).transpose(), sol.mean[K], 1).gm();
    for (int i = 0; i < N; ++i) {
        Vec y = sol.Y[K].row(i).transpose();
        phi[i] += spec.cost->terminal(y, sol.mean[K], 0).value + y.dot(MT);
    }
    return phi;
}

// Probe average of the functional with the martingale sum P_k(Y_k) . sigma dW_k
// subtracted as a control variate. Probes stay out of the regression, so P_k
// does not see the probe's own increment and the correction has mean zero.
double probe_average(const ProblemSpec& spec, const FbsdeSolution& sol, const std::vector<double>& phi, int first,
                     int count) {
    const int n = spec.n;
    double s = 0.0;
    for (int i = first; i < first + count; ++i) {
        double mart = 0.0;
        for (int k = 0; k < sol.grid.K; ++k) {
            Coefficients c = spec.dynamics.at(sol.grid.time(k));
            Vec y = sol.Y[k].row(i).transpose(), v = sol.v[k].row(i).transpose();
            Vec dW = sol.noise->dW[k].row(i).transpose();
            mart += sol.P[k].row(i).dot(diffusion_matrix(spec, c, y, sol.mean[k], v) * dW.head(n));
        }
        s += phi[i] - mart;
    }
    return s / count;
}

}  // namespace

double master_terminal_gap(const ProblemSpec& spec, const Vec& x, const ParticleEnsemble& m) {
    // Zero-horizon solution: every knot collapses onto the terminal one.
    ParticleEnsemble ens = with_probes(m, x, 1, std::uint64_t(1) << 40);
    FbsdeSolution sol;
    sol.grid.t0 = sol.grid.T = spec.T;
    sol.grid.K = 0;
    sol.grid.knots = {spec.T};
    sol.initial = ens;
    sol.Y = {ens.states};
    sol.mean = {Vec(ens.states.transpose() * ens.weights)};
    double rep = master_functional(spec, sol)[m.size()];
    Vec mbar = ensemble_mean(m);
    double closed = spec.cost->terminal(x, mbar, 0).value;
    for (int i = 0; i < m.size(); ++i)
        closed += m.weights(i) * x.dot(spec.cost->terminal(m.atom(i), mbar, 1).gm());
    return std::abs(rep - closed);
}

MasterReport evaluate_master(const ProblemSpec& spec, const Vec& x, const ParticleEnsemble& m, double t0, int K,
                             std::uint64_t seed, const SolverOptions& opt, const MasterSettings& st) {
    validate_spec(spec, {.bellman = true, .master = true});
    MasterReport r;
    r.x = x;
    const int N = m.size(), M = st.probes, n = spec.n;
    ParticleEnsemble ens = with_probes(m, x, M, std::uint64_t(1) << 40);
    // Probes come in mirrored pairs, so the noise-linear part of the probe
    // functional cancels in U and in its time difference.
    if (M % 2 == 0)
        for (int a = M / 2; a < M; ++a) ens.streams[N + a] = ens.streams[N + a - M / 2] | kMirrorStream;
    std::vector<int> probes(M);
    for (int a = 0; a < M; ++a) probes[a] = N + a;

    FbsdeSolution base = solve_from(spec, ens, t0, K, seed, opt);
    std::vector<double> phi = master_functional(spec, base);
    r.U = probe_average(spec, base, phi, N, M);
    r.D_xU = base.P[0].row(N).transpose();
    auto spatial = spatial_jacobian(spec, base, opt);
    r.D_xxU = spatial_costate_jacobian(spatial, 0, N, n);

    Coefficients c0 = spec.dynamics.at(t0);
    const Vec& mbar = base.mean[0];
    Mat qx = 0.5 * r.D_xxU * diffusion_matrix(spec, c0, x, mbar, Vec::Zero(spec.d));
    r.hamiltonian = hamiltonian(spec, c0, x, mbar, t0, r.D_xU, qx).H;

    Flow mf = measure_flow(spec, base, probes, false, opt);
    auto msf = measure_spatial_flow(spec, base, spatial, mf, opt);
    r.dUdnu_probe = mf.sol.DP[0](N, 0);
    const Eigen::VectorXd& w = ens.weights;
    for (int i = 0; i < N; ++i) {
        if (w(i) <= 0.0) continue;
        Vec xi = base.Y[0].row(i).transpose(), v = base.v[0].row(i).transpose(), p = base.P[0].row(i).transpose();
        Mat S = diffusion_matrix(spec, c0, xi, mbar, v);
        r.drift_term += w(i) * drift(c0, xi, mbar, v).dot(mf.sol.DP[0].row(i).transpose());
        Mat J = spatial_costate_jacobian(msf, 0, i, n);
        r.trace_term += w(i) * 0.5 * (S.transpose() * J * S).trace();
        Mat q = 0.5 * spatial_costate_jacobian(spatial, 0, i, n) * S;
        r.dH_term += w(i) * dH_dnu(spec, c0, xi, mbar, v, t0, p, q, x);
    }
    r.drift_term *= st.measure_scale;
    r.trace_term *= st.measure_scale;

    double delta = (spec.T - t0) / 200.0;
    FbsdeSolution later = solve_from(spec, ens, t0 + delta, K, seed, opt);
    r.dUdt = (probe_average(spec, later, master_functional(spec, later), N, M) - r.U) / delta;

    double rest = r.hamiltonian + r.drift_term + r.trace_term + r.dH_term;
    r.residual_raw = std::abs(r.dUdt + rest);
    r.residual_rel = r.residual_raw / std::max({std::abs(r.dUdt), std::abs(rest), 1e-300});
    r.terminal_gap = master_terminal_gap(spec, x, m);

    if (!st.fd_checks) return r;
    Flow mfc = measure_flow(spec, base, probes, true, opt);
    auto msfc = measure_spatial_flow(spec, base, spatial, mfc, opt);
    Vec flow_p = mfc.sol.DP[0].row(N).transpose();
    Mat flow_j = spatial_costate_jacobian(msfc, 0, N, n);
    double V0 = evaluate_value(spec, base), Uavg = 0.0;
    for (int i = 0; i < N; ++i) Uavg += w(i) * phi[i];
    for (double e : st.eps) {
        ParticleEnsemble pert = ens;
        pert.weights.head(N) *= (1.0 - e);
        pert.weights.tail(M).setConstant(e / M);
        SolverOptions o = opt;
        o.fit_weights = base.fit_weights;
        FbsdeSolution ps = solve(spec, pert, base.grid, base.noise, o);
        Vec fd_p = (ps.P[0].row(N) - base.P[0].row(N)).transpose() / e;
        auto psp = spatial_jacobian(spec, ps, o);
        Mat fd_j = (spatial_costate_jacobian(psp, 0, N, n) - r.D_xxU) / e;
        r.eps.push_back(e);
        // Relative to the larger of the flow and the differentiated field: the
        // flow vanishes when the field does not depend on the measure.
        r.fd_error_p.push_back((fd_p - flow_p).norm() / std::max({flow_p.norm(), r.D_xU.norm(), 1e-12}));
        r.fd_error_jac.push_back((fd_j - flow_j).norm() / std::max({flow_j.norm(), r.D_xxU.norm(), 1e-12}));
        double fd_v = (evaluate_value(spec, ps) - V0) / e;
        r.fd_value_gap = std::abs(fd_v - (r.U - Uavg)) / std::max(std::abs(r.U - Uavg), 1e-12);
    }
    return r;
}

}  // namespace mfc

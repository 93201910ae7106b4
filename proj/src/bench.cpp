#include "mfc/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "mfc/io.hpp"

namespace mfc {

namespace {

const QuadraticCost* pure_quadratic(const ProblemSpec& spec) {
    auto* q = dynamic_cast<const QuadraticCost*>(spec.cost.get());
    return q && q->kappa() == 0.0 && q->kappa_x() == 0.0 ? q : nullptr;
}

Mat sym(const Mat& A) { return 0.5 * (A + A.transpose()); }

struct RiccatiState {
    Mat Pi, Gamma;
    double chi = 0.0;
};

// Backward-time derivatives (d/dt) of the three pieces.
RiccatiState riccati_rhs(const ProblemSpec& spec, const LqWeights& w, double s, const RiccatiState& x) {
    Coefficients c = spec.dynamics.at(s);
    const Mat& a = c.f1;
    Mat A = c.f1 + c.f2;
    Mat brb = c.f3 * w.r.llt().solve(c.f3.transpose());
    Mat Q = sym(w.q + w.s + w.s.transpose() + w.qbar);
    RiccatiState d;
    d.Pi = -(a.transpose() * x.Pi + x.Pi * a - x.Pi * brb * x.Pi + sym(w.q));
    d.Gamma = -(A.transpose() * x.Gamma + x.Gamma * A - x.Gamma * brb * x.Gamma + Q);
    double tr = 0.0;
    for (int j = 0; j < spec.n; ++j) tr += c.s0[j].dot(x.Pi * c.s0[j]);
    d.chi = -0.5 * tr;
    return d;
}

RiccatiState axpy(const RiccatiState& x, double h, const RiccatiState& d) {
    return {x.Pi + h * d.Pi, x.Gamma + h * d.Gamma, x.chi + h * d.chi};
}

// Integrates from T down to t0 with `steps` RK4 steps; returns knots in
// increasing time.
std::vector<RiccatiState> integrate_riccati(const ProblemSpec& spec, const LqWeights& w, double t0, int steps) {
    std::vector<RiccatiState> out(steps + 1);
    double h = (spec.T - t0) / steps;
    RiccatiState x{sym(w.qT), sym(w.qT + w.sT + w.sT.transpose() + w.qbarT), 0.0};
    out[steps] = x;
    for (int k = steps; k > 0; --k) {
        double s = t0 + k * h;
        RiccatiState k1 = riccati_rhs(spec, w, s, x);
        RiccatiState k2 = riccati_rhs(spec, w, s - 0.5 * h, axpy(x, -0.5 * h, k1));
        RiccatiState k3 = riccati_rhs(spec, w, s - 0.5 * h, axpy(x, -0.5 * h, k2));
        RiccatiState k4 = riccati_rhs(spec, w, s - h, axpy(x, -h, k3));
        x.Pi -= h / 6.0 * (k1.Pi + 2.0 * k2.Pi + 2.0 * k3.Pi + k4.Pi);
        x.Gamma -= h / 6.0 * (k1.Gamma + 2.0 * k2.Gamma + 2.0 * k3.Gamma + k4.Gamma);
        x.chi -= h / 6.0 * (k1.chi + 2.0 * k2.chi + 2.0 * k3.chi + k4.chi);
        out[k - 1] = x;
    }
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

double weighted_rms(const Eigen::MatrixXd& A, const Eigen::VectorXd& w) {
    return std::sqrt(w.dot(A.rowwise().squaredNorm()) / w.sum());
}

}  // namespace

bool riccati_applicable(const ProblemSpec& spec, std::string* why) {
    auto fail = [&](const char* m) {
        if (why) *why = m;
        return false;
    };
    if (!pure_quadratic(spec)) return fail("cost is not the pure quadratic mean-field cost");
    const LinearDynamics& d = spec.dynamics;
    if (!d.f0.isZero(0)) return fail("drift has a constant term");
    for (int j = 0; j < spec.n; ++j)
        if (!d.s1[j].isZero(0) || !d.s2[j].isZero(0) || !d.s3[j].isZero(0))
            return fail("diffusion is not additive");
    return true;
}

RiccatiSolution solve_riccati(const ProblemSpec& spec, double t0, int K, int refine) {
    std::string why;
    if (!riccati_applicable(spec, &why)) throw Error("bench", "specification", "Riccati oracle: " + why);
    const LqWeights& w = pure_quadratic(spec)->weights();
    RiccatiSolution R;
    R.t0 = t0;
    R.T = spec.T;
    R.refine = refine;
    int steps = K * refine;
    auto fine = integrate_riccati(spec, w, t0, steps);
    auto half = integrate_riccati(spec, w, t0, 2 * steps);
    for (int k = 0; k <= steps; ++k) {
        R.t.push_back(t0 + (spec.T - t0) * k / steps);
        R.Pi.push_back(fine[k].Pi);
        R.Gamma.push_back(fine[k].Gamma);
        R.chi.push_back(fine[k].chi);
        const RiccatiState& h = half[2 * k];
        R.self_check = std::max({R.self_check, (h.Pi - fine[k].Pi).cwiseAbs().maxCoeff(),
                                 (h.Gamma - fine[k].Gamma).cwiseAbs().maxCoeff(), std::abs(h.chi - fine[k].chi)});
    }
    return R;
}

double RiccatiSolution::value(int fine, const ParticleEnsemble& m) const {
    Vec mbar = ensemble_mean(m);
    double v = 0.5 * mbar.dot(Gamma[fine] * mbar) + chi[fine];
    for (int i = 0; i < m.size(); ++i) {
        Vec e = m.atom(i) - mbar;
        v += 0.5 * m.weights(i) * e.dot(Pi[fine] * e);
    }
    return v;
}

Eigen::MatrixXd RiccatiSolution::costate(int fine, const Eigen::MatrixXd& X, const Vec& mbar) const {
    Eigen::MatrixXd P = (X.rowwise() - mbar.transpose()) * Pi[fine].transpose();
    P.rowwise() += (Gamma[fine] * mbar).transpose();
    return P;
}

Eigen::MatrixXd RiccatiSolution::control(const ProblemSpec& spec, int fine, const Eigen::MatrixXd& X,
                                         const Vec& mbar) const {
    const LqWeights& w = pure_quadratic(spec)->weights();
    Coefficients c = spec.dynamics.at(t[fine]);
    Mat gain = -w.r.llt().solve(c.f3.transpose());
    return costate(fine, X, mbar) * gain.transpose();
}

double RiccatiSolution::value_time_derivative(const ProblemSpec& spec, int fine, const ParticleEnsemble& m) const {
    const LqWeights& w = pure_quadratic(spec)->weights();
    RiccatiState d = riccati_rhs(spec, w, t[fine], {Pi[fine], Gamma[fine], chi[fine]});
    Vec mbar = ensemble_mean(m);
    double v = 0.5 * mbar.dot(d.Gamma * mbar) + d.chi;
    for (int i = 0; i < m.size(); ++i) {
        Vec e = m.atom(i) - mbar;
        v += 0.5 * m.weights(i) * e.dot(d.Pi * e);
    }
    return v;
}

namespace {

// State-costate ODE of the deterministic particle system.
struct ShootingSystem {
    const ProblemSpec& spec;
    const Eigen::VectorXd& w;

    void rhs(double s, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& P, Eigen::MatrixXd& dY, Eigen::MatrixXd& dP,
             Eigen::MatrixXd* V) const {
        const int N = Y.rows(), n = spec.n;
        Coefficients c = spec.dynamics.at(s);
        Vec mbar = Y.transpose() * w;
        Mat q = Mat::Zero(n, n);
        dY.resize(N, n);
        dP.resize(N, n);
        if (V) V->resize(N, spec.d);
        Vec meas = Vec::Zero(n);
        for (int i = 0; i < N; ++i) {
            Vec x = Y.row(i).transpose(), p = P.row(i).transpose();
            HamiltonianValue h = hamiltonian(spec, c, x, mbar, s, p, q);
            dY.row(i) = drift(c, x, mbar, h.v_hat).transpose();
            dP.row(i) = -h.D_xH.transpose();
            meas += w(i) * hamiltonian_measure_term(spec, c, x, mbar, h.v_hat, s, p, q);
            if (V) V->row(i) = h.v_hat.transpose();
        }
        dP.rowwise() -= meas.transpose();
    }

    Eigen::MatrixXd terminal(const Eigen::MatrixXd& Y) const {
        const int N = Y.rows(), n = spec.n;
        Vec mbar = Y.transpose() * w;
        Eigen::MatrixXd P(N, n);
        Vec meas = Vec::Zero(n);
        for (int i = 0; i < N; ++i) {
            Jet j = spec.cost->terminal(Y.row(i).transpose(), mbar, 1);
            P.row(i) = j.gx().transpose();
            meas += w(i) * j.gm();
        }
        P.rowwise() += meas.transpose();
        return P;
    }

    // RK4 from t0 to T; returns the boundary mismatch P(T) - terminal(Y(T)).
    Eigen::MatrixXd shoot(const Eigen::MatrixXd& Y0, const Eigen::MatrixXd& P0, double t0, int steps,
                          ShootingSolution* keep) const {
        double h = (spec.T - t0) / steps;
        Eigen::MatrixXd Y = Y0, P = P0, a1, b1, a2, b2, a3, b3, a4, b4;
        for (int k = 0; k < steps; ++k) {
            double s = t0 + k * h;
            Eigen::MatrixXd V;
            rhs(s, Y, P, a1, b1, keep ? &V : nullptr);
            if (keep) {
                keep->t.push_back(s);
                keep->Y.push_back(Y);
                keep->P.push_back(P);
                keep->v.push_back(V);
            }
            rhs(s + 0.5 * h, Y + 0.5 * h * a1, P + 0.5 * h * b1, a2, b2, nullptr);
            rhs(s + 0.5 * h, Y + 0.5 * h * a2, P + 0.5 * h * b2, a3, b3, nullptr);
            rhs(s + h, Y + h * a3, P + h * b3, a4, b4, nullptr);
            Y += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            P += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        if (keep) {
            keep->t.push_back(spec.T);
            keep->Y.push_back(Y);
            keep->P.push_back(P);
        }
        return P - terminal(Y);
    }
};

Eigen::VectorXd flat(const Eigen::MatrixXd& A) { return Eigen::Map<const Eigen::VectorXd>(A.data(), A.size()); }

}  // namespace

ShootingSolution solve_shooting(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K, int refine,
                                double tol) {
    if (!spec.dynamics.diffusion_is_zero())
        throw Error("bench", "specification", "shooting oracle needs a vanishing diffusion");
    ShootingSystem sys{spec, m.weights};
    const int steps = K * refine, N = m.size(), n = spec.n, dim = N * n;
    Eigen::MatrixXd P0 = sys.terminal(m.states);
    Eigen::MatrixXd R = sys.shoot(m.states, P0, t0, steps, nullptr);
    double res = R.cwiseAbs().maxCoeff();
    // Newton with a frozen Jacobian while it keeps contracting well.
    int it = 0;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    bool fresh = false;
    for (; it < 50 && res > tol; ++it) {
        bool built = !fresh;
        if (built) {
            Eigen::MatrixXd J(dim, dim);
            for (int c = 0; c < dim; ++c) {
                Eigen::MatrixXd Pc = P0;
                double h = 1e-6 * (1.0 + std::abs(Pc.data()[c]));
                Pc.data()[c] += h;
                J.col(c) = flat(sys.shoot(m.states, Pc, t0, steps, nullptr) - R) / h;
            }
            lu.compute(J);
            fresh = true;
        }
        Eigen::VectorXd step = lu.solve(-flat(R));
        double a = 1.0, before = res;
        bool moved = false;
        for (int ls = 0; ls < 30; ++ls, a *= 0.5) {
            Eigen::MatrixXd Pt = P0 + a * Eigen::Map<const Eigen::MatrixXd>(step.data(), N, n);
            Eigen::MatrixXd Rt = sys.shoot(m.states, Pt, t0, steps, nullptr);
            double rt = Rt.cwiseAbs().maxCoeff();
            if (std::isfinite(rt) && rt < res) {
                P0 = Pt;
                R = Rt;
                res = rt;
                moved = true;
                break;
            }
        }
        if (!moved && built) break;
        if (!moved || res > 0.25 * before) fresh = false;
    }
    if (!(res <= tol))
        throw Error("bench", "solver", "shooting did not converge (boundary residual " + format_double(res) + ")");
    ShootingSolution out;
    out.refine = refine;
    out.newton_iterations = it;
    out.boundary_residual = sys.shoot(m.states, P0, t0, steps, &out).cwiseAbs().maxCoeff();
    return out;
}

LqBenchmarkRow run_lq_benchmark(const ProblemSpec& spec, const ParticleEnsemble& m, double t0, int K,
                                std::uint64_t seed, const SolverOptions& opt) {
    auto start = std::chrono::steady_clock::now();
    TimeGrid grid = make_grid(t0, spec.T, K);
    FbsdeSolution sol = solve(spec, m, grid, make_noise(m, grid, spec.n, seed, 0, opt.jobs), opt);
    LqBenchmarkRow row;
    row.runtime_s = seconds_since(start);
    row.seed = seed;
    row.N = m.size();
    row.K = K;
    row.iterations = sol.diag.iterations;
    row.residuals = residuals(spec, sol);
    RiccatiSolution R = solve_riccati(spec, t0, K);
    row.value = evaluate_value(spec, sol);
    row.value_exact = R.value(0, m);
    row.value_rel_error = std::abs(row.value - row.value_exact) / std::abs(row.value_exact);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd v = R.control(spec, R.fine_index(k), sol.Y[k], sol.mean[k]);
        num += m.weights.dot((sol.v[k] - v).rowwise().squaredNorm());
        den += m.weights.dot(v.rowwise().squaredNorm());
    }
    row.feedback_rel_error = std::sqrt(num / den);
    Eigen::MatrixXd P = R.costate(0, sol.Y[0], sol.mean[0]);
    row.gradient_rel_error = weighted_rms(sol.P[0] - P, m.weights) / weighted_rms(P, m.weights);
    return row;
}

DeterministicBenchmarkRow run_deterministic_benchmark(const ProblemSpec& spec, const ParticleEnsemble& m, double t0,
                                                      int K, const SolverOptions& opt) {
    auto start = std::chrono::steady_clock::now();
    TimeGrid grid = make_grid(t0, spec.T, K);
    FbsdeSolution sol = solve(spec, m, grid, make_noise(m, grid, spec.n, 0, 0, opt.jobs), opt);
    DeterministicBenchmarkRow row;
    row.runtime_s = seconds_since(start);
    row.N = m.size();
    row.K = K;
    ShootingSolution shot = solve_shooting(spec, m, t0, K);
    row.oracle_residual = shot.boundary_residual;
    double ev = 0.0, nv = 0.0, ep = 0.0, np = 0.0;
    for (int k = 0; k <= K; ++k) {
        int f = k * shot.refine;
        ep += m.weights.dot((sol.P[k] - shot.P[f]).rowwise().squaredNorm());
        np += m.weights.dot(shot.P[f].rowwise().squaredNorm());
        if (k == K) break;
        ev += m.weights.dot((sol.v[k] - shot.v[f]).rowwise().squaredNorm());
        nv += m.weights.dot(shot.v[f].rowwise().squaredNorm());
    }
    row.control_rms_error = std::sqrt(ev / K);
    row.control_rel_error = std::sqrt(ev / std::max(nv, 1e-300));
    row.costate_rel_error = std::sqrt(ep / std::max(np, 1e-300));
    row.value = evaluate_value(spec, sol);
    // Oracle value by the trapezoid rule on the fine grid.
    const int F = static_cast<int>(shot.t.size()) - 1;
    double h = (spec.T - t0) / F;
    auto running = [&](int f) {
        Vec mbar = shot.Y[f].transpose() * m.weights;
        double s = 0.0;
        for (int i = 0; i < m.size(); ++i)
            s += m.weights(i) *
                 spec.cost->running(shot.Y[f].row(i).transpose(), mbar, shot.v[f].row(i).transpose(), shot.t[f], 0)
                     .value;
        return s;
    };
    // Control at T is not stored; extrapolate the running cost linearly.
    std::vector<double> g(F);
    for (int f = 0; f < F; ++f) g[f] = running(f);
    for (int f = 0; f + 1 < F; ++f) row.value_oracle += 0.5 * h * (g[f] + g[f + 1]);
    row.value_oracle += 0.5 * h * (g[F - 1] + (2.0 * g[F - 1] - g[F - 2]));
    Vec mT = shot.Y[F].transpose() * m.weights;
    for (int i = 0; i < m.size(); ++i)
        row.value_oracle += m.weights(i) * spec.cost->terminal(shot.Y[F].row(i).transpose(), mT, 0).value;
    return row;
}

double fit_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw Error("bench", "range", "slope fit needs two or more points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(x[i]) / n;
        my += std::log(std::max(y[i], 1e-300)) / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(std::max(y[i], 1e-300)) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

ConvergenceStudy convergence_study(const ProblemSpec& spec, const std::function<ParticleEnsemble(int N)>& initial,
                                   double t0, const std::vector<int>& Ns, const std::vector<int>& Ks,
                                   const std::vector<std::uint64_t>& seeds, const SolverOptions& opt) {
    ConvergenceStudy st;
    for (int N : Ns) {
        ParticleEnsemble m = initial(N);
        for (int K : Ks) {
            ConvergenceRow row;
            row.N = N;
            row.K = K;
            row.seeds = static_cast<int>(seeds.size());
            std::vector<double> errs;
            for (auto seed : seeds) {
                LqBenchmarkRow r = run_lq_benchmark(spec, m, t0, K, seed, opt);
                errs.push_back(r.value_rel_error);
                row.feedback_error += r.feedback_rel_error / seeds.size();
            }
            for (double e : errs) row.value_error += e / errs.size();
            for (double e : errs) row.value_error_sd += (e - row.value_error) * (e - row.value_error);
            row.value_error_sd = errs.size() > 1 ? std::sqrt(row.value_error_sd / (errs.size() - 1)) : 0.0;
            st.rows.push_back(row);
        }
    }
    std::vector<double> dts, edt, ns, en;
    for (const auto& r : st.rows) {
        if (r.N == Ns.back()) {
            dts.push_back((spec.T - t0) / r.K);
            edt.push_back(r.feedback_error);
        }
        if (r.K == Ks.back()) {
            ns.push_back(r.N);
            en.push_back(r.feedback_error);
        }
    }
    if (dts.size() >= 2) st.rate_dt = fit_log_slope(dts, edt);
    if (ns.size() >= 2) st.rate_N = fit_log_slope(ns, en);
    return st;
}

std::string bench_csv(const std::vector<LqBenchmarkRow>& rows) {
    std::ostringstream os;
    os << "seed,N,K,value,value_exact,value_rel_error,feedback_rel_error,gradient_rel_error,"
          "forward_residual,backward_residual,martingale_residual,foc_max,iterations,runtime_s\n";
    for (const auto& r : rows) {
        os << r.seed << ',' << r.N << ',' << r.K << ',' << format_double(r.value) << ','
           << format_double(r.value_exact) << ',' << format_double(r.value_rel_error) << ','
           << format_double(r.feedback_rel_error) << ',' << format_double(r.gradient_rel_error) << ','
           << format_double(r.residuals.forward_reconstruction) << ','
           << format_double(r.residuals.backward_one_step) << ',' << format_double(r.residuals.martingale) << ','
           << format_double(r.residuals.foc_max) << ',' << r.iterations << ',' << format_double(r.runtime_s)
           << '\n';
    }
    return os.str();
}

}  // namespace mfc

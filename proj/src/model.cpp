#include "mfc/model.hpp"

#include <cmath>
#include <mutex>
#include <numbers>

#include "mfc/paths.hpp"

namespace mfc {

double TimeProfile::operator()(double s) const {
    switch (kind) {
        case Kind::Constant: return 1.0;
        case Kind::Linear: return 1.0 + slope * s;
        case Kind::Sine: return 1.0 + amplitude * std::sin(2.0 * std::numbers::pi * frequency * s);
    }
    return 1.0;
}

LinearDynamics LinearDynamics::zeros(int n, int d) {
    LinearDynamics dyn;
    dyn.n = n;
    dyn.d = d;
    dyn.f0 = Vec::Zero(n);
    dyn.f1 = Mat::Zero(n, n);
    dyn.f2 = Mat::Zero(n, n);
    dyn.f3 = Mat::Zero(n, d);
    dyn.s0.assign(n, Vec::Zero(n));
    dyn.s1.assign(n, Mat::Zero(n, n));
    dyn.s2.assign(n, Mat::Zero(n, n));
    dyn.s3.assign(n, Mat::Zero(n, d));
    return dyn;
}

Coefficients LinearDynamics::at(double s) const {
    double a = drift_profile(s), b = diffusion_profile(s);
    Coefficients c{a * f0, a * f1, a * f2, a * f3, {}, {}, {}, {}};
    for (int j = 0; j < n; ++j) {
        c.s0.push_back(b * s0[j]);
        c.s1.push_back(b * s1[j]);
        c.s2.push_back(b * s2[j]);
        c.s3.push_back(b * s3[j]);
    }
    return c;
}

bool LinearDynamics::diffusion_is_zero() const {
    for (int j = 0; j < n; ++j)
        if (!s0[j].isZero(0) || !s1[j].isZero(0) || !s2[j].isZero(0) || !s3[j].isZero(0)) return false;
    return true;
}

bool LinearDynamics::control_free_diffusion() const {
    for (int j = 0; j < n; ++j)
        if (!s3[j].isZero(0)) return false;
    return true;
}

Vec drift(const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v) {
    return c.f0 + c.f1 * x + c.f2 * mbar + c.f3 * v;
}

Vec diffusion_column(const Coefficients& c, int j, const Vec& x, const Vec& mbar, const Vec& v) {
    return c.s0[j] + c.s1[j] * x + c.s2[j] * mbar + c.s3[j] * v;
}

JetMat CostModel::running_hessian_dir(const Vec&, const Vec&, const Vec&, double, const JetVec&) const {
    throw Error("model", "capability", "cost '" + id() + "' has no third derivatives");
}

JetMat CostModel::terminal_hessian_dir(const Vec&, const Vec&, const JetVec&) const {
    throw Error("model", "capability", "cost '" + id() + "' has no third derivatives");
}

namespace {

Mat sym(const Mat& a) { return 0.5 * (a + a.transpose()); }

}  // namespace

QuadraticCost::QuadraticCost(LqWeights w, double kappa, double kappa_x) : w_(std::move(w)), kappa_(kappa), kappa_x_(kappa_x) {
    n = int(w_.q.rows());
    d = int(w_.r.rows());
    w_.q = sym(w_.q);
    w_.qbar = sym(w_.qbar);
    w_.r = sym(w_.r);
    w_.qT = sym(w_.qT);
    w_.qbarT = sym(w_.qbarT);
    if (w_.s.size() == 0) w_.s = Mat::Zero(n, n);
    if (w_.sT.size() == 0) w_.sT = Mat::Zero(n, n);
}

std::string QuadraticCost::id() const {
    return kappa_ == 0.0 && kappa_x_ == 0.0 ? "lq_meanfield" : "quadratic_plus_quartic";
}

Jet QuadraticCost::running(const Vec& x, const Vec& mbar, const Vec& v, double, int order) const {
    Jet j;
    j.n = n;
    j.d = d;
    j.value = 0.5 * x.dot(w_.q * x) + x.dot(w_.s * mbar) + 0.5 * mbar.dot(w_.qbar * mbar) + 0.5 * v.dot(w_.r * v);
    if (kappa_ != 0.0) j.value += 0.25 * kappa_ * v.array().square().square().sum();
    if (kappa_x_ != 0.0) j.value += 0.25 * kappa_x_ * x.array().square().square().sum();
    if (order >= 1) {
        j.grad.resize(2 * n + d);
        j.grad.segment(0, n) = w_.q * x + w_.s * mbar;
        j.grad.segment(n, n) = w_.s.transpose() * x + w_.qbar * mbar;
        j.grad.segment(2 * n, d) = w_.r * v;
        if (kappa_x_ != 0.0) j.grad.segment(0, n) += kappa_x_ * x.array().cube().matrix();
        if (kappa_ != 0.0) j.grad.segment(2 * n, d) += kappa_ * v.array().cube().matrix();
    }
    if (order >= 2) {
        j.hess = JetMat::Zero(2 * n + d, 2 * n + d);
        j.hess.block(0, 0, n, n) = w_.q;
        if (kappa_x_ != 0.0) j.hess.block(0, 0, n, n).diagonal() += 3.0 * kappa_x_ * x.array().square().matrix();
        j.hess.block(0, n, n, n) = w_.s;
        j.hess.block(n, 0, n, n) = w_.s.transpose();
        j.hess.block(n, n, n, n) = w_.qbar;
        j.hess.block(2 * n, 2 * n, d, d) = w_.r;
        if (kappa_ != 0.0) j.hess.block(2 * n, 2 * n, d, d).diagonal() += 3.0 * kappa_ * v.array().square().matrix();
    }
    return j;
}

Jet QuadraticCost::terminal(const Vec& x, const Vec& mbar, int order) const {
    Jet j;
    j.n = n;
    j.d = 0;
    j.value = 0.5 * x.dot(w_.qT * x) + x.dot(w_.sT * mbar) + 0.5 * mbar.dot(w_.qbarT * mbar);
    if (order >= 1) {
        j.grad.resize(2 * n);
        j.grad.segment(0, n) = w_.qT * x + w_.sT * mbar;
        j.grad.segment(n, n) = w_.sT.transpose() * x + w_.qbarT * mbar;
    }
    if (order >= 2) {
        j.hess.resize(2 * n, 2 * n);
        j.hess << w_.qT, w_.sT, w_.sT.transpose(), w_.qbarT;
    }
    return j;
}

JetMat QuadraticCost::running_hessian_dir(const Vec& x, const Vec&, const Vec& v, double, const JetVec& dz) const {
    JetMat h = JetMat::Zero(2 * n + d, 2 * n + d);
    for (int i = 0; i < n; ++i) h(i, i) = 6.0 * kappa_x_ * x(i) * dz(i);
    for (int i = 0; i < d; ++i) h(2 * n + i, 2 * n + i) = 6.0 * kappa_ * v(i) * dz(2 * n + i);
    return h;
}

JetMat QuadraticCost::terminal_hessian_dir(const Vec&, const Vec&, const JetVec&) const {
    return JetMat::Zero(2 * n, 2 * n);
}

double QuadraticCost::declared_convexity() const {
    Eigen::SelfAdjointEigenSolver<Mat> es(w_.r);
    return 0.5 * es.eigenvalues().minCoeff();
}

double QuadraticCost::declared_bound() const {
    double l = 0.0;
    for (const Mat* m : {&w_.q, &w_.qbar, &w_.s, &w_.r, &w_.qT, &w_.qbarT, &w_.sT}) l = std::max(l, m->norm());
    return l;
}

FiniteDifferenceCost::FiniteDifferenceCost(std::string id, int n_, int d_, Running g, Terminal gT, double lambda,
                                           double bound)
    : id_(std::move(id)), g_(std::move(g)), gT_(std::move(gT)), lambda_(lambda), bound_(bound) {
    n = n_;
    d = d_;
}

namespace {

// Central differences of a value function of the stacked variable z.
Jet fd_jet(const std::function<double(const JetVec&)>& f, const JetVec& z, int n, int d, int order) {
    Jet j;
    j.n = n;
    j.d = d;
    j.value = f(z);
    int m = int(z.size());
    if (order >= 1) {
        j.grad.resize(m);
        for (int a = 0; a < m; ++a) {
            double h = 1e-5 * (1.0 + std::abs(z(a)));
            JetVec zp = z, zm = z;
            zp(a) += h;
            zm(a) -= h;
            j.grad(a) = (f(zp) - f(zm)) / (2.0 * h);
        }
    }
    if (order >= 2) {
        // Second differences need a wider step to keep rounding below 1e-8.
        j.hess.resize(m, m);
        for (int a = 0; a < m; ++a) {
            double ha = 1e-4 * (1.0 + std::abs(z(a)));
            for (int b = a; b < m; ++b) {
                double hb = 1e-4 * (1.0 + std::abs(z(b)));
                auto at = [&](double sa, double sb) {
                    JetVec y = z;
                    y(a) += sa * ha;
                    y(b) += sb * hb;
                    return f(y);
                };
                double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * ha * hb);
                j.hess(a, b) = j.hess(b, a) = v;
            }
        }
    }
    return j;
}

}  // namespace

Jet FiniteDifferenceCost::running(const Vec& x, const Vec& mbar, const Vec& v, double s, int order) const {
    JetVec z(2 * n + d);
    z << x, mbar, v;
    auto f = [&](const JetVec& y) {
        return g_(y.segment(0, n), y.segment(n, n), y.segment(2 * n, d), s);
    };
    return fd_jet(f, z, n, d, order);
}

Jet FiniteDifferenceCost::terminal(const Vec& x, const Vec& mbar, int order) const {
    JetVec z(2 * n);
    z << x, mbar;
    auto f = [&](const JetVec& y) { return gT_(y.segment(0, n), y.segment(n, n)); };
    Jet j = fd_jet(f, z, n, 0, order);
    j.d = 0;
    return j;
}

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, CostFactory>& registry() {
    static std::map<std::string, CostFactory> r;
    return r;
}

}  // namespace

void register_cost(const std::string& id, CostFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[id] = std::move(factory);
}

std::shared_ptr<CostModel> make_registered_cost(const std::string& id, int n, int d) {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(id);
    if (it == registry().end()) throw Error("model", "specification", "unknown cost id '" + id + "'");
    return it->second(n, d);
}

bool ValidationReport::ok() const { return failed() == nullptr; }

const Check* ValidationReport::failed() const {
    for (const auto& c : checks)
        if (!c.passed) return &c;
    return nullptr;
}

namespace {

struct Sampler {
    std::uint64_t seed;
    std::uint64_t draw = 0;
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(seed, 0xC0FFEE, draw++, 0); }
    Vec box(int k, double r) {
        Vec v(k);
        for (int i = 0; i < k; ++i) v(i) = uniform(-r, r);
        return v;
    }
};

}  // namespace

ConvexityEstimate estimate_convexity(const ProblemSpec& spec, int samples, std::uint64_t seed, double radius) {
    const CostModel& g = *spec.cost;
    Sampler rng{seed};
    ConvexityEstimate best;
    best.lambda_hat = std::numeric_limits<double>::infinity();
    for (int it = 0; it < samples; ++it) {
        Vec x = rng.box(spec.n, radius), m = rng.box(spec.n, radius);
        Vec v = rng.box(spec.d, radius), w = rng.box(spec.d, radius);
        double s = rng.uniform(0.0, spec.T);
        double dist = (v - w).squaredNorm();
        if (dist < 1e-8) continue;
        Jet jw = g.running(x, m, w, s, 1);
        double gap = g.running(x, m, v, s, 0).value - jw.value - jw.gv().dot(v - w);
        double ratio = gap / dist;
        if (ratio < best.lambda_hat) best = {ratio, x, m, v, w, s};
    }
    return best;
}

double cost_derivative_mismatch(const CostModel& cost, int samples, std::uint64_t seed) {
    int n = cost.n, d = cost.d;
    auto run = [&](const JetVec& z) {
        return cost.running(z.segment(0, n), z.segment(n, n), z.segment(2 * n, d), 0.3, 0).value;
    };
    auto term = [&](const JetVec& z) { return cost.terminal(z.segment(0, n), z.segment(n, n), 0).value; };
    Sampler rng{seed};
    double worst = 0.0;
    for (int it = 0; it < samples; ++it) {
        Vec x = rng.box(n, 1.5), m = rng.box(n, 1.5), v = rng.box(d, 1.5);
        JetVec z(2 * n + d), zt(2 * n);
        z << x, m, v;
        zt << x, m;
        Jet a = cost.running(x, m, v, 0.3, 2), b = fd_jet(run, z, n, d, 2);
        Jet at = cost.terminal(x, m, 2), bt = fd_jet(term, zt, n, 0, 2);
        worst = std::max({worst, (a.grad - b.grad).cwiseAbs().maxCoeff(), (a.hess - b.hess).cwiseAbs().maxCoeff(),
                          (at.grad - bt.grad).cwiseAbs().maxCoeff(), (at.hess - bt.hess).cwiseAbs().maxCoeff()});
    }
    return worst;
}

ValidationReport validate_spec(const ProblemSpec& spec, ValidationLayers layers) {
    ValidationReport rep;
    const auto& dyn = spec.dynamics;
    auto fail = [](const std::string& what) { throw Error("model", "specification", what); };
    if (spec.n < 1 || spec.n > kMaxDim || spec.d < 1 || spec.d > kMaxDim) fail("dimensions must lie in 1..4");
    if (!(spec.T > 0.0)) fail("horizon must be positive");
    if (!spec.cost) fail("no cost model");
    if (spec.cost->n != spec.n || spec.cost->d != spec.d) fail("cost dimensions do not match the state/control");
    if (dyn.n != spec.n || dyn.d != spec.d || dyn.f0.size() != spec.n || dyn.f1.rows() != spec.n ||
        dyn.f1.cols() != spec.n || dyn.f2.rows() != spec.n || dyn.f2.cols() != spec.n || dyn.f3.rows() != spec.n ||
        dyn.f3.cols() != spec.d)
        fail("drift coefficient shapes do not match (n, d)");
    if (int(dyn.s0.size()) != spec.n || int(dyn.s1.size()) != spec.n || int(dyn.s2.size()) != spec.n ||
        int(dyn.s3.size()) != spec.n)
        fail("diffusion needs one column per state component");
    for (int j = 0; j < spec.n; ++j)
        if (dyn.s0[j].size() != spec.n || dyn.s1[j].rows() != spec.n || dyn.s1[j].cols() != spec.n ||
            dyn.s2[j].rows() != spec.n || dyn.s2[j].cols() != spec.n || dyn.s3[j].rows() != spec.n ||
            dyn.s3[j].cols() != spec.d)
            fail("diffusion coefficient shapes do not match (n, d)");

    double worst = 0.0;
    for (int k = 0; k <= 20; ++k) {
        Coefficients c = dyn.at(spec.T * k / 20.0);
        worst = std::max({worst, c.f0.norm(), c.f1.norm(), c.f2.norm(), c.f3.norm()});
        for (int j = 0; j < spec.n; ++j)
            worst = std::max({worst, c.s0[j].norm(), c.s1[j].norm(), c.s2[j].norm(), c.s3[j].norm()});
    }
    rep.checks.push_back({"dynamics_bound", worst <= dyn.bound, "max coefficient norm " + std::to_string(worst)});

    Sampler rng{11};
    double l = spec.cost->declared_bound(), ratio = 0.0;
    for (int it = 0; it < 500; ++it) {
        Vec x = rng.box(spec.n, 3.0), m = rng.box(spec.n, 3.0), v = rng.box(spec.d, 1.0);
        double g = spec.cost->running(x, m, v, rng.uniform(0, spec.T), 0).value;
        ratio = std::max(ratio, std::abs(g) / (1.0 + x.squaredNorm() + m.squaredNorm() + v.squaredNorm()));
    }
    rep.checks.push_back({"cost_growth", ratio <= l, "sampled growth ratio " + std::to_string(ratio)});

    ConvexityEstimate cv = estimate_convexity(spec);
    if (!(cv.lambda_hat > 0.0))
        throw Error("model", "convexity",
                    "running cost is not strictly convex in the control (sampled modulus " +
                        std::to_string(cv.lambda_hat) + ")");
    rep.checks.push_back({"control_convexity", true, "sampled modulus " + std::to_string(cv.lambda_hat)});

    if (layers.bellman && !dyn.control_free_diffusion())
        fail("the Bellman layer needs a diffusion that does not depend on the control");
    if (layers.master && !spec.cost->has_third_derivatives())
        throw Error("model", "capability", "the master layer needs third derivatives of the cost");
    return rep;
}

}  // namespace mfc

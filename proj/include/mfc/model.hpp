#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mfc/types.hpp"

namespace mfc {

// Scalar time profile multiplying a coefficient matrix.
struct TimeProfile {
    enum class Kind { Constant, Linear, Sine } kind = Kind::Constant;
    double slope = 0.0;
    double amplitude = 0.0;
    double frequency = 1.0;

    double operator()(double s) const;
};

struct Coefficients {
    Vec f0;
    Mat f1, f2, f3;
    std::vector<Vec> s0;  // column j of the diffusion, one per Brownian component
    std::vector<Mat> s1, s2, s3;
};

// Linear dynamics f = f0 + f1 x + f2 mbar + f3 v and
// sigma^j = s0^j + s1^j x + s2^j mbar + s3^j v.
struct LinearDynamics {
    int n = 1, d = 1;
    Vec f0;
    Mat f1, f2, f3;
    std::vector<Vec> s0;
    std::vector<Mat> s1, s2, s3;
    TimeProfile drift_profile, diffusion_profile;
    double bound = 10.0;  // declared growth constant

    static LinearDynamics zeros(int n, int d);
    Coefficients at(double s) const;
    bool diffusion_is_zero() const;
    bool control_free_diffusion() const;
};

Vec drift(const Coefficients& c, const Vec& x, const Vec& mbar, const Vec& v);
Vec diffusion_column(const Coefficients& c, int j, const Vec& x, const Vec& mbar, const Vec& v);

// Value, gradient and Hessian of a cost in the stacked variable
// z = (x, mbar, v); terminal costs use z = (x, mbar).
struct Jet {
    int n = 0, d = 0;
    double value = 0.0;
    JetVec grad;
    JetMat hess;

    auto gx() const { return grad.segment(0, n); }
    auto gm() const { return grad.segment(n, n); }
    auto gv() const { return grad.segment(2 * n, d); }
    auto hxx() const { return hess.block(0, 0, n, n); }
    auto hxm() const { return hess.block(0, n, n, n); }
    auto hxv() const { return hess.block(0, 2 * n, n, d); }
    auto hmm() const { return hess.block(n, n, n, n); }
    auto hmv() const { return hess.block(n, 2 * n, n, d); }
    auto hvv() const { return hess.block(2 * n, 2 * n, d, d); }
};

// Costs depend on the measure through its mean. order 0 fills the value,
// 1 the gradient, 2 the Hessian.
class CostModel {
public:
    virtual ~CostModel() = default;
    virtual std::string id() const = 0;
    virtual Jet running(const Vec& x, const Vec& mbar, const Vec& v, double s, int order) const = 0;
    virtual Jet terminal(const Vec& x, const Vec& mbar, int order) const = 0;

    // Derivative of the Hessian along dz. Needed only by the measure-spatial
    // flow; the default reports the capability as missing.
    virtual bool has_third_derivatives() const { return false; }
    virtual JetMat running_hessian_dir(const Vec& x, const Vec& mbar, const Vec& v, double s,
                                       const JetVec& dz) const;
    virtual JetMat terminal_hessian_dir(const Vec& x, const Vec& mbar, const JetVec& dz) const;

    virtual double declared_convexity() const = 0;  // lambda
    virtual double declared_bound() const = 0;      // l
    int n = 1, d = 1;
};

struct LqWeights {
    Mat q, qbar, s, r, qT, qbarT, sT;
};

// 1/2 x'qx + x's mbar + 1/2 mbar'qbar mbar + 1/2 v'rv (+ kappa/4 sum v_i^4
// + kappa_x/4 sum x_i^4).
class QuadraticCost : public CostModel {
public:
    QuadraticCost(LqWeights w, double kappa = 0.0, double kappa_x = 0.0);
    std::string id() const override;
    Jet running(const Vec& x, const Vec& mbar, const Vec& v, double s, int order) const override;
    Jet terminal(const Vec& x, const Vec& mbar, int order) const override;
    bool has_third_derivatives() const override { return true; }
    JetMat running_hessian_dir(const Vec& x, const Vec& mbar, const Vec& v, double s,
                               const JetVec& dz) const override;
    JetMat terminal_hessian_dir(const Vec& x, const Vec& mbar, const JetVec& dz) const override;
    double declared_convexity() const override;
    double declared_bound() const override;

    const LqWeights& weights() const { return w_; }
    double kappa() const { return kappa_; }
    double kappa_x() const { return kappa_x_; }

private:
    LqWeights w_;
    double kappa_, kappa_x_;
};

// Wraps value-only callbacks; derivatives by central differences with step
// 1e-5 * (1 + |arg|).
class FiniteDifferenceCost : public CostModel {
public:
    using Running = std::function<double(const Vec&, const Vec&, const Vec&, double)>;
    using Terminal = std::function<double(const Vec&, const Vec&)>;
    FiniteDifferenceCost(std::string id, int n, int d, Running g, Terminal gT, double lambda, double bound);
    std::string id() const override { return id_; }
    Jet running(const Vec& x, const Vec& mbar, const Vec& v, double s, int order) const override;
    Jet terminal(const Vec& x, const Vec& mbar, int order) const override;
    double declared_convexity() const override { return lambda_; }
    double declared_bound() const override { return bound_; }

private:
    std::string id_;
    Running g_;
    Terminal gT_;
    double lambda_, bound_;
};

using CostFactory = std::function<std::shared_ptr<CostModel>(int n, int d)>;
void register_cost(const std::string& id, CostFactory factory);
std::shared_ptr<CostModel> make_registered_cost(const std::string& id, int n, int d);

struct ProblemSpec {
    std::string name;
    int n = 1, d = 1;
    double T = 1.0;
    LinearDynamics dynamics;
    std::shared_ptr<const CostModel> cost;
};

struct Check {
    std::string name;
    bool passed = true;
    std::string detail;
};

struct ValidationReport {
    std::vector<Check> checks;
    bool ok() const;
    const Check* failed() const;
};

struct ConvexityEstimate {
    double lambda_hat = 0.0;
    Vec x, mbar, v, w;  // sample achieving the minimum
    double s = 0.0;
};

// Minimum over sampled (x, mbar, v, w, s) of
// [g(v) - g(w) - g_v(w)(v - w)] / |v - w|^2 on a fixed box.
ConvexityEstimate estimate_convexity(const ProblemSpec& spec, int samples = 2000, std::uint64_t seed = 7,
                                     double radius = 2.0);

struct ValidationLayers {
    bool bellman = false;  // control-free diffusion
    bool master = false;   // third derivatives available
};

// Throws Error("model", ...) on the first failing structural check; sampled
// checks are reported in the returned report.
ValidationReport validate_spec(const ProblemSpec& spec, ValidationLayers layers = {});

// Max abs difference between the cost's gradient/Hessian and central
// differences of its value, over sampled points.
double cost_derivative_mismatch(const CostModel& cost, int samples, std::uint64_t seed);

}  // namespace mfc

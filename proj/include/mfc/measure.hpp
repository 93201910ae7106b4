#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfc/types.hpp"

namespace mfc {

// Weighted empirical measure. Weights are non-negative and sum to one over
// the atoms that carry mass. Zero-weight atoms are allowed: they are carried
// along as probes and never enter means or regressions.
struct ParticleEnsemble {
    Eigen::MatrixXd states;  // N x n
    Eigen::VectorXd weights;
    std::vector<std::uint64_t> streams;  // Brownian stream id per atom
    std::uint64_t generation_seed = 0;

    int size() const { return static_cast<int>(states.rows()); }
    int dim() const { return static_cast<int>(states.cols()); }
    Vec atom(int i) const { return states.row(i).transpose(); }

    void validate() const;
    static ParticleEnsemble uniform(const Eigen::MatrixXd& states, std::uint64_t seed = 0);
};

ParticleEnsemble gaussian_ensemble(int N, const Vec& mean, const Vec& stddev, std::uint64_t seed);

// Each atom is paired with a copy at the same state driven by the mirrored
// Brownian stream; weights are halved.
ParticleEnsemble antithetic(const ParticleEnsemble& m);

Vec ensemble_mean(const ParticleEnsemble& m);
double second_moment(const ParticleEnsemble& m);

ParticleEnsemble pushforward(const ParticleEnsemble& m, const std::function<Vec(const Vec&)>& map);

// (1 - eps) m + eps * (1/copies) sum delta_xi. The new atoms are appended at
// the end with fresh stream ids starting at first_stream.
ParticleEnsemble perturb_dirac(const ParticleEnsemble& m, const Vec& xi, double eps, int copies,
                               std::uint64_t first_stream);

// Appends zero-weight probe atoms at xi.
ParticleEnsemble with_probes(const ParticleEnsemble& m, const Vec& xi, int copies, std::uint64_t first_stream);

// Bootstrap resample. Only for bias studies; solvers keep weights as given.
ParticleEnsemble resample_copy(const ParticleEnsemble& m, std::uint64_t seed);

struct W2Options {
    int exact_cap = 512;
    double entropic_scale = 0.01;  // regularisation relative to median squared distance
    int sinkhorn_iterations = 5000;
    double sinkhorn_tol = 1e-12;
};

struct W2Result {
    double value = 0.0;
    bool exact = true;
    double regularization = 0.0;
    std::string method;
};

// Exact for n = 1 (quantile coupling) and for equal-size uniform ensembles up
// to exact_cap atoms (assignment). Otherwise entropic, flagged as such.
W2Result wasserstein2(const ParticleEnsemble& a, const ParticleEnsemble& b, const W2Options& opt = {});

// Minimum-cost perfect matching on a square cost matrix; returns the column
// assigned to each row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

std::string ensemble_to_csv(const ParticleEnsemble& m);
ParticleEnsemble ensemble_from_csv(const std::string& text);

}  // namespace mfc

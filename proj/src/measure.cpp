#include "mfc/measure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mfc/format.hpp"
#include "mfc/paths.hpp"

namespace mfc {

void ParticleEnsemble::validate() const {
    if (states.rows() == 0) throw Error("measure", "range", "ensemble has no atoms");
    if (states.cols() < 1 || states.cols() > kMaxDim)
        throw Error("measure", "range", "state dimension must be between 1 and 4");
    if (weights.size() != states.rows()) throw Error("measure", "range", "weights and states differ in length");
    if (static_cast<Eigen::Index>(streams.size()) != states.rows())
        throw Error("measure", "range", "stream ids and states differ in length");
    if ((weights.array() < 0).any()) throw Error("measure", "range", "negative weight");
    if (std::abs(weights.sum() - 1.0) > 1e-12) throw Error("measure", "range", "weights do not sum to one");
    if (!states.allFinite()) throw Error("measure", "range", "non-finite atom");
}

ParticleEnsemble ParticleEnsemble::uniform(const Eigen::MatrixXd& states, std::uint64_t seed) {
    ParticleEnsemble m;
    m.states = states;
    m.weights = Eigen::VectorXd::Constant(states.rows(), 1.0 / states.rows());
    m.streams.resize(states.rows());
    std::iota(m.streams.begin(), m.streams.end(), 0);
    m.generation_seed = seed;
    return m;
}

ParticleEnsemble gaussian_ensemble(int N, const Vec& mean, const Vec& stddev, std::uint64_t seed) {
    Eigen::MatrixXd X(N, mean.size());
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < mean.size(); ++j)
            X(i, j) = mean(j) + stddev(j) * standard_normal(seed, std::uint64_t(i), 0xFFFFFFFFull, j);
    return ParticleEnsemble::uniform(X, seed);
}

ParticleEnsemble antithetic(const ParticleEnsemble& m) {
    for (auto s : m.streams)
        if (s & kMirrorStream) throw Error("measure", "range", "ensemble already contains mirrored streams");
    const int N = m.size();
    ParticleEnsemble out;
    out.generation_seed = m.generation_seed;
    out.states.resize(2 * N, m.dim());
    out.states << m.states, m.states;
    out.weights.resize(2 * N);
    out.weights << 0.5 * m.weights, 0.5 * m.weights;
    out.streams = m.streams;
    for (auto s : m.streams) out.streams.push_back(s | kMirrorStream);
    return out;
}

Vec ensemble_mean(const ParticleEnsemble& m) { return (m.states.transpose() * m.weights); }

double second_moment(const ParticleEnsemble& m) {
    return m.weights.dot(m.states.rowwise().squaredNorm());
}

ParticleEnsemble pushforward(const ParticleEnsemble& m, const std::function<Vec(const Vec&)>& map) {
    ParticleEnsemble out = m;
    for (int i = 0; i < m.size(); ++i) {
        Vec y = map(m.atom(i));
        if (y.size() != m.dim()) throw Error("measure", "range", "pushforward map changed the dimension");
        out.states.row(i) = y.transpose();
    }
    return out;
}

ParticleEnsemble perturb_dirac(const ParticleEnsemble& m, const Vec& xi, double eps, int copies,
                               std::uint64_t first_stream) {
    if (!(eps > 0.0 && eps < 1.0)) throw Error("measure", "range", "Dirac weight must lie in (0, 1)");
    if (xi.size() != m.dim()) throw Error("measure", "range", "Dirac atom has the wrong dimension");
    ParticleEnsemble out = with_probes(m, xi, copies, first_stream);
    int N = m.size();
    out.weights.head(N) *= (1.0 - eps);
    out.weights.tail(copies).setConstant(eps / copies);
    return out;
}

ParticleEnsemble with_probes(const ParticleEnsemble& m, const Vec& xi, int copies, std::uint64_t first_stream) {
    if (copies < 1) throw Error("measure", "range", "need at least one probe copy");
    int N = m.size();
    ParticleEnsemble out;
    out.generation_seed = m.generation_seed;
    out.states.resize(N + copies, m.dim());
    out.states.topRows(N) = m.states;
    for (int c = 0; c < copies; ++c) out.states.row(N + c) = xi.transpose();
    out.weights = Eigen::VectorXd::Zero(N + copies);
    out.weights.head(N) = m.weights;
    out.streams = m.streams;
    for (int c = 0; c < copies; ++c) out.streams.push_back(first_stream + c);
    return out;
}

ParticleEnsemble resample_copy(const ParticleEnsemble& m, std::uint64_t seed) {
    int N = m.size();
    std::vector<double> cdf(N);
    std::partial_sum(m.weights.data(), m.weights.data() + N, cdf.begin());
    ParticleEnsemble out = ParticleEnsemble::uniform(m.states, seed);
    for (int i = 0; i < N; ++i) {
        double u = uniform01(seed, std::uint64_t(i), 0xFFFFFFFEull, 0) * cdf.back();
        int j = int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        out.states.row(i) = m.states.row(std::min(j, N - 1));
    }
    return out;
}

namespace {

struct Atoms {
    Eigen::MatrixXd x;
    std::vector<double> w;
};

Atoms massive_atoms(const ParticleEnsemble& m) {
    Atoms a;
    std::vector<int> keep;
    for (int i = 0; i < m.size(); ++i)
        if (m.weights(i) > 0.0) keep.push_back(i);
    a.x.resize(keep.size(), m.dim());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        a.x.row(r) = m.states.row(keep[r]);
        a.w.push_back(m.weights(keep[r]));
    }
    return a;
}

double w2_line(const Atoms& a, const Atoms& b) {
    auto order = [](const Atoms& s) {
        std::vector<int> idx(s.w.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int i, int j) { return s.x(i, 0) < s.x(j, 0); });
        return idx;
    };
    auto ia = order(a), ib = order(b);
    double sa = std::accumulate(a.w.begin(), a.w.end(), 0.0);
    double sb = std::accumulate(b.w.begin(), b.w.end(), 0.0);
    std::size_t p = 0, q = 0;
    double ra = a.w[ia[0]] / sa, rb = b.w[ib[0]] / sb, total = 0.0;
    while (p < ia.size() && q < ib.size()) {
        double mass = std::min(ra, rb);
        double d = a.x(ia[p], 0) - b.x(ib[q], 0);
        total += mass * d * d;
        ra -= mass;
        rb -= mass;
        if (ra <= 1e-15 && ++p < ia.size()) ra = a.w[ia[p]] / sa;
        if (rb <= 1e-15 && ++q < ib.size()) rb = b.w[ib[q]] / sb;
    }
    return std::sqrt(std::max(total, 0.0));
}

bool is_uniform(const std::vector<double>& w) {
    for (double x : w)
        if (std::abs(x - w[0]) > 1e-12 * w[0]) return false;
    return true;
}

Eigen::MatrixXd sq_dist(const Atoms& a, const Atoms& b) {
    Eigen::MatrixXd C(a.x.rows(), b.x.rows());
    for (int i = 0; i < a.x.rows(); ++i)
        for (int j = 0; j < b.x.rows(); ++j) C(i, j) = (a.x.row(i) - b.x.row(j)).squaredNorm();
    return C;
}

double log_sum_exp(const Eigen::VectorXd& v) {
    double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
}

W2Result w2_entropic(const Atoms& a, const Atoms& b, const W2Options& opt) {
    Eigen::MatrixXd C = sq_dist(a, b);
    std::vector<double> all(C.data(), C.data() + C.size());
    std::nth_element(all.begin(), all.begin() + all.size() / 2, all.end());
    double reg = opt.entropic_scale * std::max(all[all.size() / 2], 1e-300);
    int na = int(a.w.size()), nb = int(b.w.size());
    Eigen::VectorXd la(na), lb(nb), f = Eigen::VectorXd::Zero(na), g = Eigen::VectorXd::Zero(nb);
    for (int i = 0; i < na; ++i) la(i) = std::log(a.w[i]);
    for (int j = 0; j < nb; ++j) lb(j) = std::log(b.w[j]);
    for (int it = 0; it < opt.sinkhorn_iterations; ++it) {
        Eigen::VectorXd fold = f;
        for (int i = 0; i < na; ++i)
            f(i) = -reg * log_sum_exp(((g.array() - C.row(i).transpose().array()) / reg + lb.array()).matrix());
        for (int j = 0; j < nb; ++j)
            g(j) = -reg * log_sum_exp(((f.array() - C.col(j).array()) / reg + la.array()).matrix());
        if ((f - fold).cwiseAbs().maxCoeff() < opt.sinkhorn_tol * (1.0 + f.cwiseAbs().maxCoeff())) break;
    }
    double cost = 0.0;
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j)
            cost += std::exp((f(i) + g(j) - C(i, j)) / reg + la(i) + lb(j)) * C(i, j);
    return {std::sqrt(std::max(cost, 0.0)), false, reg, "entropic"};
}

}  // namespace

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
    // Shortest augmenting paths with dual potentials, O(n^3).
    int n = int(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = match[j0], j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n);
    for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

W2Result wasserstein2(const ParticleEnsemble& a, const ParticleEnsemble& b, const W2Options& opt) {
    if (a.dim() != b.dim()) throw Error("measure", "range", "W2 between ensembles of different dimension");
    Atoms A = massive_atoms(a), B = massive_atoms(b);
    if (A.w.empty() || B.w.empty()) throw Error("measure", "range", "W2 of an ensemble without mass");
    if (a.dim() == 1) return {w2_line(A, B), true, 0.0, "quantile"};
    int n = int(A.w.size());
    if (n == int(B.w.size()) && n <= opt.exact_cap && is_uniform(A.w) && is_uniform(B.w)) {
        Eigen::MatrixXd C = sq_dist(A, B);
        auto perm = solve_assignment(C);
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += C(i, perm[i]);
        return {std::sqrt(total / n), true, 0.0, "assignment"};
    }
    return w2_entropic(A, B, opt);
}

std::string ensemble_to_csv(const ParticleEnsemble& m) {
    std::ostringstream os;
    os << "weight,stream";
    for (int j = 0; j < m.dim(); ++j) os << ",x" << j + 1;
    os << '\n';
    for (int i = 0; i < m.size(); ++i) {
        os << format_double(m.weights(i)) << ',' << m.streams[i];
        for (int j = 0; j < m.dim(); ++j) os << ',' << format_double(m.states(i, j));
        os << '\n';
    }
    return os.str();
}

ParticleEnsemble ensemble_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw Error("measure", "io", "empty ensemble file");
    auto header = split_csv_line(line);
    bool has_stream = header.size() > 1 && header[1] == "stream";
    int first = has_stream ? 2 : 1;
    int n = int(header.size()) - first;
    if (header.empty() || header[0] != "weight" || n < 1)
        throw Error("measure", "io", "ensemble header must be weight[,stream],x1..xn");
    std::vector<std::vector<double>> rows;
    std::vector<double> w;
    std::vector<std::uint64_t> streams;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (int(f.size()) != n + first) throw Error("measure", "io", "ragged row in ensemble file");
        w.push_back(std::stod(f[0]));
        streams.push_back(has_stream ? std::stoull(f[1]) : streams.size());
        std::vector<double> r;
        for (int j = 0; j < n; ++j) r.push_back(std::stod(f[first + j]));
        rows.push_back(r);
    }
    ParticleEnsemble m;
    m.states.resize(rows.size(), n);
    m.weights.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < n; ++j) m.states(i, j) = rows[i][j];
        m.weights(i) = w[i];
    }
    m.streams = streams;
    m.validate();
    return m;
}

}  // namespace mfc

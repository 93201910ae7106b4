#include "mfc/paths.hpp"

#include <cmath>
#include <numbers>

#include "mfc/parallel.hpp"

namespace mfc {

TimeGrid make_grid(double t0, double T, int K) {
    if (!(T > t0)) throw Error("paths", "range", "time grid needs T > t0");
    if (K < 1) throw Error("paths", "range", "time grid needs at least one step");
    TimeGrid g;
    g.t0 = t0;
    g.T = T;
    g.K = K;
    g.knots.resize(K + 1);
    for (int k = 0; k <= K; ++k) g.knots[k] = t0 + (T - t0) * k / K;
    g.knots[K] = T;
    return g;
}

Philox4x32::Counter Philox4x32::apply(Counter ctr, Key key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
        std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
        auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

namespace {

Philox4x32::Counter block(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, std::uint32_t slot) {
    Philox4x32::Counter ctr{slot, std::uint32_t(step), std::uint32_t(stream), std::uint32_t(stream >> 32)};
    Philox4x32::Key key{std::uint32_t(seed), std::uint32_t(seed >> 32)};
    return Philox4x32::apply(ctr, key);
}

// 53-bit uniform strictly inside (0, 1).
double to_unit(std::uint32_t hi, std::uint32_t lo) {
    std::uint64_t x = (std::uint64_t(hi) << 32) | lo;
    return (double(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, int word) {
    auto r = block(seed, stream, step, 0x80000000u | std::uint32_t(word / 2));
    return word % 2 == 0 ? to_unit(r[0], r[1]) : to_unit(r[2], r[3]);
}

double standard_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, int component) {
    auto r = block(seed, stream, step, std::uint32_t(component / 2));
    double u1 = to_unit(r[0], r[1]), u2 = to_unit(r[2], r[3]);
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 2.0 * std::numbers::pi * u2;
    return component % 2 == 0 ? rad * std::cos(ang) : rad * std::sin(ang);
}

BrownianBundle sample_increments(const TimeGrid& grid, const std::vector<std::uint64_t>& streams, int dim,
                                 std::uint64_t seed, int step_offset, int jobs) {
    if (dim < 1) throw Error("paths", "range", "Brownian dimension must be positive");
    BrownianBundle b;
    b.seed = seed;
    b.step_offset = step_offset;
    b.dim = dim;
    b.streams = streams;
    int N = static_cast<int>(streams.size());
    double sq = std::sqrt(grid.dt());
    b.dW.assign(grid.K, Eigen::MatrixXd(N, dim));
    parallel_for(N, jobs, [&](int lo, int hi) {
        for (int k = 0; k < grid.K; ++k)
            for (int i = lo; i < hi; ++i) {
                double sign = (streams[i] & kMirrorStream) ? -sq : sq;
                std::uint64_t stream = streams[i] & ~kMirrorStream;
                for (int j = 0; j < dim; ++j)
                    b.dW[k](i, j) = sign * standard_normal(seed, stream, std::uint64_t(step_offset + k), j);
            }
    });
    return b;
}

Eigen::MatrixXd euler_maruyama_scalar(const TimeGrid& grid, const BrownianBundle& bundle, double y0, double a,
                                      double b, double c) {
    int N = bundle.particles();
    Eigen::MatrixXd Y(N, grid.K + 1);
    Y.col(0).setConstant(y0);
    double dt = grid.dt();
    for (int k = 0; k < grid.K; ++k)
        Y.col(k + 1) = Y.col(k) + (a + b * Y.col(k).array()).matrix() * dt + c * bundle.dW[k].col(0);
    return Y;
}

}  // namespace mfc

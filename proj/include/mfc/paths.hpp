#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "mfc/types.hpp"

namespace mfc {

struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int K = 0;
    std::vector<double> knots;

    double dt() const { return K == 0 ? 0.0 : (T - t0) / K; }
    double time(int k) const { return knots[k]; }
};

TimeGrid make_grid(double t0, double T, int K);

// Philox4x32-10 counter-based generator (Salmon et al. 2011).
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;
    static Counter apply(Counter ctr, Key key);
};

// Standard normal addressed by (seed, stream, step, component). Any particle
// can be regenerated in isolation, so results do not depend on how particles
// are split across workers.
double standard_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, int component);
double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, int word);

// A stream id with this bit set replays the increments of the stream without
// it, negated. Paired atoms give antithetic paths.
inline constexpr std::uint64_t kMirrorStream = std::uint64_t(1) << 63;

// Brownian increments dW[k](i, j) over step k for particle i, component j.
struct BrownianBundle {
    std::uint64_t seed = 0;
    int step_offset = 0;
    int dim = 0;
    std::vector<std::uint64_t> streams;
    std::vector<Eigen::MatrixXd> dW;

    int particles() const { return static_cast<int>(streams.size()); }
    int steps() const { return static_cast<int>(dW.size()); }
};

// step_offset shifts the absolute step index, so a restart at knot k' with
// offset k' reproduces the tail of the original paths.
BrownianBundle sample_increments(const TimeGrid& grid, const std::vector<std::uint64_t>& streams, int dim,
                                 std::uint64_t seed, int step_offset = 0, int jobs = 1);

// Euler-Maruyama path of a single linear SDE dY = (a + bY)ds + c dW, used by
// the time-stepping tests.
Eigen::MatrixXd euler_maruyama_scalar(const TimeGrid& grid, const BrownianBundle& bundle, double y0, double a,
                                      double b, double c);

}  // namespace mfc

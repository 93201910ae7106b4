#include <doctest.h>

#include <cmath>

#include "mfc/paths.hpp"

using namespace mfc;

TEST_CASE("philox matches the published known-answer vectors") {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    CHECK(Philox4x32::apply(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::apply(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, K{0xffffffffu, 0xffffffffu}) ==
          C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::apply(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, K{0xa4093822u, 0x299f31d0u}) ==
          C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("time grid ends exactly at the horizon") {
    TimeGrid g = make_grid(0.1, 0.7, 3);
    CHECK(g.knots.size() == 4);
    CHECK(g.knots.front() == 0.1);
    CHECK(g.knots.back() == 0.7);
    CHECK(g.dt() == doctest::Approx(0.2));
    CHECK_THROWS_AS(make_grid(1.0, 1.0, 4), Error);
    CHECK_THROWS_AS(make_grid(0.0, 1.0, 0), Error);
}

TEST_CASE("normals have unit moments and are addressable") {
    const int M = 200000;
    double s1 = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < M; ++i) {
        double z = standard_normal(3, i, 0, 0);
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
    }
    CHECK(std::abs(s1 / M) < 0.01);
    CHECK(std::abs(s2 / M - 1.0) < 0.01);
    CHECK(std::abs(s4 / M - 3.0) < 0.06);
    CHECK(standard_normal(3, 17, 5, 1) == standard_normal(3, 17, 5, 1));
    CHECK(standard_normal(3, 17, 5, 1) != standard_normal(4, 17, 5, 1));
    for (int i = 0; i < 1000; ++i) {
        double u = uniform01(9, i, 2, i % 4);
        CHECK((u > 0.0 && u < 1.0));
    }
}

TEST_CASE("increments do not depend on the worker count") {
    TimeGrid g = make_grid(0, 1, 20);
    std::vector<std::uint64_t> streams(300);
    for (int i = 0; i < 300; ++i) streams[i] = 1000 + i;
    BrownianBundle a = sample_increments(g, streams, 2, 11, 0, 1);
    BrownianBundle b = sample_increments(g, streams, 2, 11, 0, 4);
    for (int k = 0; k < g.K; ++k) CHECK((a.dW[k].array() == b.dW[k].array()).all());
}

TEST_CASE("step offset reproduces the tail of the paths") {
    TimeGrid full = make_grid(0, 1, 10), tail = make_grid(0.4, 1, 6);
    std::vector<std::uint64_t> streams{0, 5, 9};
    BrownianBundle a = sample_increments(full, streams, 1, 2);
    BrownianBundle b = sample_increments(tail, streams, 1, 2, 4);
    for (int k = 0; k < 6; ++k) CHECK((a.dW[4 + k] - b.dW[k]).norm() < 1e-15);
}

TEST_CASE("mirrored streams replay negated increments") {
    TimeGrid g = make_grid(0, 1, 8);
    std::vector<std::uint64_t> streams{7, 7 | kMirrorStream};
    BrownianBundle b = sample_increments(g, streams, 3, 5);
    for (int k = 0; k < g.K; ++k) CHECK((b.dW[k].row(0) + b.dW[k].row(1)).norm() == 0.0);
}

TEST_CASE("Euler-Maruyama without noise is the explicit recursion") {
    TimeGrid g = make_grid(0, 1, 10);
    BrownianBundle b = sample_increments(g, {0, 1}, 1, 1);
    Eigen::MatrixXd Y = euler_maruyama_scalar(g, b, 2.0, 0.5, -1.0, 0.0);
    double y = 2.0;
    for (int k = 0; k < 10; ++k) y += (0.5 - y) * 0.1;
    CHECK(Y(1, 10) == doctest::Approx(y).epsilon(1e-14));
}

TEST_CASE("Euler-Maruyama mean of an OU process") {
    // E[Y_k] follows the noise-free recursion exactly; the sample mean
    // estimates it within a few standard errors.
    TimeGrid g = make_grid(0, 1, 20);
    std::vector<std::uint64_t> streams(20000);
    for (std::size_t i = 0; i < streams.size(); ++i) streams[i] = i;
    BrownianBundle b = sample_increments(g, streams, 1, 8);
    Eigen::MatrixXd Y = euler_maruyama_scalar(g, b, 1.0, 0.0, -2.0, 0.5);
    double mean = std::pow(1.0 - 2.0 * 0.05, 20);
    CHECK(std::abs(Y.col(20).mean() - mean) < 4 * 0.5 / std::sqrt(4.0 * 20000));
}

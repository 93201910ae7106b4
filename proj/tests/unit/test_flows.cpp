#include <doctest.h>

#include <sstream>

#include "mfc/bench.hpp"
#include "mfc/flows.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::lq_spec;
using mfc::testing::vec1;

namespace {

struct Fixture {
    ProblemSpec spec = lq_spec();
    SolverOptions opt;
    FbsdeSolution sol;
    Fixture(int N = 512, int K = 16) {
        ParticleEnsemble m = antithetic(gaussian_ensemble(N / 2, vec1(0.0), vec1(1.0), 9));
        TimeGrid g = make_grid(0.0, spec.T, K);
        sol = solve(spec, m, g, make_noise(m, g, 1, 4), opt);
    }
};

}  // namespace

TEST_CASE("Gateaux flow matches finite differences of the re-solved system") {
    Fixture f;
    Eigen::MatrixXd dir = (1.0 + 0.5 * f.sol.initial.states.array()).matrix();
    Flow flow = gateaux_flow(f.spec, f.sol, dir, f.opt);
    CHECK(flow.sol.diag.converged);
    FdCheck fd = gateaux_fd_check(f.spec, f.sol, flow, dir, {1e-1, 1e-2, 1e-3}, f.opt);
    CHECK(fd.error_Y.back() < 1e-2);
    CHECK(fd.error_P.back() < 1e-2);
    // The flow is linear in the direction.
    Flow twice = gateaux_flow(f.spec, f.sol, 2.0 * dir, f.opt);
    CHECK((twice.sol.DP[3] - 2.0 * flow.sol.DP[3]).norm() <= 1e-8 * flow.sol.DP[3].norm());
}

TEST_CASE("spatial Jacobian of the costate is the deviation Riccati gain") {
    Fixture f(2048, 20);
    std::vector<Flow> J = spatial_jacobian(f.spec, f.sol, f.opt);
    REQUIRE(J.size() == 1);
    RiccatiSolution ric = solve_riccati(f.spec, 0.0, 20);
    // The flow differentiates in the starting point, so the gain at a later
    // knot is DP / DY along the path.
    for (int k : {0, 10, 20}) {
        double gain = J[0].sol.DP[k](3, 0) / J[0].sol.DY[k](3, 0);
        CHECK(gain == doctest::Approx(ric.Pi[ric.fine_index(k)](0, 0)).epsilon(0.03));
    }
}

TEST_CASE("flows CSV has one row per flow, knot and particle") {
    Fixture f(32, 4);
    std::vector<Flow> J = spatial_jacobian(f.spec, f.sol, f.opt);
    std::string csv = flows_to_csv(J, f.sol, 1, 1);
    std::istringstream is(csv);
    std::string line;
    int rows = -1;
    std::getline(is, line);
    CHECK(line.rfind("flow,kind,column,knot,t,particle", 0) == 0);
    while (std::getline(is, line)) ++rows;
    CHECK(rows + 1 == 5 * 32);
}

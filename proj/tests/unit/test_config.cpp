#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "mfc/config.hpp"
#include "mfc/io.hpp"

using namespace mfc;

namespace {

void expect_config_error(const std::string& text) {
    try {
        parse_problem_config(text);
        FAIL("expected a config error for " << text);
    } catch (const Error& e) {
        CHECK(e.module() == "cli");
        CHECK(e.kind() == "config");
    }
}

}  // namespace

TEST_CASE("shipped configs load and validate") {
    for (const char* name : {"lq.json", "deterministic_quartic.json", "stiff_continuation.json"}) {
        ProblemConfig cfg = load_problem_config(std::string(MFC_SOURCE_DIR "/configs/") + name);
        CHECK_NOTHROW(validate_spec(cfg.spec, cfg.layers));
        CHECK(cfg.particles >= 2);
    }
    ProblemConfig lq = load_problem_config(MFC_SOURCE_DIR "/configs/lq.json");
    CHECK(lq.spec.dynamics.s0[0](0) == 0.6);
    CHECK(lq.seeds.size() == 5);
    CHECK(lq.layers.bellman);
    CHECK(lq.initial.antithetic);
    CHECK(lq.master_point(0) == 0.7);
}

TEST_CASE("matrices and vectors in two dimensions") {
    ProblemConfig cfg = parse_problem_config(R"({
        "n": 2, "d": 1, "T": 2.0,
        "dynamics": {"f1": [[0.1, 0.0], [0.2, 0.3]], "f3": [[1.0], [0.5]],
                     "s0": [[0.3, 0.0], [0.0, 0.4]]},
        "cost": {"q": [[1, 0], [0, 2]], "r": 1.5, "qT": [[1, 0], [0, 1]]},
        "initial": {"mean": [1, -1], "stddev": [0.5, 0.25]},
        "solver": {"basis": "quadratic"}
    })");
    CHECK(cfg.spec.T == 2.0);
    CHECK(cfg.spec.dynamics.f1(1, 0) == 0.2);
    CHECK(cfg.spec.dynamics.f3(1, 0) == 0.5);
    CHECK(cfg.spec.dynamics.s0[1](1) == 0.4);
    CHECK(cfg.solver.basis == Basis::Quadratic);
    ParticleEnsemble m = make_initial(cfg, 100, 3);
    CHECK(m.size() == 100);
    CHECK(m.dim() == 2);
}

TEST_CASE("malformed configs are config errors") {
    expect_config_error("{not json");
    expect_config_error(R"({"n": 2, "dynamics": {"f1": 0.5}})");
    expect_config_error(R"({"cost": {"type": "lq_meanfield", "kappa": 0.1}})");
    expect_config_error(R"({"solver": {"basis": "cubic"}})");
    expect_config_error(R"({"seeds": [-1]})");
    expect_config_error(R"({"T": 0.5, "t0": 0.5})");
    expect_config_error(R"({"particles": "many"})");
    CHECK_THROWS_AS(parse_problem_config(R"({"solver": {"damping": 2.0}})"), Error);
}

TEST_CASE("antithetic initial law") {
    ProblemConfig cfg = parse_problem_config(R"({"initial": {"antithetic": true}})");
    ParticleEnsemble m = make_initial(cfg, 8, 1);
    CHECK(m.size() == 8);
    CHECK(m.states(1, 0) == m.states(5, 0));
    CHECK_THROWS_AS(make_initial(cfg, 7, 1), Error);
}

TEST_CASE("csv initial law is resolved next to the config file") {
    auto dir = std::filesystem::temp_directory_path() / "mfc_config_test";
    std::filesystem::create_directories(dir);
    write_text_file((dir / "atoms.csv").string(), "weight,x1\n0.25,1\n0.75,3\n");
    write_text_file((dir / "p.json").string(), R"({"initial": {"kind": "csv", "path": "atoms.csv"}})");
    ProblemConfig cfg = load_problem_config((dir / "p.json").string());
    ParticleEnsemble m = make_initial(cfg, 0, 0);
    CHECK(m.size() == 2);
    CHECK(ensemble_mean(m)(0) == doctest::Approx(2.5));
    std::filesystem::remove_all(dir);
}

TEST_CASE("number formatting round-trips") {
    for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 0.0}) CHECK(std::stod(format_double(x)) == x);
    CHECK(split_csv_line("a,,b\r") == std::vector<std::string>{"a", "", "b"});
    CHECK_THROWS_AS(read_text_file("/nonexistent/file"), Error);
}

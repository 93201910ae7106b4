#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfc/fbsde.hpp"

namespace mfc {

struct InitialLaw {
    std::string kind = "gaussian";  // gaussian | csv
    Vec mean, stddev;
    std::string path;  // csv ensemble, resolved relative to the config file
    bool antithetic = false;  // pair every atom with a mirrored-noise copy
};

// Parsed problem file. See docs/config.md for the schema.
struct ProblemConfig {
    ProblemSpec spec;
    double t0 = 0.0;
    InitialLaw initial;
    int particles = 4096;
    int steps = 50;
    std::vector<std::uint64_t> seeds{1};
    SolverOptions solver;
    ValidationLayers layers;
    Vec master_point;  // evaluation point of the master layer
    int master_probes = 256;
};

ProblemConfig parse_problem_config(const std::string& json_text, const std::string& base_dir = ".");
ProblemConfig load_problem_config(const std::string& path);

// Ensemble of N atoms from the initial law; `seed` drives the sampling.
ParticleEnsemble make_initial(const ProblemConfig& cfg, int N, std::uint64_t seed);

}  // namespace mfc

#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace mfc {

// State and control dimensions are small; fixed-capacity storage keeps the
// per-particle inner loops free of heap traffic.
inline constexpr int kMaxDim = 4;
inline constexpr int kMaxJet = 3 * kMaxDim;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using JetVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxJet, 1>;
using JetMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxJet, kMaxJet>;

// Every error carries the module that raised it and a short kind tag
// ("specification", "convexity", "solver", "basis", "capability", "range",
// "config", "io").
class Error : public std::runtime_error {
public:
    Error(std::string module, std::string kind, const std::string& message)
        : std::runtime_error(message), module_(std::move(module)), kind_(std::move(kind)) {}

    const std::string& module() const { return module_; }
    const std::string& kind() const { return kind_; }

private:
    std::string module_;
    std::string kind_;
};

}  // namespace mfc

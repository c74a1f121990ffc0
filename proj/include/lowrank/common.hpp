#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace lowrank {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using Index = Eigen::Index;
using Seed = std::uint64_t;

/// Raised when a decomposition or recursion loses the numerical properties it
/// relies on (positive definiteness of P, SVD non-convergence, ...).
class numerical_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when inputs are valid in shape but make a quantity undefined,
/// e.g. a zero excitation ratio in the ratio-power schedule.
class degenerate_error : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

namespace detail {

inline void require(bool cond, const std::string &what) {
    if (!cond)
        throw std::invalid_argument(what);
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived> &m) {
    return m.allFinite();
}

template <class Derived>
void require_finite(const Eigen::DenseBase<Derived> &m, const char *name) {
    if (!m.allFinite())
        throw std::invalid_argument(std::string(name) + " has non-finite entries");
}

} // namespace detail

} // namespace lowrank

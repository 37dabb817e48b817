#pragma once

#include <stdexcept>
#include <string>

namespace stresstopo {

/// A scalar argument outside its admissible range (density, Poisson ratio, ...).
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Grid index outside the mesh.
class BoundsError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

/// Vector or matrix sizes that do not match the mesh they are used with.
class StructuralError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Iterative solve that did not reach its tolerance.
class SolverError : public std::runtime_error {
  public:
    SolverError(const std::string &what, double residual, long iterations)
        : std::runtime_error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    long iterations() const noexcept { return iterations_; }

  private:
    double residual_;
    long iterations_;
};

/// The reduced stiffness matrix is singular, usually because the supports
/// do not remove every rigid-body mode.
class SingularMatrixError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// MMA subproblem without a feasible point.
class SubproblemError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace stresstopo

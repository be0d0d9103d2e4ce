#ifndef MNUM_ERRORS_HPP
#define MNUM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mnum {

/// Argument outside the mathematical domain of a latency, rate or choice map.
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Graph-level inconsistency: unknown node, unreachable destination, empty out-star.
class StructuralError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Iterative method hit its iteration cap. `residual` is the last measured residual.
class ConvergenceError : public std::runtime_error {
  public:
    ConvergenceError(const std::string& what, double residual, std::size_t iterations)
        : std::runtime_error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

  private:
    double residual_;
    std::size_t iterations_;
};

/// Line search could not find an acceptable step.
class StepRuleError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Path enumeration exceeded its cap; the brute-force oracle is not available.
class OracleUnavailable : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed network or report file.
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace mnum

#endif

#pragma once

#include <stdexcept>
#include <string>

namespace hbplate {

/// Point or parameter value outside the parametric domain.
class OutOfDomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Polynomial degree the bubble construction cannot handle (p < 3).
class UnsupportedDegreeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Refinement refused, e.g. the configured maximum level would be exceeded.
class RefinementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Singular or inverted geometry map, or a map kind an operation does not support.
class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent or unsupported boundary data.
class BoundaryDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Factorization breakdown, indefinite matrix or residual above tolerance.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Not enough usable records to fit a convergence rate.
class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Effectivity requested against a zero exact error.
class UndefinedEffectivityError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An adaptive step refined elements without adding degrees of freedom.
class StagnationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hbplate

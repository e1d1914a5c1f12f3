#pragma once

#include <stdexcept>
#include <string>

namespace cglm {

/// Canonical parameter outside the log-partition domain.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Observation outside the family support.
struct SupportError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration (incompatible clip/family, bad hyperparameters,
/// malformed config file, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Clipping-condition certification failed (e.g. unbounded variance
/// function over the requested range).
struct CertificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cglm

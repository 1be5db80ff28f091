#pragma once

#include <stdexcept>
#include <string>

namespace tcsm {

// Base of every error the library throws. Callers that only care about
// "something went wrong in tcsm" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: missing mask token, bad hyper-parameter, unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Enumeration would exceed the state-space cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of a generator or schedule.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Divergence evaluated where the first argument is not dominated by the second.
class SupportError : public Error {
 public:
  using Error::Error;
};

// Conditioning on an observation with zero probability.
class EvidenceError : public Error {
 public:
  using Error::Error;
};

// Concrete score requested at a base point of zero mass.
class ZeroBaseError : public Error {
 public:
  using Error::Error;
};

// Conditional requested where the normalizer vanishes.
class UndefinedConditionalError : public Error {
 public:
  using Error::Error;
};

// Velocity evaluated too close to t = 1.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// A training target produced non-finite or empty values.
class TargetError : public Error {
 public:
  using Error::Error;
};

// Parameters contain NaN or infinity.
class ModelCorruptError : public Error {
 public:
  using Error::Error;
};

// API used out of order (e.g. backward without a forward cache).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training diverged or a sampler could not keep probabilities valid.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace tcsm

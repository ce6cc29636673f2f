#pragma once

#include <stdexcept>
#include <string>

namespace irtune {

// A caller broke a documented precondition (shape, range, missing entry).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed data reaching the model or loaders (bad token ids, labels, lines).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent or out-of-range configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Text that could not be parsed; `position` is a 1-based line or token index.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at position " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

}  // namespace irtune

namespace irtune {

// A training step produced non-finite gradients or parameters.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace irtune

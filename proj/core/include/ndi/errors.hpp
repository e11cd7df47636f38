#pragma once

#include <stdexcept>
#include <string>

namespace ndi {

/// Invalid configuration value; the message names the offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller violated an operation's input contract (shape mismatch etc.).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// An input file path does not exist or cannot be opened.
struct FileNotFoundError : std::runtime_error {
  explicit FileNotFoundError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A loss term became non-finite during training.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(std::string term_, int iteration_, const std::string& msg)
      : std::runtime_error(msg), term(std::move(term_)), iteration(iteration_) {}
  std::string term;
  int iteration;
};

}  // namespace ndi

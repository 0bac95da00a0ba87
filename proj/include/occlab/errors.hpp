#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace occlab {

/// Raised when an input (control, config, topology, file) violates a
/// precondition. `code` is a short machine-readable tag ("parse",
/// "bounds", "means", "breakpoints", "topology", ...) used by the CLI
/// error channel.
class ValidationError : public std::runtime_error {
   public:
    ValidationError(std::string code, const std::string& detail)
        : std::runtime_error(detail), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

   private:
    std::string code_;
};

}  // namespace occlab

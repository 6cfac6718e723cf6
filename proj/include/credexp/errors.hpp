#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace credexp {

/// Precondition violated by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation requested on an object that cannot support it yet (e.g. too few rows).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The black box returned something that is not a probability.
class ModelFault : public std::runtime_error {
 public:
  ModelFault(const std::string& what, std::vector<double> input)
      : std::runtime_error(what), input_(std::move(input)) {}

  const std::vector<double>& input() const noexcept { return input_; }

 private:
  std::vector<double> input_;
};

/// File could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed model, config or dataset file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& field,
             const std::string& message)
      : std::runtime_error(format(source, line, field, message)),
        line_(line),
        field_(field) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& source, std::size_t line,
                            const std::string& field, const std::string& message) {
    std::string out = source;
    if (line > 0) out += ":" + std::to_string(line);
    if (!field.empty()) out += " [" + field + "]";
    return out + ": " + message;
  }

  std::size_t line_;
  std::string field_;
};

}  // namespace credexp

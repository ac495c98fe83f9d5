#pragma once

#include <stdexcept>
#include <string>

namespace rectiscope {

// Bad arguments: wrong dimensions, out-of-range parameters, empty balls.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed files. line is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// A numerical solver gave up. state describes where it stopped.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& msg, std::string state)
      : std::runtime_error(msg + " [" + state + "]"), state_(std::move(state)) {}
  const std::string& state() const { return state_; }

 private:
  std::string state_;
};

}  // namespace rectiscope

#pragma once

#include <stdexcept>
#include <string>

namespace satemu {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an event handler throws; carries the event's time and sequence.
class SimulationError : public Error {
 public:
  using Error::Error;
};

class ConnectTimeout : public Error {
 public:
  ConnectTimeout() : Error("handshake made no progress for 10s") {}
};

class UnknownStream : public Error {
 public:
  using Error::Error;
};

class SendAfterFin : public Error {
 public:
  using Error::Error;
};

class AckOfUnsentPacket : public Error {
 public:
  using Error::Error;
};

class UnknownAlgorithm : public Error {
 public:
  using Error::Error;
};

class ProxyOverload : public Error {
 public:
  using Error::Error;
};

class ProxyError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace satemu

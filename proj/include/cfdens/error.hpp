#pragma once

#include <stdexcept>
#include <string>

namespace cfdens {

//! Broad failure categories; the CLI maps each to its own exit code.
enum class ErrorKind { config, data, domain, solver, internal };

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(what)
    , kind_(kind)
  {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

class ConfigError : public Error
{
public:
  explicit ConfigError(const std::string& what)
    : Error(ErrorKind::config, what)
  {}
};

class DataError : public Error
{
public:
  explicit DataError(const std::string& what)
    : Error(ErrorKind::data, what)
  {}
};

class DomainError : public Error
{
public:
  explicit DomainError(const std::string& what)
    : Error(ErrorKind::domain, what)
  {}
};

class SolverError : public Error
{
public:
  explicit SolverError(const std::string& what)
    : Error(ErrorKind::solver, what)
  {}
};

const char* to_string(ErrorKind kind) noexcept;

} // namespace cfdens

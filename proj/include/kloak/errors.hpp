#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kloak {

// Base of every error raised by the engine. kind() is the stable name carried
// in Error frames and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define KLOAK_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    using Error::Error;                                            \
    const char* kind() const noexcept override { return #Name; }   \
  };

KLOAK_DEFINE_ERROR(ValidationError)
KLOAK_DEFINE_ERROR(UnsupportedFeature)
KLOAK_DEFINE_ERROR(UnknownAttribute)
KLOAK_DEFINE_ERROR(SchemaMismatch)
KLOAK_DEFINE_ERROR(UnmappedValue)
KLOAK_DEFINE_ERROR(TypeError)
KLOAK_DEFINE_ERROR(DomainMismatch)
KLOAK_DEFINE_ERROR(MissingView)
KLOAK_DEFINE_ERROR(MissingShard)
KLOAK_DEFINE_ERROR(TransportError)
KLOAK_DEFINE_ERROR(ResourceLimit)

#undef KLOAK_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : Error(message + " (at offset " + std::to_string(position) + ")"), position_(position) {}
  explicit ParseError(const std::string& message) : Error(message) {}

  const char* kind() const noexcept override { return "ParseError"; }
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_ = 0;
};

// Raised when no view can satisfy the federated constraint for `relation`
// because removing `host`'s tuples leaves between 1 and k-1 tuples.
class ViewInfeasible : public Error {
 public:
  ViewInfeasible(std::string relation, int host, const std::string& detail)
      : Error("view infeasible for relation '" + relation + "' and host " + std::to_string(host) + ": " + detail),
        relation_(std::move(relation)),
        host_(host),
        detail_(detail) {}

  const char* kind() const noexcept override { return "ViewInfeasible"; }
  const std::string& relation() const noexcept { return relation_; }
  int host() const noexcept { return host_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string relation_;
  int host_;
  std::string detail_;
};

}  // namespace kloak

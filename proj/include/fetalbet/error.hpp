#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fetalbet {

// Coarse failure categories. The CLI prints these as a machine-readable
// prefix and maps them onto exit codes.
enum class ErrorKind {
  io,
  format,
  validation,
  contract,
  shape,
  planning,
  degenerate,
  load,
  training,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::validation: return "validation";
    case ErrorKind::contract: return "contract";
    case ErrorKind::shape: return "shape";
    case ErrorKind::planning: return "planning";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::load: return "load";
    case ErrorKind::training: return "training";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FETALBET_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

FETALBET_DEFINE_ERROR(IoError, io)
FETALBET_DEFINE_ERROR(FormatError, format)
FETALBET_DEFINE_ERROR(ValidationError, validation)
FETALBET_DEFINE_ERROR(ContractError, contract)
FETALBET_DEFINE_ERROR(ShapeError, shape)
FETALBET_DEFINE_ERROR(PlanningError, planning)
FETALBET_DEFINE_ERROR(DegenerateError, degenerate)
FETALBET_DEFINE_ERROR(LoadError, load)
FETALBET_DEFINE_ERROR(TrainingError, training)

#undef FETALBET_DEFINE_ERROR

namespace detail {

template <typename E = ContractError>
inline void require(bool condition, const std::string& message) {
  if (!condition) throw E(message);
}

}  // namespace detail
}  // namespace fetalbet

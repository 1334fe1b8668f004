#pragma once

#include <stdexcept>
#include <string>

namespace biasdyn {

/// Base for every error this library raises.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Errors caused by bad inputs (files, configs, malformed data). The CLI
/// maps these to exit code 1, everything else to 2.
struct UserError : Error {
  using Error::Error;
};

// -- math layer --
struct NotSkew : Error {
  using Error::Error;
};
struct NotRotation : Error {
  using Error::Error;
};
struct NearSingular : Error {
  using Error::Error;
};
struct NonFinite : Error {
  using Error::Error;
};
struct OutOfRange : Error {
  using Error::Error;
};

// -- data / shape checks --
struct BadTimeline : UserError {
  using UserError::UserError;
};
struct ShapeMismatch : UserError {
  using UserError::UserError;
};
struct LengthMismatch : UserError {
  using UserError::UserError;
};
struct MisalignedTimeline : UserError {
  using UserError::UserError;
};
struct TooShort : UserError {
  using UserError::UserError;
};
struct BadConfig : UserError {
  using UserError::UserError;
};

// -- file I/O --
struct MissingFile : UserError {
  using UserError::UserError;
};
struct BadRow : UserError {
  using UserError::UserError;
};
struct NonMonotoneTime : UserError {
  using UserError::UserError;
};
struct NoOverlap : UserError {
  using UserError::UserError;
};
struct IoError : UserError {
  using UserError::UserError;
};

// -- training --
struct Diverged : Error {
  using Error::Error;
};

}  // namespace biasdyn

#pragma once

#include <stdexcept>
#include <string>

namespace blobdrag {

/// Precondition or shape violation on an argument.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A mask too small to determine an ellipse.
class DegenerateMask : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File missing, unreadable, or malformed at the byte level.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally valid input whose content fails validation (scene, drag, config).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace blobdrag

#pragma once

#include <stdexcept>
#include <string>

namespace signclip {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value or combination is invalid (even kernel width,
/// bad LoRA rank, unknown config key, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, empty
/// prefix, empty sequence, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Cosine similarity requested on a zero-norm embedding.
class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

/// Companion streams (video / landmarks) disagree on frame count or a crop
/// box cannot be formed.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// File parsing or writing failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss became NaN/Inf during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace signclip

#pragma once

#include <stdexcept>
#include <string>

namespace ulab {

// Error taxonomy shared by every module. Each type corresponds to one
// failure contract; CLI exit codes are derived from these in tools/ulab.cpp.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or size disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Out-of-range token id, row index, or similar.
struct IndexError : Error {
  using Error::Error;
};

// Caller violated a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// Invalid or empty input data.
struct InputError : Error {
  using Error::Error;
};

// Sequence does not fit the model context.
struct LengthError : Error {
  using Error::Error;
};

// Bad configuration value or file.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed external file; message carries line/column where known.
struct ParseError : Error {
  using Error::Error;
};

// Artifact bytes do not match their recorded checksum.
struct ChecksumError : Error {
  using Error::Error;
};

// NaN or divergence during training.
struct NumericError : Error {
  using Error::Error;
};

// Filesystem failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace ulab

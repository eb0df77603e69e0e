#pragma once

#include <stdexcept>
#include <string>

namespace raincast {

// Malformed arguments, configs, or inconsistent shapes supplied by a caller.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file that cannot be parsed: bad magic, bad header, bad layout.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file whose payload ends before the header-declared size.
struct TruncationError : FormatError {
  using FormatError::FormatError;
};

// A parseable file whose payload is unusable (non-finite values, bad ranges).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; the run cannot continue.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace raincast

#pragma once

#include <stdexcept>

namespace warpfool {

// Bytes do not match the declared file format: bad magic, inconsistent
// headers, truncated payload, checksum mismatch.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem-level failure: missing file, unwritable path.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Degenerate geometry: collinear correspondence sets, rank-deficient or
// singular homography systems, points mapped to infinity.
struct geometry_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatch inside the network engine.
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or parameters during training.
struct training_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace warpfool

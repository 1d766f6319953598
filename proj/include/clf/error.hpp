#pragma once

#include <stdexcept>
#include <string>

namespace clf {

// Base class for everything this library throws on purpose.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
struct dim_error : error {
  using error::error;
};

// Invalid configuration value or combination.
struct config_error : error {
  using error::error;
};

// Malformed or unsupported on-disk data.
struct format_error : error {
  using error::error;
};

// Dataset layout problems (missing members, broken references).
struct dataset_error : error {
  using error::error;
};

// Non-finite values or other numeric failures.
struct numeric_error : error {
  using error::error;
};

// API contract violated by the caller.
struct contract_error : error {
  using error::error;
};

// Invalid depth value or point behind the camera.
struct geometry_error : error {
  using error::error;
};

}  // namespace clf

#pragma once

#include <string>

#include "reshape/tensor.hpp"

namespace reshape {

/// Reads an 8-bit RGB PNG into a [3,H,W] tensor with values in [-1,1].
Tensor load_image(const std::string& path);

/// Writes a [C,H,W] tensor in [-1,1] (C=1 or 3) as an 8-bit RGB PNG.
/// Values outside [-1,1] are clamped.
void save_image(const std::string& path, const Tensor& image);

}  // namespace reshape

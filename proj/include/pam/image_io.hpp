#pragma once

#include <string>

#include "pam/tensor.hpp"

namespace pam {

// Binary netpbm images, 8-bit depth. Values map linearly between [0,1] and
// [0,255] with round-to-nearest on write.

void write_pgm(const Tensor& gray, const std::string& path);   // H×W
Tensor read_pgm(const std::string& path);

void write_ppm(const Tensor& rgb, const std::string& path);    // 3×H×W
Tensor read_ppm(const std::string& path);

}  // namespace pam

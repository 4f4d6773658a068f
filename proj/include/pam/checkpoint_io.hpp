#pragma once

#include <string>

#include "pam/supernet.hpp"

namespace pam {

// Binary checkpoint container; exact byte layout documented in FORMATS.md.
// Writes are atomic (temp file + rename).
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pam

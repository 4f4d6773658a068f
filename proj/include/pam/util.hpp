#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <stdexcept>

namespace pam {

// Artifact/config compatibility failure; the CLI maps this to exit code 3.
struct HashMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Writes content via a producer into a temp file, then renames onto `path`.
void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& producer);

std::uint64_t hash_file(const std::string& path);  // FNV-1a over file bytes
std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ULL);

std::string read_file(const std::string& path);

}  // namespace pam

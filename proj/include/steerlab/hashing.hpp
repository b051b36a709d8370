#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace steerlab {

/// 64-bit FNV-1a. Used for provenance fingerprints and per-stratum seeds; not
/// a cryptographic hash.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Fixed-width lowercase hex, 16 characters.
std::string hex64(std::uint64_t value);

/// Fingerprint of a file's bytes, as hex64(fnv1a64(contents)).
std::string file_fingerprint(const std::string& path);

} // namespace steerlab

#pragma once

#include <string>

#include "spear/value.hpp"

namespace spear {

// 16-hex-character truncated SHA-256 digest of a byte string.
std::string sha256_hex16(const std::string& bytes);

// Content hash of a prompt body: canonical serialization of (text, params)
// with params sorted by name, then truncated SHA-256. Identical inputs yield
// identical digests on every platform.
std::string version_hash(const std::string& text, const Value& params);

// Canonical serialization used by version_hash; also the CREATE payload form.
std::string canonical_body(const std::string& text, const Value& params);

}  // namespace spear

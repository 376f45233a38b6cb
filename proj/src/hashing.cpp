#include "spear/hashing.hpp"

#include <openssl/sha.h>

#include <array>

namespace spear {

std::string sha256_hex16(const std::string& bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest.data());
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(16);
  for (int i = 0; i < 8; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string canonical_body(const std::string& text, const Value& params) {
  Value body = Value::object();
  body["params"] = params.is_null() ? Value::object() : params;
  body["text"] = text;
  return body.dump();  // object keys serialize sorted
}

std::string version_hash(const std::string& text, const Value& params) {
  return sha256_hex16(canonical_body(text, params));
}

}  // namespace spear

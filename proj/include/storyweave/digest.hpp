#pragma once

// SHA-256 and base64 on top of OpenSSL libcrypto.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "storyweave/errors.hpp"
#include "storyweave/files.hpp"

namespace storyweave {

using Sha256Digest = std::array<std::uint8_t, SHA256_DIGEST_LENGTH>;

inline Sha256Digest sha256(std::span<const std::uint8_t> data) {
  Sha256Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw Error("SHA-256 computation failed");
  return out;
}

inline Sha256Digest sha256(std::string_view text) { return sha256(as_bytes(text)); }

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

/// First `digits` lowercase hex characters of the SHA-256 of `data`.
inline std::string sha256_hex_prefix(std::span<const std::uint8_t> data, std::size_t digits) {
  return to_hex(sha256(data)).substr(0, digits);
}

/// Standard alphabet with padding.
inline std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw CorruptFileError("base64 length is not a multiple of 4");
  Bytes out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw CorruptFileError("invalid base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock counts padding as zero bytes.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

}  // namespace storyweave

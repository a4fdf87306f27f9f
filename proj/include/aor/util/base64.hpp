#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aor::util {

class Base64Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string base64_encode(const std::uint8_t* data, std::size_t size);
inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  return base64_encode(bytes.data(), bytes.size());
}
/// Standard alphabet with padding; whitespace is not accepted.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace aor::util

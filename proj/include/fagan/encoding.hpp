#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fagan {

std::string sha256_hex(std::string_view data);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws Error on malformed input. Whitespace is ignored.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace fagan

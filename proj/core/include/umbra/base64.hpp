#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace umbra::base64 {

std::string encode(std::span<const std::uint8_t> bytes);
/// Strict RFC 4648 decoding (padding required); returns nullopt on malformed input.
std::optional<std::vector<std::uint8_t>> decode(std::string_view text);

}  // namespace umbra::base64

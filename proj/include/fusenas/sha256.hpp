#pragma once

#include <string>
#include <string_view>

namespace fusenas {

// FIPS 180-4 SHA-256; returns the lowercase hex digest.
std::string sha256_hex(std::string_view data);

}  // namespace fusenas

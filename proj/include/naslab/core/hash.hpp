#pragma once

#include <span>
#include <string>
#include <string_view>

#include "naslab/core/dataset.hpp"

namespace naslab {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

/// Content hash over shapes, pixel values and labels.
std::string fingerprint(const Dataset& data);
std::string fingerprint(const DataSplit& split);

}  // namespace naslab

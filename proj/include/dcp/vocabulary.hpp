#pragma once

#include <string>
#include <vector>

namespace dcp {

/// First `n` entries (n <= 64) of a fixed list of everyday category names.
std::vector<std::string> default_vocabulary(std::size_t n);

/// One name per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> read_name_list(const std::string& path);

}  // namespace dcp

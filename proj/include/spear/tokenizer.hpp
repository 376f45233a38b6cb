#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace spear {

// Shared tokenizer for the prefix cache and the cost model: lowercase,
// split on whitespace and punctuation boundaries. A token is a maximal run
// of [a-z0-9_] after lowercasing; everything else separates.
std::vector<std::string> tokenize(std::string_view text);

std::size_t token_count(std::string_view text);

// Longest common prefix length of two token sequences.
std::size_t common_prefix_len(const std::vector<std::string>& a,
                              const std::vector<std::string>& b);

}  // namespace spear

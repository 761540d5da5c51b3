#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace convo {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Splits on runs of spaces and tabs (TREC-style whitespace columns).
std::vector<std::string> split_ws(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Fixed-notation formatting used wherever scores land in text artifacts.
std::string format_fixed(double value, int decimals = 6);

std::string sha256_hex(std::string_view data);

}  // namespace convo

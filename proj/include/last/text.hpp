#pragma once

#include <string>
#include <vector>

namespace last {

// Shortest-round-trip decimal form of v (same digits every run).
std::string fmt_real(double v);

std::string trim(const std::string& s);
std::vector<std::string> split_list(const std::string& s, char sep);

// Accepts plain decimals and "a/b" fractions (e.g. "8/255").
double parse_real(const std::string& s);

bool parse_bool(const std::string& s);

}  // namespace last

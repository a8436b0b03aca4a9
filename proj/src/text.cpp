#include "last/text.hpp"

#include <json.hpp>

#include "last/errors.hpp"

namespace last {

std::string fmt_real(double v) { return nlohmann::json(v).dump(); }

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

double parse_real(const std::string& raw) {
  std::string s = trim(raw);
  try {
    auto slash = s.find('/');
    if (slash != std::string::npos) {
      std::size_t used = 0;
      double num = std::stod(s.substr(0, slash), &used);
      if (used != slash) throw ValueError("");
      std::string den_s = s.substr(slash + 1);
      double den = std::stod(den_s, &used);
      if (used != den_s.size() || den == 0) throw ValueError("");
      return num / den;
    }
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw ValueError("");
    return v;
  } catch (const std::exception&) {
    throw ValueError("cannot parse number '" + raw + "'");
  }
}

bool parse_bool(const std::string& raw) {
  std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ValueError("cannot parse boolean '" + raw + "'");
}

}  // namespace last

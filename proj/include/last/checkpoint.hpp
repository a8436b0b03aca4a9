#pragma once

#include <map>
#include <string>

#include "last/net.hpp"

namespace last {

inline constexpr int kCheckpointVersion = 1;

// On disk: magic "LASTCKPT", one version byte, 4-byte little-endian header
// length, key=value header text, then the parameter blob as little-endian
// IEEE-754 floats in layout order. Round-trips are bit-exact.
struct Checkpoint {
  int format_version = kCheckpointVersion;
  NetworkSpec spec;
  std::string dtype = dtype_tag();
  ParamVector params;
  std::map<std::string, std::string> metadata;  // seed, epoch, mode, gamma, mu, tau, ...
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace last

#include "last/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace last {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_real_le(std::string& out, real v) {
  if constexpr (sizeof(real) == 8) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
  } else {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
  }
}

real get_real_le(const unsigned char* p) {
  if constexpr (sizeof(real) == 8) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    real v;
    std::memcpy(&v, &bits, 8);
    return v;
  } else {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
    real v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ckpt.params.check_layout();
  if (ckpt.params.size() != ckpt.spec.param_count()) {
    throw SpecMismatchError("save_checkpoint: params hold " + std::to_string(ckpt.params.size()) +
                            " values, spec needs " + std::to_string(ckpt.spec.param_count()));
  }

  std::string header;
  header += "input_dim = " + std::to_string(ckpt.spec.input_dim) + "\n";
  header += "hidden = " + join_sizes(ckpt.spec.hidden) + "\n";
  header += "num_classes = " + std::to_string(ckpt.spec.num_classes) + "\n";
  header += "dtype = " + ckpt.dtype + "\n";
  header += "param_count = " + std::to_string(ckpt.params.size()) + "\n";
  for (const auto& [k, v] : ckpt.metadata) header += "meta." + k + " = " + v + "\n";

  std::string out(kMagic, sizeof(kMagic));
  out.push_back(char(ckpt.format_version));
  put_u32_le(out, std::uint32_t(header.size()));
  out += header;
  for (real v : ckpt.params.values.data) put_real_le(out, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + 5) throw TruncatedError("load_checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw BadMagicError("load_checkpoint: bad magic in " + path);
  }
  int version = int(static_cast<unsigned char>(bytes[8]));
  if (version != kCheckpointVersion) {
    throw VersionError("load_checkpoint: format version " + std::to_string(version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  }
  std::uint32_t header_len = 0;
  for (int i = 3; i >= 0; --i) {
    header_len = (header_len << 8) | static_cast<unsigned char>(bytes[9 + i]);
  }
  std::size_t header_start = 13;
  if (bytes.size() < header_start + header_len) {
    throw TruncatedError("load_checkpoint: truncated header");
  }

  Checkpoint ckpt;
  ckpt.format_version = version;
  std::size_t declared_count = 0;
  bool have_count = false;
  {
    std::stringstream hs(bytes.substr(header_start, header_len));
    std::string line;
    while (std::getline(hs, line)) {
      if (line.empty()) continue;
      auto eq = line.find(" = ");
      if (eq == std::string::npos) throw FormatError("load_checkpoint: malformed header line '" + line + "'");
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 3);
      if (key == "input_dim") ckpt.spec.input_dim = std::stoull(val);
      else if (key == "hidden") ckpt.spec.hidden = parse_sizes(val);
      else if (key == "num_classes") ckpt.spec.num_classes = std::stoull(val);
      else if (key == "dtype") ckpt.dtype = val;
      else if (key == "param_count") { declared_count = std::stoull(val); have_count = true; }
      else if (key.rfind("meta.", 0) == 0) ckpt.metadata[key.substr(5)] = val;
      else throw FormatError("load_checkpoint: unknown header key '" + key + "'");
    }
  }
  if (!have_count) throw FormatError("load_checkpoint: header missing param_count");
  if (ckpt.dtype != dtype_tag()) {
    throw SpecMismatchError("load_checkpoint: dtype " + ckpt.dtype + ", this build is " +
                            dtype_tag());
  }
  ckpt.spec.validate();
  if (declared_count != ckpt.spec.param_count()) {
    throw SpecMismatchError("load_checkpoint: param_count " + std::to_string(declared_count) +
                            " does not match spec (" + std::to_string(ckpt.spec.param_count()) +
                            ")");
  }

  std::size_t blob_start = header_start + header_len;
  std::size_t blob_len = bytes.size() - blob_start;
  if (blob_len != declared_count * sizeof(real)) {
    throw TruncatedError("load_checkpoint: blob holds " + std::to_string(blob_len) +
                         " bytes, expected " + std::to_string(declared_count * sizeof(real)));
  }

  ckpt.params.values = Tensor::zeros({declared_count});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + blob_start);
  for (std::size_t i = 0; i < declared_count; ++i) {
    ckpt.params.values.data[i] = get_real_le(p + i * sizeof(real));
  }
  // rebuild the layout from the spec
  ckpt.params.layout = param_layout(ckpt.spec);
  ckpt.params.check_layout();
  return ckpt;
}

}  // namespace last

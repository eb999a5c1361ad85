#include "globaltrack/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gt {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is) {
  const uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::ifstream open_checked(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[16];
  is.read(magic, 16);
  if (!is || std::memcmp(magic, CheckpointCodec::kMagic, 16) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(is);
  if (version != CheckpointCodec::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  return is;
}

}  // namespace

void CheckpointCodec::save(const std::string& path, const ParamStore& params,
                           const std::string& config_echo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 16);
  write_u32(os, kVersion);
  write_string(os, config_echo);
  write_u32(os, static_cast<uint32_t>(params.all().size()));
  for (const auto& p : params.all()) {
    write_string(os, p->name);
    write_u32(os, static_cast<uint32_t>(p->value.ndim()));
    for (size_t d = 0; d < p->value.ndim(); ++d)
      write_u32(os, static_cast<uint32_t>(p->value.dim(d)));
    for (int64_t i = 0; i < p->value.numel(); ++i)
      write_f32(os, static_cast<float>(p->value[i]));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

void CheckpointCodec::load(const std::string& path, ParamStore& params) {
  std::ifstream is = open_checked(path);
  (void)read_string(is);  // config echo
  const uint32_t count = read_u32(is);
  if (count != params.all().size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(is);
    ad::Var p;
    try {
      p = params.find(name);
    } catch (const std::out_of_range&) {
      throw std::runtime_error("checkpoint: unknown parameter " + name);
    }
    const uint32_t ndim = read_u32(is);
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = read_u32(is);
    if (shape != p->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    for (int64_t j = 0; j < p->value.numel(); ++j) p->value[j] = read_f32(is);
  }
}

std::string CheckpointCodec::read_config_echo(const std::string& path) {
  std::ifstream is = open_checked(path);
  return read_string(is);
}

}  // namespace gt

#include "glann/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "glann/errors.hpp"

namespace glann {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'C', 'K'};

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

class Reader {
 public:
  Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}

  void need(size_t k) const {
    if (pos_ + k > n_)
      throw FormatError("checkpoint truncated: need " + std::to_string(k) + " bytes at offset " +
                        std::to_string(pos_) + ", file has " + std::to_string(n_));
  }
  uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p_[pos_] | (p_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
    pos_ += k;
    return s;
  }
  size_t pos() const { return pos_; }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

uint32_t crc_of(const uint8_t* p, size_t n) {
  return static_cast<uint32_t>(crc32(0L, p, static_cast<uInt>(n)));
}

}  // namespace

void Checkpoint::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : tensors_)
    if (n == name) throw ArgumentError("checkpoint: duplicate tensor name '" + name + "'");
  tensors_.emplace_back(name, std::move(t));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : tensors_)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw MissingTensorError("checkpoint: tensor '" + name + "' not found");
}

std::vector<uint8_t> Checkpoint::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u64(out, static_cast<uint64_t>(epoch));
  put_u32(out, static_cast<uint32_t>(config_json.size()));
  out.insert(out.end(), config_json.begin(), config_json.end());
  put_u32(out, static_cast<uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u8(out, 0);  // dtype f32
    put_u8(out, static_cast<uint8_t>(t.ndim()));
    for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    for (int64_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 4)
    throw FormatError("checkpoint too short: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "bad checkpoint magic: %02x %02x %02x %02x", bytes[0],
                  bytes[1], bytes[2], bytes[3]);
    throw FormatError(buf);
  }
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  uint32_t actual = crc_of(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual)
    throw ChecksumError("checkpoint checksum mismatch: stored " + std::to_string(stored_crc) +
                        ", computed " + std::to_string(actual));

  Reader r(bytes.data(), bytes.size() - 4);
  r.str(4);  // magic
  uint32_t version = r.u32();
  if (version != kVersion)
    throw VersionError("checkpoint version " + std::to_string(version) +
                       " not supported; this reader handles version " + std::to_string(kVersion));
  Checkpoint c;
  c.epoch = static_cast<int64_t>(r.u64());
  uint32_t cfg_len = r.u32();
  c.config_json = r.str(cfg_len);
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    uint8_t dtype = r.u8();
    if (dtype != 0)
      throw FormatError("checkpoint tensor '" + name + "': unsupported dtype " +
                        std::to_string(dtype));
    uint8_t ndim = r.u8();
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = static_cast<int64_t>(r.u64());
    Tensor t(shape);
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = r.f32();
    c.tensors_.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

void Checkpoint::save(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("short write to checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cannot open checkpoint: " + path);
  auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<uint8_t> bytes(size);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!f) throw FormatError("short read from checkpoint: " + path);
  return deserialize(bytes);
}

}  // namespace glann

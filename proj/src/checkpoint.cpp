#include "kwd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace kwd {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

void put_u32le(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64le(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::uint8_t* p;
  std::size_t left;

  void need(std::size_t n) const {
    if (n > left) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint8_t u8() {
    need(1);
    --left;
    return *p++;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

std::uint64_t double_bits(double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  return v;
}

double bits_double(std::uint64_t v) {
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
  CkptRecord r;
  r.name = name;
  r.dtype = 0;
  r.dims.assign(t.shape.begin(), t.shape.end());
  r.raw.reserve(t.data.size() * 8);
  for (double d : t.data) put_u64le(r.raw, double_bits(d));
  records.push_back(std::move(r));
}

void Checkpoint::put_u64(const std::string& name, std::uint64_t v) {
  CkptRecord r;
  r.name = name;
  r.dtype = 1;
  put_u64le(r.raw, v);
  records.push_back(std::move(r));
}

void Checkpoint::put_string(const std::string& name, const std::string& s) {
  CkptRecord r;
  r.name = name;
  r.dtype = 2;
  r.dims = {s.size()};
  r.raw.assign(s.begin(), s.end());
  records.push_back(std::move(r));
}

void Checkpoint::put_f64_vector(const std::string& name, const std::vector<double>& v) {
  Tensor t({v.size()}, v);
  put_tensor(name, t);
}

const CkptRecord* Checkpoint::find(const std::string& name) const {
  for (const CkptRecord& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

static const CkptRecord& require(const Checkpoint& c, const std::string& name, std::uint8_t dtype) {
  const CkptRecord* r = c.find(name);
  if (!r) throw std::runtime_error("checkpoint: unknown parameter name '" + name + "'");
  if (r->dtype != dtype) throw std::runtime_error("checkpoint: record '" + name + "' has unexpected dtype");
  return *r;
}

Tensor Checkpoint::get_tensor(const std::string& name) const {
  const CkptRecord& r = require(*this, name, 0);
  std::vector<std::size_t> shape(r.dims.begin(), r.dims.end());
  Tensor t(shape);
  if (r.raw.size() != t.numel() * 8) throw std::runtime_error("checkpoint: record '" + name + "' size mismatch");
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(r.raw[i * 8 + b]) << (8 * b);
    t.data[i] = bits_double(v);
  }
  return t;
}

std::uint64_t Checkpoint::get_u64(const std::string& name) const {
  const CkptRecord& r = require(*this, name, 1);
  if (r.raw.size() != 8) throw std::runtime_error("checkpoint: record '" + name + "' size mismatch");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(r.raw[b]) << (8 * b);
  return v;
}

std::string Checkpoint::get_string(const std::string& name) const {
  const CkptRecord& r = require(*this, name, 2);
  return std::string(r.raw.begin(), r.raw.end());
}

std::vector<double> Checkpoint::get_f64_vector(const std::string& name) const {
  return get_tensor(name).data;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::vector<std::uint8_t> payload;
  put_u32le(payload, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const CkptRecord& r : ckpt.records) {
    put_u32le(payload, static_cast<std::uint32_t>(r.name.size()));
    payload.insert(payload.end(), r.name.begin(), r.name.end());
    payload.push_back(r.dtype);
    payload.push_back(static_cast<std::uint8_t>(r.dims.size()));
    for (std::uint64_t d : r.dims) put_u64le(payload, d);
    put_u64le(payload, r.raw.size());
    payload.insert(payload.end(), r.raw.begin(), r.raw.end());
  }

  std::vector<std::uint8_t> head;
  head.push_back('K');
  head.push_back('W');
  head.push_back('D');
  head.push_back('C');
  put_u32le(head, Checkpoint::kVersion);
  put_u64le(head, fnv1a64(payload.data(), payload.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader rd{bytes.data(), bytes.size()};
  char magic[4];
  rd.bytes(magic, 4);
  if (std::memcmp(magic, "KWDC", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = rd.u32();
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: version mismatch, file has v" + std::to_string(version) +
                             ", expected v" + std::to_string(Checkpoint::kVersion));
  const std::uint64_t checksum = rd.u64();
  if (fnv1a64(rd.p, rd.left) != checksum) throw std::runtime_error("checkpoint: payload checksum mismatch");

  Checkpoint ckpt;
  const std::uint32_t count = rd.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CkptRecord r;
    const std::uint32_t name_len = rd.u32();
    r.name.resize(name_len);
    rd.bytes(r.name.data(), name_len);
    r.dtype = rd.u8();
    if (r.dtype > 2) throw std::runtime_error("checkpoint: record '" + r.name + "' has unknown dtype");
    const std::uint8_t rank = rd.u8();
    r.dims.resize(rank);
    for (std::uint8_t d = 0; d < rank; ++d) r.dims[d] = rd.u64();
    const std::uint64_t raw_len = rd.u64();
    r.raw.resize(raw_len);
    rd.bytes(r.raw.data(), raw_len);
    ckpt.records.push_back(std::move(r));
  }
  if (rd.left != 0) throw std::runtime_error("checkpoint: trailing bytes after records");
  return ckpt;
}

}  // namespace kwd

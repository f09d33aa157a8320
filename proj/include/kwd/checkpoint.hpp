#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwd/tensor.hpp"

namespace kwd {

// Little-endian container: magic "KWDC", u32 version, u64 FNV-1a checksum of
// the payload, then named records (u32 name length, name bytes, u8 dtype,
// u8 rank, u64 dims..., raw values).
struct CkptRecord {
  std::string name;
  std::uint8_t dtype = 0;  // 0 = f64 tensor, 1 = u64 scalar, 2 = raw bytes
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> raw;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::vector<CkptRecord> records;

  void put_tensor(const std::string& name, const Tensor& t);
  void put_u64(const std::string& name, std::uint64_t v);
  void put_string(const std::string& name, const std::string& s);
  void put_f64_vector(const std::string& name, const std::vector<double>& v);

  const CkptRecord* find(const std::string& name) const;
  Tensor get_tensor(const std::string& name) const;
  std::uint64_t get_u64(const std::string& name) const;
  std::string get_string(const std::string& name) const;
  std::vector<double> get_f64_vector(const std::string& name) const;
};

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

}  // namespace kwd

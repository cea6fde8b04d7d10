#pragma once

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "savp/tensor.hpp"

namespace savp {

// Binary record layer shared by the dataset (SVPD) and checkpoint (SVPC)
// formats: length-prefixed named tensor records with little-endian payloads.

namespace io {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  SAVP_CHECK(os.good(), "io: write failed");
}

template <class T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_bytes(os, &v, sizeof(T));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  SAVP_CHECK(is.gcount() == static_cast<std::streamsize>(n) && !is.fail(),
             "io: unexpected end of file (truncated or corrupt)");
}

template <class T>
T read_pod(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

inline std::string read_string(std::istream& is) {
  uint32_t n = read_pod<uint32_t>(is);
  SAVP_CHECK(n < (1u << 28), "io: implausible string length ", n);
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n);
  return s;
}

template <class T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensor records support f32 and f64 only");
  return std::is_same_v<T, float> ? 0 : 1;
}

inline const char* dtype_name(uint8_t code) { return code == 0 ? "f32" : "f64"; }

}  // namespace io

template <class T>
void write_tensor_record(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  uint64_t payload = 4 + name.size() + 1 + 4 + 4 * t.shape().size() +
                     static_cast<uint64_t>(t.size()) * sizeof(T);
  io::write_pod<uint64_t>(os, payload);
  io::write_string(os, name);
  io::write_pod<uint8_t>(os, io::dtype_code<T>());
  io::write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
  for (int64_t e : t.shape()) io::write_pod<uint32_t>(os, static_cast<uint32_t>(e));
  io::write_bytes(os, t.data(), static_cast<size_t>(t.size()) * sizeof(T));
}

struct RawTensorRecord {
  std::string name;
  uint8_t dtype = 0;
  Shape shape;
  std::vector<unsigned char> raw;

  template <class T>
  Tensor<T> as() const {
    SAVP_CHECK(dtype == io::dtype_code<T>(), "tensor record '", name, "' has dtype ",
               io::dtype_name(dtype), ", requested ", io::dtype_name(io::dtype_code<T>()));
    int64_t n = numel(shape);
    SAVP_CHECK(raw.size() == static_cast<size_t>(n) * sizeof(T), "tensor record '", name,
               "': payload size mismatch");
    std::vector<T> vals(n);
    std::memcpy(vals.data(), raw.data(), raw.size());
    return Tensor<T>::from_values(shape, std::move(vals));
  }
};

inline RawTensorRecord read_tensor_record(std::istream& is) {
  uint64_t payload = io::read_pod<uint64_t>(is);
  RawTensorRecord rec;
  rec.name = io::read_string(is);
  rec.dtype = io::read_pod<uint8_t>(is);
  uint32_t rank = io::read_pod<uint32_t>(is);
  SAVP_CHECK(rank <= 8, "tensor record '", rec.name, "': implausible rank ", rank);
  for (uint32_t i = 0; i < rank; ++i)
    rec.shape.push_back(static_cast<int64_t>(io::read_pod<uint32_t>(is)));
  uint64_t header = 4 + rec.name.size() + 1 + 4 + 4ull * rank;
  SAVP_CHECK(payload >= header, "tensor record '", rec.name, "': bad record length");
  uint64_t data_bytes = payload - header;
  size_t elem = rec.dtype == 0 ? sizeof(float) : sizeof(double);
  SAVP_CHECK(data_bytes == static_cast<uint64_t>(numel(rec.shape)) * elem,
             "tensor record '", rec.name, "': length does not match extents");
  rec.raw.resize(data_bytes);
  if (data_bytes) io::read_bytes(is, rec.raw.data(), data_bytes);
  return rec;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  SAVP_CHECK(os.is_open(), "cannot open '", path, "' for writing");
  return os;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  SAVP_CHECK(is.is_open(), "cannot open '", path, "' for reading");
  return is;
}

inline void expect_magic(std::istream& is, const char magic[4], const char* what) {
  char buf[4];
  io::read_bytes(is, buf, 4);
  SAVP_CHECK(std::memcmp(buf, magic, 4) == 0, what, ": bad magic (not a ", magic,
             " file)");
}

}  // namespace savp

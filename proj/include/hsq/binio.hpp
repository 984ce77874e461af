#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hsq/errors.hpp"
#include "hsq/matrix.hpp"

namespace hsq::detail {

// All on-disk integers and floats are little-endian; this library targets
// little-endian hosts and writes native bytes.
static_assert(std::endian::native == std::endian::little,
              "binary formats are defined little-endian");

template <typename U>
void write_pod(std::ostream& os, const U& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::string& ctx) {
  U v;
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is || is.gcount() != static_cast<std::streamsize>(sizeof(U))) {
    throw IoError(IoErrorKind::truncated, ctx + ": unexpected end of file");
  }
  return v;
}

inline void write_bytes(std::ostream& os, const char* p, std::size_t n) {
  os.write(p, static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, char* p, std::size_t n,
                       const std::string& ctx) {
  is.read(p, static_cast<std::streamsize>(n));
  if (!is || is.gcount() != static_cast<std::streamsize>(n)) {
    throw IoError(IoErrorKind::truncated, ctx + ": unexpected end of file");
  }
}

// Payloads are stored as float32 regardless of the in-memory scalar, so a
// save/load/save cycle is byte-stable (float -> double -> float is exact).
template <typename T>
void write_f32_payload(std::ostream& os, const Matrix<T>& m) {
  std::vector<float> buf(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const T* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) buf[j] = static_cast<float>(row[j]);
    write_bytes(os, reinterpret_cast<const char*>(buf.data()),
                buf.size() * sizeof(float));
  }
}

template <typename T>
void read_f32_payload(std::istream& is, Matrix<T>& m, const std::string& ctx) {
  std::vector<float> buf(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    read_bytes(is, reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float),
               ctx);
    T* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] = static_cast<T>(buf[j]);
  }
}

inline void expect_end_of_file(std::istream& is, const std::string& ctx) {
  char dummy;
  is.read(&dummy, 1);
  if (!is.eof()) {
    throw IoError(IoErrorKind::malformed, ctx + ": trailing bytes after payload");
  }
}

}  // namespace hsq::detail

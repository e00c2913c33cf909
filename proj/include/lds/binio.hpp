#pragma once

// Raw little-endian float64 blobs.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"

namespace lds {

inline void write_f64_blob(const std::string& path, const double* data, std::size_t count) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t u;
      std::memcpy(&u, data + i, sizeof u);
      u = __builtin_bswap64(u);
      os.write(reinterpret_cast<const char*>(&u), sizeof u);
    }
  }
  if (!os) throw FormatError("write failed for '" + path + "'");
}

inline std::vector<double> read_f64_blob(const std::string& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot open '" + path + "'");
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != count * sizeof(double))
    throw FormatError(path + ": expected " + std::to_string(count) + " float64 values, file has " +
                      std::to_string(bytes) + " bytes");
  is.seekg(0);
  std::vector<double> v(count);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw FormatError("read failed for '" + path + "'");
  if constexpr (std::endian::native != std::endian::little) {
    for (double& d : v) {
      std::uint64_t u;
      std::memcpy(&u, &d, sizeof u);
      u = __builtin_bswap64(u);
      std::memcpy(&d, &u, sizeof u);
    }
  }
  return v;
}

inline void write_matrix_blob(const std::string& path, const DenseMatrix& m) {
  write_f64_blob(path, m.data(), m.size());
}

inline DenseMatrix read_matrix_blob(const std::string& path, std::size_t rows, std::size_t cols) {
  return DenseMatrix(rows, cols, read_f64_blob(path, rows * cols));
}

}  // namespace lds

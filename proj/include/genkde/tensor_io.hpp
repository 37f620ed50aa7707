#pragma once

// SampleSet serialization.
//
// CSV: one sample per line, comma separated, no header.
// Binary: "GKDE" | u32 version (=1) | u32 rows | u32 cols | rows*cols f64,
// all little-endian, row-major.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "genkde/density.hpp"

namespace genkde {

class IoError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("tensor: truncated input");
  return to_little(v);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline constexpr std::array<char, 4> kTensorMagic{'G', 'K', 'D', 'E'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline void write_tensor(std::ostream& os, const Matrix& m) {
  os.write(kTensorMagic.data(), 4);
  detail::put<std::uint32_t>(os, kTensorVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) detail::put<double>(os, m.data()[i]);
}

inline Matrix read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kTensorMagic) throw IoError("tensor: bad magic");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kTensorVersion) throw IoError("tensor: unsupported version " + std::to_string(version));
  const auto rows = detail::get<std::uint32_t>(is);
  const auto cols = detail::get<std::uint32_t>(is);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double v = detail::get<double>(is);
    if (!std::isfinite(v)) throw IoError("tensor: non-finite value");
    m.data()[i] = v;
  }
  return m;
}

inline void write_csv(std::ostream& os, const Matrix& m) {
  os << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ',';
      os << m(r, c);
    }
    os << '\n';
  }
}

inline Matrix read_csv(std::istream& is) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(is, line)) {
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos <= body.size()) {
      const auto comma = body.find(',', pos);
      const auto field = detail::trim(body.substr(pos, comma == std::string_view::npos ? body.npos : comma - pos));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size())
        throw IoError("csv: cannot parse '" + std::string(field) + "' on line " + std::to_string(rows + 1));
      if (!std::isfinite(v)) throw IoError("csv: non-finite value on line " + std::to_string(rows + 1));
      values.push_back(v);
      ++n;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw IoError("csv: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

enum class Format { csv, binary };

/// Detects the binary container by its magic bytes; anything else is CSV.
inline Matrix read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> head{};
  in.read(head.data(), 4);
  const bool binary = in.gcount() == 4 && head == kTensorMagic;
  in.clear();
  in.seekg(0);
  return binary ? read_tensor(in) : read_csv(in);
}

inline SampleSet read_samples(const std::filesystem::path& path) {
  auto m = read_matrix_file(path);
  if (m.rows() == 0) throw IoError(path.string() + ": no samples");
  return SampleSet(std::move(m));
}

/// Writes through a temporary file in the same directory, then renames it
/// over the destination.
template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& writer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    writer(out);
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_matrix_file(const std::filesystem::path& path, const Matrix& m, Format fmt) {
  write_atomically(path, [&](std::ostream& os) {
    if (fmt == Format::binary)
      write_tensor(os, m);
    else
      write_csv(os, m);
  });
}

}  // namespace genkde

#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "substadj/core_model.hpp"
#include "substadj/diagnostics.hpp"
#include "substadj/error.hpp"
#include "substadj/recover.hpp"

namespace substadj {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::ParseError, "not a number: '" + std::string(s) + "'");
  return x;
}

inline long parse_int(std::string_view s) {
  long x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::ParseError, "not an integer: '" + std::string(s) + "'");
  return x;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

/// First line of every CSV the tool writes.
inline std::string csv_comment_header(std::string_view config_digest) {
  return "# substadj " + std::string(kToolVersion) + " config_digest=" + std::string(config_digest) + "\n";
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Joins fields with commas and a trailing newline.
inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t j = 0; j < fields.size(); ++j) {
    if (j) s += ',';
    s += fields[j];
  }
  s += '\n';
  return s;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Header x1..xp[,y][,z_true]; one row per sample.
inline void write_dataset_csv(std::ostream& os, const LabeledDataset& d, std::string_view digest = "") {
  if (!digest.empty()) os << csv_comment_header(digest);
  const auto p = d.p();
  std::vector<std::string> head;
  for (Eigen::Index i = 0; i < p; ++i) head.push_back("x" + std::to_string(i + 1));
  if (d.y) head.push_back("y");
  if (d.z_true) head.push_back("z_true");
  os << csv_row(head);
  for (Eigen::Index k = 0; k < d.n(); ++k) {
    std::vector<std::string> row;
    row.reserve(head.size());
    for (Eigen::Index i = 0; i < p; ++i) row.push_back(format_double(d.X(k, i)));
    if (d.y) row.push_back(format_double((*d.y)(k)));
    if (d.z_true) row.push_back(std::to_string((*d.z_true)[k]));
    os << csv_row(row);
  }
}

inline LabeledDataset read_dataset_csv(std::istream& is) {
  std::string line;
  do {
    if (!std::getline(is, line)) throw Error(ErrorCode::ParseError, "dataset CSV has no header");
  } while (!line.empty() && line[0] == '#');
  const auto head = split_csv_line(line);
  int p = 0;
  bool has_y = false, has_z = false;
  for (std::size_t j = 0; j < head.size(); ++j) {
    if (head[j] == "x" + std::to_string(p + 1) && !has_y && !has_z)
      ++p;
    else if (head[j] == "y" && !has_y && !has_z)
      has_y = true;
    else if (head[j] == "z_true" && !has_z)
      has_z = true;
    else
      throw Error(ErrorCode::ParseError, "unexpected dataset column '" + std::string(head[j]) + "'");
  }
  std::vector<double> xs, ys;
  Labels zs;
  long n = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv_line(line);
    if (f.size() != head.size())
      throw Error(ErrorCode::ParseError, "row " + std::to_string(n + 1) + " has the wrong number of fields");
    for (int i = 0; i < p; ++i) xs.push_back(parse_double(f[i]));
    if (has_y) ys.push_back(parse_double(f[p]));
    if (has_z) zs.push_back(static_cast<int>(parse_int(f[p + (has_y ? 1 : 0)])));
    ++n;
  }
  LabeledDataset d;
  d.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xs.data(), n, p);
  if (has_y) d.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), n);
  if (has_z) d.z_true = std::move(zs);
  return d;
}

namespace detail {

inline constexpr char kCacheMagic[4] = {'S', 'A', 'D', 'J'};
inline constexpr std::uint32_t kCacheVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(ErrorCode::ParseError, "binary cache truncated");
  return v;
}

}  // namespace detail

/// Binary cache, host byte order: magic "SADJ", u32 version, u32 byte-order
/// mark, i64 n, i64 p, u8 has_y, u8 has_z, X column-major, y, z_true as i32.
inline void write_dataset_binary(std::ostream& os, const LabeledDataset& d) {
  os.write(detail::kCacheMagic, 4);
  detail::put<std::uint32_t>(os, detail::kCacheVersion);
  detail::put<std::uint32_t>(os, 0x01020304u);
  detail::put<std::int64_t>(os, d.n());
  detail::put<std::int64_t>(os, d.p());
  detail::put<std::uint8_t>(os, d.y ? 1 : 0);
  detail::put<std::uint8_t>(os, d.z_true ? 1 : 0);
  os.write(reinterpret_cast<const char*>(d.X.data()), static_cast<std::streamsize>(sizeof(double) * d.X.size()));
  if (d.y) os.write(reinterpret_cast<const char*>(d.y->data()), static_cast<std::streamsize>(sizeof(double) * d.y->size()));
  if (d.z_true)
    for (int z : *d.z_true) detail::put<std::int32_t>(os, z);
}

inline LabeledDataset read_dataset_binary(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCacheMagic, 4) != 0) throw Error(ErrorCode::ParseError, "not a dataset cache");
  if (detail::get<std::uint32_t>(is) != detail::kCacheVersion)
    throw Error(ErrorCode::ParseError, "unsupported cache version");
  if (detail::get<std::uint32_t>(is) != 0x01020304u) throw Error(ErrorCode::ParseError, "cache byte order differs");
  const auto n = detail::get<std::int64_t>(is);
  const auto p = detail::get<std::int64_t>(is);
  const bool has_y = detail::get<std::uint8_t>(is) != 0;
  const bool has_z = detail::get<std::uint8_t>(is) != 0;
  if (n < 0 || p < 0) throw Error(ErrorCode::ParseError, "negative dimensions in cache");
  LabeledDataset d;
  d.X.resize(n, p);
  is.read(reinterpret_cast<char*>(d.X.data()), static_cast<std::streamsize>(sizeof(double) * n * p));
  if (has_y) {
    Eigen::VectorXd y(n);
    is.read(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(sizeof(double) * n));
    d.y = std::move(y);
  }
  if (!is) throw Error(ErrorCode::ParseError, "binary cache truncated");
  if (has_z) {
    Labels z(static_cast<std::size_t>(n));
    for (auto& v : z) v = detail::get<std::int32_t>(is);
    d.z_true = std::move(z);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Assignments and curves
// ---------------------------------------------------------------------------

/// Columns k, z_true (when given), z_sub, min_distance; k is 1-based.
inline void write_assignment_csv(std::ostream& os, const Assignment& a, const Labels* z_true = nullptr,
                                 std::string_view digest = "") {
  if (!digest.empty()) os << csv_comment_header(digest);
  require(!z_true || z_true->size() == a.z_sub.size(), ErrorCode::LengthMismatch, "z_true length differs");
  os << (z_true ? "k,z_true,z_sub,min_distance\n" : "k,z_sub,min_distance\n");
  for (std::size_t k = 0; k < a.z_sub.size(); ++k) {
    std::vector<std::string> row{std::to_string(k + 1)};
    if (z_true) row.push_back(std::to_string((*z_true)[k]));
    row.push_back(std::to_string(a.z_sub[k]));
    row.push_back(format_double(a.min_distance(static_cast<int>(k))));
    os << csv_row(row);
  }
}

/// Columns i, mean_partial, var_partial, bc_product; i is 1-based.
inline void write_kakutani_curve_csv(std::ostream& os, const KakutaniReport& r, std::string_view digest = "") {
  if (!digest.empty()) os << csv_comment_header(digest);
  os << "i,mean_partial,var_partial,bc_product\n";
  for (std::size_t i = 0; i < r.mean_series_partial.size(); ++i)
    os << csv_row({std::to_string(i + 1), format_double(r.mean_series_partial[i]),
                   format_double(r.var_series_partial[i]), format_double(r.bc_products[i])});
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw Error(ErrorCode::InvalidArgument, "cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_input(const std::string& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error(ErrorCode::InvalidArgument, "cannot open '" + path + "'");
  return is;
}

inline std::string read_file(const std::string& path) {
  auto is = open_input(path, true);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace substadj

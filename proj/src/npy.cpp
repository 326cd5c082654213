#include "conceptkit/npy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <vector>

#include "conceptkit/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

namespace conceptkit {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

const char* descr(Dtype dtype) {
  switch (dtype) {
    case Dtype::float32: return "<f4";
    case Dtype::float64: return "<f8";
    case Dtype::uint8: return "|u1";
    case Dtype::int64: return "<i8";
  }
  return "";
}

std::size_t element_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::float32: return 4;
    case Dtype::float64: return 8;
    case Dtype::uint8: return 1;
    case Dtype::int64: return 8;
  }
  return 0;
}

std::string header_dict(Dtype dtype, std::int64_t rows, std::int64_t cols) {
  return "{'descr': '" + std::string(descr(dtype)) +
         "', 'fortran_order': False, 'shape': (" + std::to_string(rows) + ", " +
         std::to_string(cols) + "), }";
}

std::string build_header(Dtype dtype, std::int64_t rows, std::int64_t cols) {
  std::string dict = header_dict(dtype, rows, cols);
  // magic(6) + version(2) + len(2) + dict + '\n' padded to a multiple of 64
  const std::size_t unpadded = 10 + dict.size() + 1;
  const std::size_t total = (unpadded + 63) / 64 * 64;
  dict.append(total - unpadded, ' ');
  dict.push_back('\n');
  if (dict.size() > 0xFFFF) throw Error(ErrorKind::format, "NPY header too large");
  std::string out(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  const auto len = static_cast<std::uint16_t>(dict.size());
  out.push_back(static_cast<char>(len & 0xFF));
  out.push_back(static_cast<char>(len >> 8));
  out += dict;
  return out;
}

Dtype parse_descr(const std::string& d, const std::filesystem::path& path) {
  if (d == "<f8") return Dtype::float64;
  if (d == "<f4") return Dtype::float32;
  if (d == "|u1" || d == "<u1") return Dtype::uint8;
  if (d == "<i8") return Dtype::int64;
  throw Error(ErrorKind::format,
              "unsupported NPY dtype '" + d + "' in " + path.string());
}

std::vector<char> read_payload(const std::filesystem::path& path, const NpyHeader& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(h.data_offset));
  const std::size_t bytes =
      static_cast<std::size_t>(h.rows * h.cols) * element_size(h.dtype);
  std::vector<char> buf(bytes);
  in.read(buf.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    throw Error(ErrorKind::format, "truncated NPY payload in " + path.string());
  return buf;
}

template <typename T>
void write_file(const std::filesystem::path& path, Dtype dtype, std::int64_t rows,
                std::int64_t cols, const std::vector<T>& row_major) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  const std::string header = build_header(dtype, rows, cols);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(row_major.data()),
            static_cast<std::streamsize>(row_major.size() * sizeof(T)));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

template <typename T, typename Mat>
std::vector<T> to_row_major(const Mat& m) {
  std::vector<T> buf(static_cast<std::size_t>(m.size()));
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) buf[at++] = static_cast<T>(m(r, c));
  return buf;
}

template <typename T, typename Out>
void from_row_major(const std::vector<char>& buf, Out& m) {
  const auto* src = buf.data();
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c, at += sizeof(T)) {
      T v;
      std::memcpy(&v, src + at, sizeof(T));
      m(r, c) = static_cast<typename Out::Scalar>(v);
    }
}

}  // namespace

std::size_t npy_header_size(Dtype dtype, std::int64_t rows, std::int64_t cols) {
  return build_header(dtype, rows, cols).size();
}

NpyHeader read_npy_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  char pre[10] = {};
  in.read(pre, 10);
  if (in.gcount() < 10 || std::memcmp(pre, kMagic, kMagicLen) != 0)
    throw Error(ErrorKind::format, "not NPY: bad magic string in " + path.string());
  const auto major = static_cast<unsigned char>(pre[6]);
  std::size_t len = 0;
  std::size_t offset = 10;
  if (major == 1) {
    len = static_cast<unsigned char>(pre[8]) | (static_cast<unsigned char>(pre[9]) << 8);
  } else {
    throw Error(ErrorKind::format, "unsupported NPY version " + std::to_string(major) +
                                       " in " + path.string());
  }
  std::string dict(len, '\0');
  in.read(dict.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len)
    throw Error(ErrorKind::format, "not NPY: truncated header in " + path.string());

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  NpyHeader h;
  if (!std::regex_search(dict, m, descr_re))
    throw Error(ErrorKind::format, "not NPY: missing descr in " + path.string());
  h.dtype = parse_descr(m[1].str(), path);
  if (!std::regex_search(dict, m, fortran_re))
    throw Error(ErrorKind::format, "not NPY: missing fortran_order in " + path.string());
  if (m[1].str() == "True")
    throw Error(ErrorKind::format, "Fortran-order NPY not supported: " + path.string());
  if (!std::regex_search(dict, m, shape_re))
    throw Error(ErrorKind::format, "not NPY: missing shape in " + path.string());

  std::vector<std::int64_t> dims;
  const std::string shape = m[1].str();
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(shape.begin(), shape.end(), int_re);
       it != std::sregex_iterator(); ++it)
    dims.push_back(std::stoll(it->str()));
  if (dims.size() != 1 && dims.size() != 2)
    throw Error(ErrorKind::format, "expected a 2-D array, got " +
                                       std::to_string(dims.size()) + "-D in " +
                                       path.string());
  h.ndim = static_cast<int>(dims.size());
  h.rows = dims[0];
  h.cols = dims.size() == 2 ? dims[1] : 1;
  h.data_offset = offset + len;
  return h;
}

namespace {

NpyHeader require_2d(NpyHeader h, const std::filesystem::path& path) {
  if (h.ndim != 2)
    throw Error(ErrorKind::format, "expected a 2-D array, got 1-D in " + path.string());
  return h;
}

Matrix load_any(const std::filesystem::path& path, const NpyHeader& h) {
  const auto buf = read_payload(path, h);
  Matrix m(h.rows, h.cols);
  switch (h.dtype) {
    case Dtype::float64: from_row_major<double>(buf, m); break;
    case Dtype::float32: from_row_major<float>(buf, m); break;
    default:
      throw Error(ErrorKind::format,
                  "expected a floating-point NPY matrix in " + path.string());
  }
  return m;
}

}  // namespace

Matrix load_matrix(const std::filesystem::path& path) {
  return load_any(path, require_2d(read_npy_header(path), path));
}

void save_matrix(const Matrix& m, const std::filesystem::path& path, Dtype dtype) {
  if (!m.allFinite())
    throw Error(ErrorKind::invalid_argument,
                "refusing to save non-finite entries to " + path.string());
  switch (dtype) {
    case Dtype::float64:
      write_file(path, dtype, m.rows(), m.cols(), to_row_major<double>(m));
      break;
    case Dtype::float32:
      write_file(path, dtype, m.rows(), m.cols(), to_row_major<float>(m));
      break;
    default:
      throw Error(ErrorKind::invalid_argument, "save_matrix needs a float dtype");
  }
}

BinaryMatrix load_binary(const std::filesystem::path& path) {
  const NpyHeader h = require_2d(read_npy_header(path), path);
  if (h.dtype != Dtype::uint8)
    throw Error(ErrorKind::format, "expected uint8 NPY in " + path.string());
  const auto buf = read_payload(path, h);
  BinaryMatrix m(h.rows, h.cols);
  from_row_major<std::uint8_t>(buf, m);
  return m;
}

void save_binary(const BinaryMatrix& m, const std::filesystem::path& path) {
  write_file(path, Dtype::uint8, m.rows(), m.cols(), to_row_major<std::uint8_t>(m));
}

Eigen::MatrixX<std::int64_t> load_counts(const std::filesystem::path& path) {
  const NpyHeader h = require_2d(read_npy_header(path), path);
  if (h.dtype != Dtype::int64)
    throw Error(ErrorKind::format, "expected int64 NPY in " + path.string());
  const auto buf = read_payload(path, h);
  Eigen::MatrixX<std::int64_t> m(h.rows, h.cols);
  from_row_major<std::int64_t>(buf, m);
  return m;
}

void save_counts(const Eigen::MatrixX<std::int64_t>& m,
                 const std::filesystem::path& path) {
  write_file(path, Dtype::int64, m.rows(), m.cols(), to_row_major<std::int64_t>(m));
}

Vector load_vector(const std::filesystem::path& path) {
  const Matrix m = load_any(path, read_npy_header(path));
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw Error(ErrorKind::format, "expected an n x 1 or 1 x n array in " + path.string());
}

void save_vector(const Vector& v, const std::filesystem::path& path) {
  save_matrix(Matrix(v), path);
}

}  // namespace conceptkit

#pragma once

// Reader/writer for NumPy .npy v1.0 files holding 2-D, C-order,
// little-endian arrays. Matrices are exposed as column-major Eigen objects;
// conversion to and from the row-major file layout happens here.

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Core>

namespace conceptkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Dtype { float32, float64, uint8, int64 };

struct NpyHeader {
  Dtype dtype = Dtype::float64;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  int ndim = 2;  // 1-D arrays are read as rows x 1
  std::size_t data_offset = 0;  // bytes from file start to raw buffer
};

// Length of the full header (magic + version + length field + padded dict)
// that save_matrix writes for the given shape.
std::size_t npy_header_size(Dtype dtype, std::int64_t rows, std::int64_t cols);

// Accepts 1-D and 2-D shapes; the matrix loaders reject 1-D.
NpyHeader read_npy_header(const std::filesystem::path& path);

// float32 and float64 files are widened to double; the stored values are
// reproduced exactly.
Matrix load_matrix(const std::filesystem::path& path);

// Rejects NaN/Inf. With Dtype::float32 values are narrowed on write.
void save_matrix(const Matrix& m, const std::filesystem::path& path,
                 Dtype dtype = Dtype::float64);

BinaryMatrix load_binary(const std::filesystem::path& path);
void save_binary(const BinaryMatrix& m, const std::filesystem::path& path);

Eigen::MatrixX<std::int64_t> load_counts(const std::filesystem::path& path);
void save_counts(const Eigen::MatrixX<std::int64_t>& m,
                 const std::filesystem::path& path);

// Vectors are stored as n x 1 matrices; 1-D and 1 x n are accepted on load.
Vector load_vector(const std::filesystem::path& path);
void save_vector(const Vector& v, const std::filesystem::path& path);

}  // namespace conceptkit

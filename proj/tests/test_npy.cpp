#include <doctest.h>

#include <cstring>
#include <functional>
#include <limits>

#include "conceptkit/error.hpp"
#include "conceptkit/npy.hpp"
#include "helpers.hpp"

using namespace conceptkit;
namespace fs = std::filesystem;

namespace {

const fs::path kNpy = fs::path(CONCEPTKIT_FIXTURES) / "npy";

// Header length from the format description: 10 fixed bytes, the dict
// literal, a newline, padded with spaces to a multiple of 64.
std::size_t expected_header(const std::string& descr, std::int64_t r, std::int64_t c) {
  const std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" +
                           std::to_string(r) + ", " + std::to_string(c) + "), }";
  const std::size_t raw = 10 + dict.size() + 1;
  return (raw + 63) / 64 * 64;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("zero matrix loads with shape intact") {
  const auto dir = testing::scratch("npy_zero");
  save_matrix(Matrix::Zero(3, 4), dir / "z.npy");
  const Matrix m = load_matrix(dir / "z.npy");
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 4);
  CHECK(m.isZero(0.0));
}

TEST_CASE("random matrix round-trips bitwise") {
  const auto dir = testing::scratch("npy_roundtrip");
  const Matrix m = testing::gaussian(8, 5, 11);
  save_matrix(m, dir / "m.npy");
  const Matrix back = load_matrix(dir / "m.npy");
  REQUIRE(back.rows() == 8);
  REQUIRE(back.cols() == 5);
  CHECK(std::memcmp(back.data(), m.data(), sizeof(double) * 40) == 0);
  // Saving again reproduces the same bytes.
  save_matrix(back, dir / "m2.npy");
  CHECK(testing::read_file(dir / "m.npy") == testing::read_file(dir / "m2.npy"));
}

TEST_CASE("float32 round trip is exact for float-representable values") {
  const auto dir = testing::scratch("npy_f32");
  const Eigen::MatrixXf rounded = testing::gaussian(6, 7, 3).cast<float>();
  const Matrix m = rounded.cast<double>();
  save_matrix(m, dir / "m.npy", Dtype::float32);
  CHECK(read_npy_header(dir / "m.npy").dtype == Dtype::float32);
  const Matrix back = load_matrix(dir / "m.npy");
  CHECK((back == m));
}

TEST_CASE("identity and scalar round trips") {
  const auto dir = testing::scratch("npy_small");
  save_matrix(Matrix::Identity(4, 4), dir / "i.npy");
  CHECK(load_matrix(dir / "i.npy") == Matrix::Identity(4, 4));
  Matrix one(1, 1);
  one(0, 0) = 7.5;
  save_matrix(one, dir / "s.npy");
  CHECK(load_matrix(dir / "s.npy")(0, 0) == 7.5);
}

TEST_CASE("file size for a 128 x 40000 float32 matrix") {
  const auto dir = testing::scratch("npy_size");
  const Matrix m = Matrix::Constant(128, 40000, 0.25);
  save_matrix(m, dir / "big.npy", Dtype::float32);
  const std::size_t header = expected_header("<f4", 128, 40000);
  CHECK(header == 128);
  CHECK(npy_header_size(Dtype::float32, 128, 40000) == header);
  CHECK(fs::file_size(dir / "big.npy") == 128u * 40000u * 4u + header);
}

TEST_CASE("header sizes follow the padding rule") {
  for (auto [r, c] : {std::pair<std::int64_t, std::int64_t>{1, 1}, {3, 4}, {12345, 678}, {0, 3}}) {
    CHECK(npy_header_size(Dtype::float64, r, c) == expected_header("<f8", r, c));
    CHECK(npy_header_size(Dtype::uint8, r, c) == expected_header("|u1", r, c));
    CHECK(npy_header_size(Dtype::int64, r, c) == expected_header("<i8", r, c));
  }
}

TEST_CASE("files written by numpy load with exact values") {
  const Matrix f8 = load_matrix(kNpy / "f8_3x4.npy");
  REQUIRE(f8.rows() == 3);
  REQUIRE(f8.cols() == 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(f8(i, j) == (i * 4 + j) / 4.0);

  const Matrix f4 = load_matrix(kNpy / "f4_2x3.npy");
  REQUIRE(f4.rows() == 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(f4(i, j) == (i * 3 + j) - 2.5);

  const BinaryMatrix u1 = load_binary(kNpy / "u1_2x2.npy");
  CHECK(u1(0, 0) == 0);
  CHECK(u1(0, 1) == 1);
  CHECK(u1(1, 0) == 1);

  const auto i8 = load_counts(kNpy / "i8_2x2.npy");
  CHECK(i8(0, 0) == 3);
  CHECK(i8(0, 1) == -1);
  CHECK(i8(1, 1) == 7);

  const Vector v = load_vector(kNpy / "f8_vec5.npy");
  REQUIRE(v.size() == 5);
  CHECK(v(4) == 5.0);

  CHECK(load_matrix(kNpy / "f8_0x3.npy").cols() == 3);
}

TEST_CASE("our files match numpy byte for byte") {
  const auto dir = testing::scratch("npy_bytes");
  Matrix m(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = (i * 4 + j) / 4.0;
  save_matrix(m, dir / "m.npy");
  CHECK(testing::read_file(dir / "m.npy") == testing::read_file(kNpy / "f8_3x4.npy"));

  BinaryMatrix b(2, 2);
  b << 0, 1, 1, 0;
  save_binary(b, dir / "b.npy");
  CHECK(testing::read_file(dir / "b.npy") == testing::read_file(kNpy / "u1_2x2.npy"));

  Eigen::MatrixX<std::int64_t> c(2, 2);
  c << 3, -1, 0, 7;
  save_counts(c, dir / "c.npy");
  CHECK(testing::read_file(dir / "c.npy") == testing::read_file(kNpy / "i8_2x2.npy"));
}

TEST_CASE("malformed inputs raise typed errors") {
  const auto dir = testing::scratch("npy_bad");
  testing::write_file(dir / "junk.npy", "this is not an array file at all................");
  try {
    load_matrix(dir / "junk.npy");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
    CHECK(std::string(e.what()).find("not NPY") != std::string::npos);
  }
  CHECK(kind_of([&] { load_matrix(kNpy / "f8_3d.npy"); }) == ErrorKind::format);
  CHECK(kind_of([&] { load_matrix(kNpy / "f8_vec5.npy"); }) == ErrorKind::format);
  CHECK(kind_of([&] { load_matrix(kNpy / "f8_fortran.npy"); }) == ErrorKind::format);
  CHECK(kind_of([&] { load_matrix(kNpy / "i4_2x2.npy"); }) == ErrorKind::format);
  CHECK(kind_of([&] { load_binary(kNpy / "f8_3x4.npy"); }) == ErrorKind::format);
  CHECK(kind_of([&] { load_matrix(dir / "missing.npy"); }) == ErrorKind::io);

  // Truncated payload.
  const std::string good = testing::read_file(kNpy / "f8_3x4.npy");
  testing::write_file(dir / "short.npy", good.substr(0, good.size() - 8));
  CHECK(kind_of([&] { load_matrix(dir / "short.npy"); }) == ErrorKind::format);

  // Version 2 headers are refused.
  std::string v2 = good;
  v2[6] = 2;
  testing::write_file(dir / "v2.npy", v2);
  CHECK(kind_of([&] { load_matrix(dir / "v2.npy"); }) == ErrorKind::format);
}

TEST_CASE("non-finite values are rejected on save") {
  const auto dir = testing::scratch("npy_nan");
  Matrix m = Matrix::Zero(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(save_matrix(m, dir / "nan.npy"), Error);
  m(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(save_matrix(m, dir / "inf.npy"), Error);
  CHECK_FALSE(fs::exists(dir / "nan.npy"));
}

TEST_CASE("round-trip property over random shapes") {
  const auto dir = testing::scratch("npy_prop");
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const auto r = static_cast<Eigen::Index>(1 + rng() % 9);
    const auto c = static_cast<Eigen::Index>(1 + rng() % 9);
    const Matrix m = testing::gaussian(r, c, rng(), 1e3);
    save_matrix(m, dir / "p.npy");
    const Matrix back = load_matrix(dir / "p.npy");
    REQUIRE(back.rows() == r);
    CHECK(std::memcmp(back.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) == 0);
    const BinaryMatrix b = testing::bernoulli(r, c, 0.5, rng());
    save_binary(b, dir / "b.npy");
    CHECK(load_binary(dir / "b.npy") == b);
  }
}

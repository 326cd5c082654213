#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "conceptkit/npy.hpp"

namespace testing {

inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(CONCEPTKIT_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline conceptkit::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                                   double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  conceptkit::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline conceptkit::BinaryMatrix bernoulli(Eigen::Index rows, Eigen::Index cols, double p,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  conceptkit::BinaryMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = b(rng) ? 1 : 0;
  return m;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.c_str(), "rb");
  if (!f) return {};
  std::string s;
  char buf[65536];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
  std::fclose(f);
  return s;
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
  std::FILE* f = std::fopen(p.c_str(), "wb");
  std::fwrite(s.data(), 1, s.size(), f);
  std::fclose(f);
}

}  // namespace testing

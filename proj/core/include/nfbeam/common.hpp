// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_COMMON_HPP
#define NFBEAM_COMMON_HPP

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nfbeam {

using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi = 3.14159265358979323846;

/// Thrown when a configuration or argument violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an on-disk artifact is malformed or inconsistent (bad magic,
/// hash mismatch, truncated payload).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// FNV-1a 64-bit over a byte range. Used for content keys of codebook caches
/// and checkpoint payloads.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

std::string hex64(std::uint64_t v);

/// Runs fn(i) for i in [0, n). Work is split across threads but every index
/// is computed independently, so results are identical regardless of the
/// thread count. Use only for index-wise independent work.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nfbeam

#endif  // NFBEAM_COMMON_HPP

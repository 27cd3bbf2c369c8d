#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmrl {

using Vec = std::vector<double>;
using Point = std::array<double, 2>;
using Track = std::vector<Point>;

// Invalid specs, shape mismatches, bad configuration files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A computation produced non-finite values.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

double l2_norm(const Vec& v);
double dot(const Vec& a, const Vec& b);
void clamp_inplace(Vec& v, double lo, double hi);
bool all_finite(const Vec& v);

// FNV-1a over raw bytes; used for the replay-buffer content audit.
std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 1469598103934665603ull);
std::uint64_t hash_doubles(std::uint64_t h, const double* xs, std::size_t n);

// Deterministic, locale-independent "%.17g" rendering for file output.
std::string format_double(double x);

}  // namespace mmrl

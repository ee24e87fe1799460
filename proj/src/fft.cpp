#include "stanet/fft.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace stanet::fft {
namespace {

bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

Vector radix2_real(const Vector& x) {
  const auto n = x.size();
  std::vector<double> re(static_cast<std::size_t>(n));
  std::vector<double> im(static_cast<std::size_t>(n), 0.0);

  // Bit-reversal permutation into the working buffers.
  int bits = 0;
  while ((Eigen::Index(1) << bits) < n) ++bits;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index j = 0;
    for (int b = 0; b < bits; ++b) j |= ((i >> b) & 1) << (bits - 1 - b);
    re[static_cast<std::size_t>(j)] = x[i];
  }

  for (Eigen::Index len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const double wr = std::cos(ang);
    const double wi = std::sin(ang);
    for (Eigen::Index start = 0; start < n; start += len) {
      double cr = 1.0, ci = 0.0;
      for (Eigen::Index k = 0; k < len / 2; ++k) {
        const auto even = static_cast<std::size_t>(start + k);
        const auto odd = static_cast<std::size_t>(start + k + len / 2);
        const double tr = cr * re[odd] - ci * im[odd];
        const double ti = cr * im[odd] + ci * re[odd];
        re[odd] = re[even] - tr;
        im[odd] = im[even] - ti;
        re[even] += tr;
        im[even] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }

  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = re[static_cast<std::size_t>(i)];
  return out;
}

Vector direct_real(const Vector& x) {
  const auto n = x.size();
  Vector out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      acc += x[j] * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) *
                             static_cast<double>(j) / static_cast<double>(n));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

Vector real_fft(const Vector& x) {
  if (x.size() < 1) throw ValidationError("x: must be nonempty");
  if (x.size() == 1) return x;
  return is_power_of_two(x.size()) ? radix2_real(x) : direct_real(x);
}

}  // namespace stanet::fft

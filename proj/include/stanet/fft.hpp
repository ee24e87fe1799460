#pragma once

#include "stanet/types.hpp"

namespace stanet::fft {

/// Real parts of the discrete Fourier transform of x, same length as x.
/// Radix-2 iterative path for power-of-two lengths, direct evaluation
/// otherwise. Linear in x; the underlying cosine matrix is symmetric, so
/// this function is also its own gradient adjoint.
Vector real_fft(const Vector& x);

}  // namespace stanet::fft

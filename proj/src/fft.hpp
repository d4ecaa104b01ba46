#pragma once

#include <complex>
#include <vector>

namespace lercp::detail {

enum class FftDirection { forward, inverse };

/// Unnormalized complex DFT: forward uses exp(-2 pi i jk/n), inverse uses
/// exp(+2 pi i jk/n) with no 1/n factor. Thread-safe.
std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& in,
                                      FftDirection dir);

}  // namespace lercp::detail

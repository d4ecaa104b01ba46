#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>

namespace lercp::detail {
namespace {

// FFTW planning is not thread-safe; execution with the new-array API is.
// Plans are created once per (n, direction) and kept for the process.
fftw_plan cached_plan(int n, FftDirection dir) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, fftw_plan> plans;
  std::lock_guard lock(mu);
  const auto key = std::make_pair(n, dir == FftDirection::forward ? 0 : 1);
  if (auto it = plans.find(key); it != plans.end()) return it->second;
  std::vector<std::complex<double>> a(static_cast<std::size_t>(n)), b(a.size());
  fftw_plan p = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(a.data()),
                                 reinterpret_cast<fftw_complex*>(b.data()),
                                 dir == FftDirection::forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(key, p);
  return p;
}

}  // namespace

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& in,
                                      FftDirection dir) {
  std::vector<std::complex<double>> out(in.size());
  if (in.empty()) return out;
  std::vector<std::complex<double>> scratch = in;  // FFTW may touch its input
  fftw_execute_dft(cached_plan(static_cast<int>(in.size()), dir),
                   reinterpret_cast<fftw_complex*>(scratch.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

}  // namespace lercp::detail

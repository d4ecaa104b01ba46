#pragma once

// Rough-edge synthesis from the Palasantzas power spectral density and
// the associated roughness statistics.
//
// Conventions used throughout:
//   * the PSD is two-sided: integrating it over all f gives sigma^2;
//   * LER is the divide-by-N standard deviation of the displacements,
//     with no finite-length bias correction.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace lercp {

struct PalasantzasParams {
  double sigma = 1.0;  ///< target LER, nm
  double hurst = 0.5;  ///< roughness exponent, (0, 1)
  double xi = 10.0;    ///< correlation length, nm

  /// Throws std::domain_error naming the offending field.
  void validate() const;
};

struct EdgeProfile {
  std::vector<double> displacements;  ///< nm, one per row, zero mean
  double pitch = 2.0;                 ///< nm between samples
  PalasantzasParams params;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return displacements.size(); }
};

/// Grid values used by the full-scale dataset.
std::vector<double> sigma_grid();  // 0.4 .. 1.8 step 0.2
std::vector<double> hurst_grid();  // 0.1 .. 0.9 step 0.1
std::vector<double> xi_grid();     // 6 .. 40

/// Palasantzas PSD in nm^3 at frequency f (cycles/nm).
double psd_eval(const PalasantzasParams& params, double f);

/// Frequency bin spacing 1/(n*pitch).
double frequency_step(std::size_t n, double pitch) noexcept;

/// Fourier synthesis of a Gaussian profile with an arbitrary two-sided PSD.
/// Bin k gets c_k = sqrt(PSD(f_k) df) (g1 + i g2)/sqrt(2); c_0 = 0; the
/// Nyquist bin is real with the same variance; c_{n-k} = conj(c_k).
/// The expected periodogram of the result equals PSD(f_k) on every bin.
std::vector<double> synthesize_displacements(const std::function<double(double)>& psd,
                                             std::size_t n, double pitch, std::uint64_t seed);

/// Thorsos-style edge synthesis. n must be a power of two.
EdgeProfile synthesize_edge(const PalasantzasParams& params, std::size_t n = 1024,
                            double pitch = 2.0, std::uint64_t seed = 0);

/// Population standard deviation (divide by N).
double compute_ler(std::span<const double> displacements);
inline double compute_ler(const EdgeProfile& edge) { return compute_ler(edge.displacements); }

/// One-sided periodogram, bins 0..n/2, each |DFT(d)_k|^2 * pitch / n.
/// Bin values estimate the two-sided PSD directly; to recover the variance
/// weight interior bins twice (see periodogram_power).
std::vector<double> periodogram(std::span<const double> displacements, double pitch);
inline std::vector<double> periodogram(const EdgeProfile& edge) {
  return periodogram(edge.displacements, edge.pitch);
}

/// Total power of a one-sided periodogram of a length-n signal:
/// (P_0 + 2 sum_{0<k<n/2} P_k + P_{n/2}) * df. Equals compute_ler^2 for a
/// zero-mean signal (Parseval).
double periodogram_power(std::span<const double> one_sided, std::size_t n, double pitch);

}  // namespace lercp

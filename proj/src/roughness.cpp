#include "lercp/roughness.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "fft.hpp"

namespace lercp {

void PalasantzasParams::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::domain_error("sigma must be positive, got " + std::to_string(sigma));
  if (!(hurst > 0.0 && hurst < 1.0))
    throw std::domain_error("hurst must lie in (0, 1), got " + std::to_string(hurst));
  if (!(xi > 0.0) || !std::isfinite(xi))
    throw std::domain_error("xi must be positive, got " + std::to_string(xi));
}

std::vector<double> sigma_grid() {
  std::vector<double> v;
  for (int i = 2; i <= 9; ++i) v.push_back(0.2 * i);
  return v;
}

std::vector<double> hurst_grid() {
  std::vector<double> v;
  for (int i = 1; i <= 9; ++i) v.push_back(0.1 * i);
  return v;
}

std::vector<double> xi_grid() {
  std::vector<double> v;
  for (int x = 6; x <= 40; ++x) v.push_back(x);
  return v;
}

double psd_eval(const PalasantzasParams& params, double f) {
  params.validate();
  if (!(f >= 0.0)) throw std::domain_error("psd_eval: frequency must be nonnegative");
  const double h = params.hurst;
  // Gamma ratio through lgamma keeps the prefactor accurate for h near 0.
  const double prefactor =
      std::sqrt(std::numbers::pi) * std::exp(std::lgamma(h + 0.5) - std::lgamma(h));
  const double u = 2.0 * std::numbers::pi * f * params.xi;
  return prefactor * 2.0 * params.sigma * params.sigma * params.xi /
         std::pow(1.0 + u * u, h + 0.5);
}

double frequency_step(std::size_t n, double pitch) noexcept {
  return 1.0 / (static_cast<double>(n) * pitch);
}

std::vector<double> synthesize_displacements(const std::function<double(double)>& psd,
                                             std::size_t n, double pitch, std::uint64_t seed) {
  if (n < 2 || (n & (n - 1)) != 0)
    throw std::invalid_argument("edge length must be a power of two >= 2");
  if (!(pitch > 0.0)) throw std::invalid_argument("pitch must be positive");

  const double df = frequency_step(n, pitch);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::complex<double>> coeff(n, {0.0, 0.0});
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < half; ++k) {
    const double amp = std::sqrt(psd(static_cast<double>(k) * df) * df);
    const double g1 = normal(rng);
    const double g2 = normal(rng);
    coeff[k] = amp * std::complex<double>(g1, g2) / std::numbers::sqrt2;
    coeff[n - k] = std::conj(coeff[k]);
  }
  coeff[half] = std::sqrt(psd(static_cast<double>(half) * df) * df) * normal(rng);

  const auto synth = detail::dft(coeff, detail::FftDirection::inverse);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = synth[j].real();
  return out;
}

EdgeProfile synthesize_edge(const PalasantzasParams& params, std::size_t n, double pitch,
                            std::uint64_t seed) {
  params.validate();
  EdgeProfile edge;
  edge.displacements = synthesize_displacements(
      [&params](double f) { return psd_eval(params, f); }, n, pitch, seed);
  edge.pitch = pitch;
  edge.params = params;
  edge.seed = seed;
  return edge;
}

double compute_ler(std::span<const double> d) {
  if (d.empty()) throw std::invalid_argument("compute_ler: empty edge");
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(d.size()));
}

std::vector<double> periodogram(std::span<const double> d, double pitch) {
  if (d.empty()) throw std::invalid_argument("periodogram: empty edge");
  const std::size_t n = d.size();
  std::vector<std::complex<double>> in(d.begin(), d.end());
  const auto spec = detail::dft(in, detail::FftDirection::forward);
  std::vector<double> out(n / 2 + 1);
  const double scale = pitch / static_cast<double>(n);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(spec[k]) * scale;
  return out;
}

double periodogram_power(std::span<const double> p, std::size_t n, double pitch) {
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const bool self_conjugate = k == 0 || (n % 2 == 0 && k == n / 2);
    total += (self_conjugate ? 1.0 : 2.0) * p[k];
  }
  return total * frequency_step(n, pitch);
}

}  // namespace lercp

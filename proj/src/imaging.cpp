#include "lercp/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lercp {

void ImageGeometry::validate() const {
  if (width_px <= 0 || height_px <= 0 || width_px > 65535 || height_px > 65535)
    throw std::invalid_argument("image dimensions must lie in [1, 65535]");
  if (!(px_w > 0.0) || !(px_h > 0.0))
    throw std::invalid_argument("pixel sizes must be positive");
}

std::vector<double> paper_doses() { return {2, 3, 4, 5, 10, 20, 30, 50, 100, 200}; }

void validate_line(const LineSpec& line, const ImageGeometry& geom) {
  geom.validate();
  const auto rows = static_cast<std::size_t>(geom.height_px);
  if (line.left.size() != rows || line.right.size() != rows)
    throw std::invalid_argument("edge length does not match image height");
  const double hi = geom.width_nm() - kBorderMargin;
  for (std::size_t r = 0; r < rows; ++r) {
    const double l = line.left_position(r);
    const double rr = line.right_position(r);
    if (!(l < rr))
      throw std::invalid_argument("left edge crosses right edge at row " + std::to_string(r));
    if (l < kBorderMargin || rr > hi)
      throw std::invalid_argument("line leaves the image at row " + std::to_string(r));
  }
}

RenderStyle RenderStyle::ideal() {
  RenderStyle s;
  s.background_jitter = 0.0;
  s.texture_amplitude = 0.0;
  s.blur = false;
  return s;
}

RenderStyle RenderStyle::binary() {
  RenderStyle s = ideal();
  s.bloom = s.line;
  s.bloom_half_width_px = 0.0;
  return s;
}

std::string to_string(ImageKind kind) {
  switch (kind) {
    case ImageKind::clean: return "clean";
    case ImageKind::noisy: return "noisy";
    case ImageKind::denoised: return "denoised";
    case ImageKind::noise: return "noise";
  }
  return "unknown";
}

namespace {

std::vector<double> gaussian_taps(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable smoothing with replicated borders.
std::vector<double> smooth_separable(const std::vector<double>& in, int w, int h,
                                     const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int cc = std::clamp(c + k, 0, w - 1);
        acc += taps[k + radius] * in[static_cast<std::size_t>(r) * w + cc];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int rr = std::clamp(r + k, 0, h - 1);
        acc += taps[k + radius] * tmp[static_cast<std::size_t>(rr) * w + c];
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

std::vector<double> anisotropic_blur(const std::vector<double>& in, int w, int h,
                                     const RenderStyle& s) {
  const double theta = s.blur_angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double a2 = s.blur_sigma_major_px * s.blur_sigma_major_px;
  const double b2 = s.blur_sigma_minor_px * s.blur_sigma_minor_px;
  // Inverse covariance of the rotated Gaussian, (x = column, y = row).
  const double ixx = ct * ct / a2 + st * st / b2;
  const double iyy = st * st / a2 + ct * ct / b2;
  const double ixy = ct * st * (1.0 / a2 - 1.0 / b2);
  const int radius = static_cast<int>(std::ceil(3.0 * s.blur_sigma_major_px));
  const int side = 2 * radius + 1;
  std::vector<double> kernel(static_cast<std::size_t>(side) * side);
  double sum = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double q = ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy;
      const double v = std::exp(-0.5 * q);
      kernel[static_cast<std::size_t>(dy + radius) * side + dx + radius] = v;
      sum += v;
    }
  }
  for (double& v : kernel) v /= sum;

  std::vector<double> out(in.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int rr = std::clamp(r + dy, 0, h - 1);
        const double* src = in.data() + static_cast<std::size_t>(rr) * w;
        const double* krow = kernel.data() + static_cast<std::size_t>(dy + radius) * side;
        for (int dx = -radius; dx <= radius; ++dx) {
          acc += krow[dx + radius] * src[std::clamp(c + dx, 0, w - 1)];
        }
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

// Fraction of [x0, x1) covered by [a, b].
double overlap(double a, double b, double x0, double x1) {
  const double lo = std::max(a, x0);
  const double hi = std::min(b, x1);
  return hi > lo ? (hi - lo) / (x1 - x0) : 0.0;
}

void check_unit_range(const SemImage& img, const char* what) {
  for (float v : img.pixels) {
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument(std::string(what) + ": image values must lie in [0, 1]");
  }
}

}  // namespace

SemImage render_clean(const LineSpec& line, const ImageGeometry& geom, const RenderStyle& style,
                      std::uint64_t seed) {
  validate_line(line, geom);
  const int w = geom.width_px;
  const int h = geom.height_px;
  std::mt19937_64 rng(seed);

  double bg = style.background;
  if (style.background_jitter > 0.0) {
    std::uniform_real_distribution<double> jitter(-style.background_jitter,
                                                  style.background_jitter);
    bg += jitter(rng);
  }

  std::vector<double> texture;
  if (style.texture_amplitude > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> white(static_cast<std::size_t>(w) * h);
    for (double& v : white) v = normal(rng);
    const int radius = static_cast<int>(std::ceil(3.0 * style.texture_scale_px));
    texture = smooth_separable(white, w, h, gaussian_taps(style.texture_scale_px, radius));
    double ss = 0.0;
    for (double v : texture) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(texture.size()));
    for (double& v : texture) v *= style.texture_amplitude / rms;
  }

  const double pw = geom.px_w;
  const double bloom = style.bloom_half_width_px * pw;
  std::vector<double> img(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r) {
    const double left = line.left_position(static_cast<std::size_t>(r));
    const double right = line.right_position(static_cast<std::size_t>(r));
    for (int c = 0; c < w; ++c) {
      const double x0 = c * pw;
      const double x1 = x0 + pw;
      const double f_line = overlap(left, right, x0, x1);
      const double f_bloom_in = overlap(left, std::min(left + bloom, right), x0, x1) +
                                overlap(std::max(right - bloom, left + bloom), right, x0, x1);
      const double f_bloom_out =
          overlap(left - bloom, left, x0, x1) + overlap(right, right + bloom, x0, x1);
      const double f_bg = std::max(0.0, 1.0 - f_line - f_bloom_out);
      const std::size_t idx = static_cast<std::size_t>(r) * w + c;
      const double base = texture.empty() ? bg : bg + texture[idx];
      img[idx] = base * f_bg + style.line * (f_line - f_bloom_in) +
                 style.bloom * (f_bloom_in + f_bloom_out);
    }
  }

  if (style.blur) img = anisotropic_blur(img, w, h, style);

  double peak = 0.0;
  for (double& v : img) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  SemImage out(w, h, ImageKind::clean);
  for (std::size_t i = 0; i < img.size(); ++i)
    out.pixels[i] = static_cast<float>(peak > 0.0 ? img[i] / peak : 0.0);
  return out;
}

std::vector<double> poisson_counts(const SemImage& img, double dose, std::uint64_t seed) {
  if (!(dose > 0.0) || !std::isfinite(dose))
    throw std::invalid_argument("dose must be positive");
  std::mt19937_64 rng(seed);
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = dose * static_cast<double>(img.pixels[i]);
    if (mean <= 0.0) {
      out[i] = 0.0;
      continue;
    }
    std::poisson_distribution<long long> poisson(mean);
    out[i] = static_cast<double>(poisson(rng)) / dose;
  }
  return out;
}

SemImage apply_poisson(const SemImage& img, double dose, std::uint64_t seed) {
  check_unit_range(img, "apply_poisson");
  const auto counts = poisson_counts(img, dose, seed);
  const double ceiling = img.pixels.empty()
                             ? 0.0
                             : static_cast<double>(*std::max_element(img.pixels.begin(),
                                                                     img.pixels.end()));
  double realized = 0.0;
  for (double v : counts) realized = std::max(realized, std::min(v, ceiling));
  SemImage out(img.width, img.height, ImageKind::noisy);
  out.dose = dose;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double clipped = std::clamp(counts[i], 0.0, ceiling);
    out.pixels[i] = static_cast<float>(realized > 0.0 ? clipped / realized : 0.0);
  }
  return out;
}

SemImage denoise(const SemImage& img, const DenoiseOptions& opts) {
  if (!img.dose || !(*img.dose > 0.0))
    throw std::invalid_argument("denoise: image carries no positive dose");
  const double dose = *img.dose;
  std::vector<double> stabilized(img.pixels.size());
  for (std::size_t i = 0; i < stabilized.size(); ++i) {
    const double counts = std::max(0.0, static_cast<double>(img.pixels[i])) * dose;
    stabilized[i] = 2.0 * std::sqrt(counts + 0.375);
  }
  const auto smoothed = smooth_separable(stabilized, img.width, img.height,
                                         gaussian_taps(opts.sigma_px, opts.radius_px));
  SemImage out(img.width, img.height, ImageKind::denoised);
  out.dose = img.dose;
  for (std::size_t i = 0; i < smoothed.size(); ++i) {
    const double half = 0.5 * smoothed[i];
    const double value = (half * half - 0.375) / dose;
    out.pixels[i] = static_cast<float>(std::clamp(value, 0.0, 1.0));
  }
  return out;
}

SemImage noise_image(const SemImage& noisy, const SemImage& denoised) {
  if (!noisy.same_shape(denoised)) throw std::invalid_argument("noise_image: shape mismatch");
  SemImage out(noisy.width, noisy.height, ImageKind::noise);
  out.dose = noisy.dose;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = std::abs(noisy.pixels[i] - denoised.pixels[i]);
  return out;
}

std::vector<int> rounded_edge_columns(const LineSpec& line, const ImageGeometry& geom) {
  const auto rows = static_cast<std::size_t>(geom.height_px);
  std::vector<int> cols(2 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    cols[r] = static_cast<int>(std::lround(line.left_position(r) / geom.px_w));
    cols[rows + r] = static_cast<int>(std::lround(line.right_position(r) / geom.px_w));
  }
  return cols;
}

namespace {

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

std::uint16_t get_u16(std::string_view s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

constexpr std::size_t kSemfHeader = 16;

}  // namespace

std::string encode_semf(const SemImage& img) {
  if (img.width <= 0 || img.height <= 0 || img.width > 65535 || img.height > 65535)
    throw std::invalid_argument("SEMF: dimensions out of range");
  std::string out;
  out.reserve(kSemfHeader + 4 * img.pixels.size());
  out.append("SEMF", 4);
  put_u16(out, static_cast<std::uint16_t>(img.width));
  put_u16(out, static_cast<std::uint16_t>(img.height));
  put_u32(out, static_cast<std::uint32_t>(img.kind));
  put_u32(out, 0);
  for (float v : img.pixels) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

SemImage decode_semf(std::string_view bytes) {
  if (bytes.size() < kSemfHeader || bytes.substr(0, 4) != "SEMF")
    throw std::runtime_error("SEMF: bad magic");
  const int w = get_u16(bytes, 4);
  const int h = get_u16(bytes, 6);
  const std::uint32_t flags = get_u32(bytes, 8);
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() != kSemfHeader + 4 * count) throw std::runtime_error("SEMF: truncated file");
  if ((flags & 0xff) > static_cast<std::uint32_t>(ImageKind::noise))
    throw std::runtime_error("SEMF: unknown image kind");
  SemImage img(w, h, static_cast<ImageKind>(flags & 0xff));
  for (std::size_t i = 0; i < count; ++i)
    img.pixels[i] = std::bit_cast<float>(get_u32(bytes, kSemfHeader + 4 * i));
  return img;
}

void write_semf(const std::filesystem::path& path, const SemImage& img) {
  const std::string bytes = encode_semf(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

SemImage read_semf(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_semf(ss.str());
}

}  // namespace lercp

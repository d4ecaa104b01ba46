#pragma once

// Simplified SEM-style line rendering, dose-controlled Poisson noise, a
// classical denoiser and noise images. Also the SEMF raw image format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lercp/roughness.hpp"

namespace lercp {

struct ImageGeometry {
  int width_px = 64;
  int height_px = 1024;
  double px_w = 0.5;  ///< nm
  double px_h = 2.0;  ///< nm

  double width_nm() const noexcept { return width_px * px_w; }
  void validate() const;
};

/// Full-scale dose set, electrons per pixel.
std::vector<double> paper_doses();

struct LineSpec {
  EdgeProfile left;
  EdgeProfile right;
  double center_offset = 16.0;  ///< nm from the image's left border
  double width = 10.0;          ///< nm

  double left_position(std::size_t row) const {
    return center_offset - 0.5 * width + left.displacements[row];
  }
  double right_position(std::size_t row) const {
    return center_offset + 0.5 * width + right.displacements[row];
  }
};

/// Minimum clearance between a rendered edge and the image border, nm.
inline constexpr double kBorderMargin = 2.0;

/// Throws std::invalid_argument unless every row has
/// margin <= left < right <= width - margin and the edges match the height.
void validate_line(const LineSpec& line, const ImageGeometry& geom);

/// Render style constants. Intensities are before the final max-normalization.
struct RenderStyle {
  double background = 0.2;
  double background_jitter = 0.03;  ///< uniform +- per image
  double line = 0.55;
  double bloom = 0.9;
  double bloom_half_width_px = 1.0;
  double texture_amplitude = 0.03;  ///< std of the background texture
  double texture_scale_px = 3.0;    ///< smoothing length of the texture
  bool blur = true;
  double blur_sigma_major_px = 2.0;
  double blur_sigma_minor_px = 1.0;
  double blur_angle_deg = 30.0;  ///< major axis, from the +x axis

  /// Binary stripe with bloom rims: no texture, no jitter, no blur.
  static RenderStyle ideal();
  /// Pure binary stripe: as ideal() without the bloom band.
  static RenderStyle binary();
};

enum class ImageKind : std::uint8_t { clean = 0, noisy = 1, denoised = 2, noise = 3 };
std::string to_string(ImageKind kind);

/// Row-major float image. Row index runs along the edge (height).
struct SemImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  ImageKind kind = ImageKind::clean;
  std::optional<double> dose;

  SemImage() = default;
  SemImage(int w, int h, ImageKind k, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill), kind(k) {}

  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  float at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }
  std::span<const float> row(int r) const {
    return {pixels.data() + static_cast<std::size_t>(r) * width, static_cast<std::size_t>(width)};
  }
  bool same_shape(const SemImage& o) const { return width == o.width && height == o.height; }
};

SemImage render_clean(const LineSpec& line, const ImageGeometry& geom, const RenderStyle& style,
                      std::uint64_t seed);

/// Poisson(dose * p) / dose per pixel, before clipping or renormalization.
std::vector<double> poisson_counts(const SemImage& img, double dose, std::uint64_t seed);

/// Noisy image: poisson_counts, clipped to [0, max(img)], divided by the
/// realized maximum. Requires img values in [0, 1] and dose > 0.
SemImage apply_poisson(const SemImage& img, double dose, std::uint64_t seed);

struct DenoiseOptions {
  double sigma_px = 1.5;
  int radius_px = 4;
};

/// Anscombe transform of the counts (image * dose), isotropic Gaussian
/// smoothing, algebraic inverse, clip to [0, 1]. Requires img.dose.
SemImage denoise(const SemImage& img, const DenoiseOptions& opts = {});

/// Elementwise |noisy - denoised|.
SemImage noise_image(const SemImage& noisy, const SemImage& denoised);

/// Edge positions rounded to whole pixel columns, for pixel-level exports.
/// Returns 2 x height column indices (left row-block first).
std::vector<int> rounded_edge_columns(const LineSpec& line, const ImageGeometry& geom);

// SEMF: 16-byte header ("SEMF", u16 width, u16 height, u32 flags, u32 reserved)
// followed by little-endian float32 pixels, row-major. flags bits 0-7 hold
// the ImageKind.
std::string encode_semf(const SemImage& img);
SemImage decode_semf(std::string_view bytes);
void write_semf(const std::filesystem::path& path, const SemImage& img);
SemImage read_semf(const std::filesystem::path& path);

}  // namespace lercp

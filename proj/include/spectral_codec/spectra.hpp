#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spectral_codec {

// Speed of light in nm/fs, so that omega = 2*pi*c/lambda is in rad/fs.
inline constexpr double kSpeedOfLightNmPerFs = 299.792458;

double omega_from_nm(double wavelength_nm);

// Sampled spectral axis. Stored in wavelength (nm); the resonance math works
// in angular frequency, so omegas and trapezoid weights over omega are cached.
class SpectralGrid {
 public:
  explicit SpectralGrid(std::vector<double> wavelengths_nm);

  // Inclusive uniform grid [start, stop] with the given step.
  static SpectralGrid uniform(double start_nm, double stop_nm, double step_nm);
  // 31 bands, 400..700 nm, 10 nm step.
  static SpectralGrid desk_default();

  std::size_t size() const { return wavelengths_.size(); }
  std::span<const double> wavelengths() const { return wavelengths_; }
  std::span<const double> omegas() const { return omegas_; }
  // Trapezoidal quadrature weights over omega. Positive, sum to omega_span().
  std::span<const double> weights() const { return weights_; }
  double omega_min() const { return omegas_.back(); }
  double omega_max() const { return omegas_.front(); }
  double omega_span() const { return omega_max() - omega_min(); }

  // Grids match when every wavelength agrees to 1e-4 nm (files store f32).
  bool matches(const SpectralGrid& other) const;

 private:
  std::vector<double> wavelengths_;
  std::vector<double> omegas_;
  std::vector<double> weights_;
};

// Hyperspectral cube; data is (y, x, band) with band fastest.
class HsiCube {
 public:
  HsiCube(SpectralGrid grid, std::size_t height, std::size_t width);
  HsiCube(SpectralGrid grid, std::size_t height, std::size_t width,
          std::vector<double> data);

  const SpectralGrid& grid() const { return grid_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t bands() const { return grid_.size(); }
  std::size_t pixels() const { return height_ * width_; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  std::span<const double> pixel(std::size_t y, std::size_t x) const {
    return {data_.data() + (y * width_ + x) * bands(), bands()};
  }
  std::span<double> pixel(std::size_t y, std::size_t x) {
    return {data_.data() + (y * width_ + x) * bands(), bands()};
  }
  double& at(std::size_t y, std::size_t x, std::size_t b) {
    return data_[(y * width_ + x) * bands() + b];
  }
  double at(std::size_t y, std::size_t x, std::size_t b) const {
    return data_[(y * width_ + x) * bands() + b];
  }

  bool operator==(const HsiCube& o) const;

 private:
  SpectralGrid grid_;
  std::size_t height_;
  std::size_t width_;
  std::vector<double> data_;
};

// bands x n_pixels, column j = spectrum of pixel j (j = y*width + x).
using SpectraMatrix = Eigen::MatrixXd;

SpectraMatrix flatten(const HsiCube& cube);
HsiCube deflatten(const SpectraMatrix& spectra, const SpectralGrid& grid,
                  std::size_t height, std::size_t width);

struct Rect {
  std::size_t y0 = 0;
  std::size_t x0 = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Divides every pixel band-wise by the mean spectrum over `region`.
HsiCube normalize_white(const HsiCube& cube, const Rect& region);

struct LabelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;  // row-major, 0 = background
  std::vector<std::string> classes;

  LabelMask() = default;
  LabelMask(std::size_t h, std::size_t w, std::vector<std::string> class_names);

  std::uint16_t at(std::size_t y, std::size_t x) const {
    return labels[y * width + x];
  }
  void validate() const;
  bool operator==(const LabelMask&) const = default;
};

// Three response curves (rows R, G, B) sampled on a grid.
struct RgbResponse {
  SpectralGrid grid;
  Eigen::Matrix<double, 3, Eigen::Dynamic> curves;

  // Gaussians centred at 600 / 550 / 450 nm (R / G / B), sigma 30 nm, peak 1.
  static RgbResponse gaussian_default(const SpectralGrid& grid);

  // Row c = curve_c * quadrature weight, so that rgb = matrix() * spectrum.
  Eigen::Matrix<double, 3, Eigen::Dynamic> integration_matrix() const;
};

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // (y, x, channel)

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * 3 + c];
  }
};

// Channel integrals, divided by the image-wide maximum (left at zero when the
// image integrates to zero everywhere).
RgbImage to_rgb(const HsiCube& cube, const RgbResponse& response);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct GaussianBump {
  double center_nm = 550.0;
  double width_nm = 40.0;
  double amplitude = 0.3;
};

struct ClassSpec {
  std::string name;
  double baseline = 0.2;
  std::vector<GaussianBump> bumps;
  // Per-instance multiplicative brightness, uniform in [1 - j, 1 + j].
  double brightness_jitter = 0.08;
};

// The spectrum of `derived_class` is replaced by the spectrum of `base_class`
// plus a component in the null space of the RGB integration matrix.
struct MetamerRequest {
  std::size_t base_class = 1;     // mask indices, >= 1
  std::size_t derived_class = 2;
  double min_relative_difference = 0.2;
};

struct SceneSpec {
  SpectralGrid grid = SpectralGrid::desk_default();
  std::size_t height = 64;
  std::size_t width = 64;
  ClassSpec background;
  std::vector<ClassSpec> classes;  // mask index = position + 1
  std::optional<MetamerRequest> metamer;
  std::size_t objects_min = 3;
  std::size_t objects_max = 6;
  double pixel_noise = 0.004;
  std::uint64_t spectra_seed = 7;
};

// Desk-scale default corpus description: background plus four fruit-like
// classes, the last two forming a metamer pair.
SceneSpec default_scene_spec();

struct Scene {
  HsiCube cube;
  LabelMask mask;
};

// Base reflectance of every mask class (column c = class c, column 0 is the
// background). Depends only on the SceneSpec, never on a scene seed.
Eigen::MatrixXd class_spectra(const SceneSpec& spec);

Scene synth_scene(const SceneSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// File formats (little-endian): HXC1 cubes and HXM1 label masks.

void save_cube(const HsiCube& cube, const std::filesystem::path& path);
HsiCube load_cube(const std::filesystem::path& path);

void save_mask(const LabelMask& mask, const std::filesystem::path& path);
LabelMask load_mask(const std::filesystem::path& path);

}  // namespace spectral_codec

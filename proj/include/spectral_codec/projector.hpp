#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "spectral_codec/spectra.hpp"

namespace spectral_codec {

// physical = scale * raw + offset. A degenerate map (constant raw curve) has
// scale 0 and cannot be inverted.
struct AffineMap {
  double scale = 1.0;
  double offset = 0.0;
  bool degenerate = false;

  double apply(double raw) const { return scale * raw + offset; }
  double invert(double physical) const { return (physical - offset) / scale; }
  bool operator==(const AffineMap&) const = default;
};

// k projector curves on a shared grid (row i = curve i).
struct ProjectorBank {
  SpectralGrid grid;
  Eigen::MatrixXd curves;
  std::vector<AffineMap> affine;  // one per curve
  bool orthonormal = false;       // rows orthonormal (raw PCA output)
  bool physical = false;          // every value in [0, 1]
  Eigen::VectorXd singular_values;  // full spectrum when produced by design_pca

  ProjectorBank(SpectralGrid g, Eigen::MatrixXd c);

  std::size_t k() const { return static_cast<std::size_t>(curves.rows()); }
  std::size_t bands() const { return static_cast<std::size_t>(curves.cols()); }

  // Curves multiplied by the quadrature weights: S = weighted() * beta.
  Eigen::MatrixXd weighted() const;
  // G_kl = integral of curve_k * curve_l.
  Eigen::MatrixXd gram() const;
  void validate() const;
};

// Per-pixel barcode, data in (y, x, channel) order.
struct Barcode {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t k = 0;
  std::vector<double> data;

  Barcode() = default;
  Barcode(std::size_t h, std::size_t w, std::size_t channels)
      : height(h), width(w), k(channels), data(h * w * channels, 0.0) {}

  std::size_t pixels() const { return height * width; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * k + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * k + c];
  }
  bool operator==(const Barcode&) const = default;
};

struct PcaOptions {
  // Subtract the mean spectrum before the SVD. Off by default: the bank
  // factorizes B itself.
  bool centered = false;
};

// Top-k left singular vectors of B as rows, each sign-fixed so that its
// largest-magnitude entry is positive.
ProjectorBank design_pca(const SpectraMatrix& B, const SpectralGrid& grid, std::size_t k,
                         PcaOptions options = {});

Barcode encode(const HsiCube& cube, const ProjectorBank& bank);

// Least-squares decoder beta = curves^T G^-1 S, precomputed once per bank.
class LinearDecoder {
 public:
  explicit LinearDecoder(const ProjectorBank& bank);

  HsiCube decode(const Barcode& barcode) const;
  const Eigen::MatrixXd& matrix() const { return decode_; }  // bands x k
  double gram_condition() const { return condition_; }

 private:
  SpectralGrid grid_;
  Eigen::MatrixXd decode_;
  double condition_;
};

HsiCube decode_linear(const Barcode& barcode, const ProjectorBank& bank);

// Condition number of the Gram matrix (ratio of extreme eigenvalues).
double gram_condition(const ProjectorBank& bank);

// Affinely maps every curve onto [0.02, 0.98].
ProjectorBank remap_physical(const ProjectorBank& bank);

// Integral of each pixel spectrum over omega.
std::vector<double> spectral_integrals(const HsiCube& cube);

// Undo the affine map of a physical bank: S_raw = (S_phys - offset * int(beta)) / scale.
Barcode affine_correct(const Barcode& physical, const ProjectorBank& bank,
                       std::span<const double> pixel_integrals);

void save_bank(const ProjectorBank& bank, const std::filesystem::path& path);
ProjectorBank load_bank(const std::filesystem::path& path);

void save_barcode(const Barcode& barcode, const std::filesystem::path& path);
Barcode load_barcode(const std::filesystem::path& path);

}  // namespace spectral_codec

#pragma once

// Inverse design of projector curves: Adam on CMT parameters against a target
// transmission, per-curve bank fitting, and joint training of the CMT bank
// with a pixel decoder.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectral_codec/cmt.hpp"
#include "spectral_codec/error.hpp"
#include "spectral_codec/nn.hpp"
#include "spectral_codec/projector.hpp"
#include "spectral_codec/spectra.hpp"

namespace spectral_codec {

struct FitConfig {
  int n_modes = 8;
  double lr = 1e-2;
  int epochs = 150;
  int steps_per_epoch = 20;  // full-batch Adam steps per schedule epoch
  int step_size = 50;
  double gamma = 0.1;
  int restarts = 5;
  std::uint64_t seed = 0;
  double tol = 1e-10;  // stop a restart once its MSE drops below this
  // Initial coupling entries are drawn from uniform(lo, hi) * sqrt(omega span),
  // so resonance linewidths scale with the grid.
  double coupling_lo = 0.05;
  double coupling_hi = 0.5;

  void validate() const;
  nn::AdamConfig adam() const;
};

struct FitReport {
  double mse = 0.0;                    // best over all restarts
  int best_restart = -1;
  std::vector<double> restart_mse;     // NaN for diverged restarts
  std::vector<double> trajectory;      // best restart: initial MSE, then one per epoch
  std::optional<CmtModel> model;
  bool constant_target = false;
};

// Thrown when every restart diverged; carries the report.
class FitError : public Error {
 public:
  FitError(const std::string& what, FitReport report)
      : Error(ErrorKind::FitFailure, what), report_(std::move(report)) {}
  const FitReport& report() const { return report_; }

 private:
  FitReport report_;
};

// Mean squared difference between the model's transmission and `target`.
double curve_mse(const CmtModel& model, const SpectralGrid& grid, const Eigen::VectorXd& target);

// Curves that are constant to 1e-12 skip the optimizer: a single strongly
// coupled mode with asymmetric port coupling gives a flat transmission.
CmtModel constant_curve_model(double value, const SpectralGrid& grid, int n_modes);

// Resonances spread evenly over the grid; restarts > 0 jitter centres and
// draw fresh couplings.
CmtModel initial_model(const SpectralGrid& grid, const FitConfig& cfg, int restart,
                       std::mt19937_64& rng);

FitReport fit_projector(const Eigen::VectorXd& target, const SpectralGrid& grid,
                        const FitConfig& cfg);

// One Adam run from a caller-supplied model (warm start); restarts is ignored.
FitReport refine_projector(const CmtModel& init, const Eigen::VectorXd& target,
                           const SpectralGrid& grid, const FitConfig& cfg);

struct CurveFailure {
  std::size_t index = 0;
  std::string message;
};

struct BankFit {
  std::vector<CmtModel> models;    // one per curve; failed curves get a flat unit filter
  ProjectorBank realized;          // transmission of each model, affine maps kept
  std::vector<FitReport> reports;
  std::vector<CurveFailure> failures;

  double mean_mse() const;
};

// Curves are fitted independently (in parallel). Curve i uses seed cfg.seed + i.
BankFit fit_bank(const ProjectorBank& targets, const FitConfig& cfg);

ProjectorBank realize_bank(const std::vector<CmtModel>& models, const SpectralGrid& grid,
                           const std::vector<AffineMap>& affine = {});

void save_fit_report(const BankFit& fit, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Joint training.

enum class Task { Reconstruction, Classification };

struct EndToEndConfig {
  Task task = Task::Reconstruction;
  nn::TrainConfig train;        // epochs, batch size, shuffling seed
  nn::AdamConfig decoder_adam;
  nn::AdamConfig cmt_adam{1e-3, 0.9, 0.999, 1e-8, 50, 0.1};
  bool freeze_cmt = false;
};

struct EndToEndReport {
  std::vector<double> loss_history;  // mean minibatch loss per epoch
};

struct EndToEndResult {
  std::vector<CmtModel> models;
  nn::Mlp decoder;
  EndToEndReport report;
};

// Decoder input for a barcode: S / omega_span, so a unit spectrum under a
// unit curve maps to 1.
double feature_scale(const SpectralGrid& grid);

// Training pixels from a list of cubes (columns = pixels, scene by scene) and,
// for classification, their labels.
struct PixelSet {
  Eigen::MatrixXd spectra;  // bands x n
  std::vector<int> labels;
};
PixelSet collect_pixels(std::span<const HsiCube> cubes, std::span<const LabelMask> masks = {});

// The barcode -> decoder chain. With freeze_cmt the bank is applied once and
// training is exactly nn::train on the resulting features.
EndToEndResult end_to_end_train(std::span<const HsiCube> cubes, std::span<const LabelMask> masks,
                                std::vector<CmtModel> models, nn::Mlp decoder,
                                const EndToEndConfig& cfg);

// Loss of one batch through the full chain (decoder in eval mode) and its
// gradient with respect to the concatenated CMT parameters.
struct CompositeGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
};
CompositeGradient composite_gradient(const std::vector<CmtModel>& models, const nn::Mlp& decoder,
                                     const SpectralGrid& grid, const Eigen::MatrixXd& spectra,
                                     Task task, std::span<const int> labels = {});

// ---------------------------------------------------------------------------
// Geometry route: optimize the continuous shape parameters through a trained
// surrogate, for every (period, thickness) pair, keeping the best.

struct GeometryFitConfig {
  double lr = 1e-2;
  int steps = 200;
  std::uint64_t seed = 0;
  int restarts = 1;  // per categorical pair
};

struct GeometryFit {
  nn::GeometryParams geometry;
  double mse = 0.0;
};

GeometryFit fit_geometry(const nn::Surrogate& surrogate, const Eigen::VectorXd& target,
                         const GeometryFitConfig& cfg);

}  // namespace spectral_codec

#pragma once

// Time-domain coupled-mode theory for a lossless resonator network driven by
// two plane-wave ports (input / output).
//
//   a(w)  = M^-1 K s+,           M = i(w - W) + K K^T / 2
//   s-(w) = C (s+ - K^T a) = C sigma(w) s+,   sigma = I - K^T M^-1 K
//
// W = diag(resonance_freqs) in rad/fs, K is real (n_modes x 2), C is a
// constant unitary background (port swap by default, i.e. unit background
// transmission). sigma is unitary for any real W and K.

#include <complex>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <Eigen/Dense>

#include "spectral_codec/spectra.hpp"

namespace spectral_codec {

using Complex = std::complex<double>;

// Transmission curve sampled on a grid, one value per band.
using ProjectorCurve = Eigen::VectorXd;

class CmtModel {
 public:
  static constexpr int kPorts = 2;

  CmtModel(Eigen::VectorXd resonance_freqs, Eigen::MatrixXd coupling,
           Eigen::Matrix2cd background = port_swap());

  static Eigen::Matrix2cd port_swap();

  int n_modes() const { return static_cast<int>(resonance_freqs_.size()); }
  const Eigen::VectorXd& resonance_freqs() const { return resonance_freqs_; }
  const Eigen::MatrixXd& coupling() const { return coupling_; }
  const Eigen::Matrix2cd& background() const { return background_; }

  // Flat parameter vector [w_1 .. w_n, K(0,0), K(0,1), K(1,0), ...].
  // Gradients use the same ordering.
  int n_params() const { return 3 * n_modes(); }
  Eigen::VectorXd parameters() const;
  CmtModel with_parameters(const Eigen::VectorXd& params) const;

  bool operator==(const CmtModel&) const = default;

 private:
  Eigen::VectorXd resonance_freqs_;
  Eigen::MatrixXd coupling_;
  Eigen::Matrix2cd background_;
};

struct PortWaves {
  Eigen::Vector2cd s_plus;
  Eigen::Vector2cd s_minus;
};

using ModeAmplitudes = Eigen::VectorXcd;

// Throws ErrorKind::Singular when cond(M) > 1e14.
ModeAmplitudes mode_amplitudes(const CmtModel& model, double omega,
                               const Eigen::Vector2cd& s_plus);
Eigen::Matrix2cd scattering_sigma(const CmtModel& model, double omega);
Eigen::Matrix2cd transfer(const CmtModel& model, double omega);
PortWaves scatter(const CmtModel& model, double omega, const Eigen::Vector2cd& s_plus);

// |H_21|^2 at one frequency.
double transmission(const CmtModel& model, double omega);

// |H_21(w_b)|^2 on every band of the grid.
ProjectorCurve transmission_response(const CmtModel& model, const SpectralGrid& grid);

struct TransmissionGradient {
  ProjectorCurve values;     // bands
  Eigen::MatrixXd jacobian;  // bands x n_params, ordering of CmtModel::parameters
};

// Analytic derivative of |H_21|^2 with respect to every resonance frequency
// and coupling entry, through dM^-1 = -M^-1 dM M^-1.
TransmissionGradient grad_transmission(const CmtModel& model, const SpectralGrid& grid);
// Single-frequency version; writes n_params entries into `grad`.
double transmission_and_gradient(const CmtModel& model, double omega,
                                 Eigen::Ref<Eigen::VectorXd> grad);

// Plain-text model documents.
std::string to_text(const CmtModel& model);
CmtModel model_from_text(const std::string& text);
void save_model(const CmtModel& model, const std::filesystem::path& path);
CmtModel load_model(const std::filesystem::path& path);

}  // namespace spectral_codec

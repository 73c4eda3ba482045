#pragma once

// Data-parallel inner loops. Each OpenMP kernel has a serial reference twin
// with the obvious loop structure; tests pin the two against each other and
// bench/ times them side by side.

#include <cstddef>
#include <span>

#include <Eigen/Dense>

namespace spectral_codec {
class CmtModel;
struct TransmissionGradient;
}  // namespace spectral_codec

namespace spectral_codec::kernels {

// Thread count used by the parallel kernels. n <= 0 restores the default
// (SPECTRAL_CODEC_THREADS if set, else the OpenMP default).
void set_threads(int n);
int threads();

// out(:, j) = A * in(:, j) for every column j. `in` is column-major with
// A.cols() rows; `out` is column-major with A.rows() rows. Used for both the
// encoder (A = weighted projector curves) and the linear decoder.
void project_columns(const Eigen::MatrixXd& A, std::span<const double> in,
                     std::span<double> out);
void project_columns_reference(const Eigen::MatrixXd& A, std::span<const double> in,
                               std::span<double> out);

// |H_21|^2 at every frequency. Singular points are reported with their index.
Eigen::VectorXd transmission_sweep(const CmtModel& model, std::span<const double> omegas);
Eigen::VectorXd transmission_sweep_reference(const CmtModel& model,
                                             std::span<const double> omegas);

TransmissionGradient transmission_gradient_sweep(const CmtModel& model,
                                                 std::span<const double> omegas);

}  // namespace spectral_codec::kernels

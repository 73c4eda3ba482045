#include "spectral_codec/kernels.hpp"

#include <cstdlib>
#include <exception>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "spectral_codec/cmt.hpp"
#include "spectral_codec/error.hpp"

namespace spectral_codec::kernels {

namespace {

int g_threads = 0;

int env_threads() {
  if (const char* env = std::getenv("SPECTRAL_CODEC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 0;
}

int resolved_threads() {
  if (g_threads > 0) return g_threads;
  if (const int n = env_threads(); n > 0) return n;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

constexpr Eigen::Index kColumnBlock = 2048;

// Runs body(i) for i in [0, n) in parallel; the first error (lowest index) is
// rethrown on the calling thread, decorated with the failing index.
template <typename Body>
void parallel_indexed(std::ptrdiff_t n, const char* what, Body&& body) {
  std::ptrdiff_t first_bad = n;
  std::exception_ptr error;
#pragma omp parallel for schedule(static) num_threads(resolved_threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(spectral_codec_kernel_error)
      if (i < first_bad) {
        first_bad = i;
        error = std::current_exception();
      }
    }
  }
  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const Error& e) {
      fail(e.kind(), std::string(what) + " " + std::to_string(first_bad) + ": " + e.what());
    }
  }
}

}  // namespace

void set_threads(int n) { g_threads = n > 0 ? n : 0; }

int threads() { return resolved_threads(); }

void project_columns(const Eigen::MatrixXd& A, std::span<const double> in,
                     std::span<double> out) {
  const Eigen::Index rows_in = A.cols(), rows_out = A.rows();
  require(rows_in > 0 && in.size() % static_cast<std::size_t>(rows_in) == 0,
          ErrorKind::InvalidArgument, "input length is not a multiple of A.cols()");
  const Eigen::Index cols = static_cast<Eigen::Index>(in.size()) / rows_in;
  require(out.size() == static_cast<std::size_t>(rows_out * cols),
          ErrorKind::InvalidArgument, "output length does not match A.rows() * columns");
  const Eigen::Index n_blocks = (cols + kColumnBlock - 1) / kColumnBlock;
#pragma omp parallel for schedule(static) num_threads(resolved_threads())
  for (Eigen::Index blk = 0; blk < n_blocks; ++blk) {
    const Eigen::Index c0 = blk * kColumnBlock;
    const Eigen::Index nc = std::min(kColumnBlock, cols - c0);
    Eigen::Map<const Eigen::MatrixXd> X(in.data() + c0 * rows_in, rows_in, nc);
    Eigen::Map<Eigen::MatrixXd> Y(out.data() + c0 * rows_out, rows_out, nc);
    Y.noalias() = A * X;
  }
}

void project_columns_reference(const Eigen::MatrixXd& A, std::span<const double> in,
                               std::span<double> out) {
  const auto rows_in = static_cast<std::size_t>(A.cols());
  const auto rows_out = static_cast<std::size_t>(A.rows());
  require(rows_in > 0 && in.size() % rows_in == 0, ErrorKind::InvalidArgument,
          "input length is not a multiple of A.cols()");
  const std::size_t cols = in.size() / rows_in;
  require(out.size() == rows_out * cols, ErrorKind::InvalidArgument,
          "output length does not match A.rows() * columns");
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t r = 0; r < rows_out; ++r) {
      double acc = 0.0;
      for (std::size_t b = 0; b < rows_in; ++b)
        acc += A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(b)) * in[j * rows_in + b];
      out[j * rows_out + r] = acc;
    }
}

Eigen::VectorXd transmission_sweep(const CmtModel& model, std::span<const double> omegas) {
  const auto n = static_cast<std::ptrdiff_t>(omegas.size());
  Eigen::VectorXd t(n);
  parallel_indexed(n, "band", [&](std::ptrdiff_t b) {
    t[b] = transmission(model, omegas[static_cast<std::size_t>(b)]);
  });
  return t;
}

Eigen::VectorXd transmission_sweep_reference(const CmtModel& model,
                                             std::span<const double> omegas) {
  Eigen::VectorXd t(static_cast<Eigen::Index>(omegas.size()));
  for (std::size_t b = 0; b < omegas.size(); ++b) {
    try {
      t[static_cast<Eigen::Index>(b)] = transmission(model, omegas[b]);
    } catch (const Error& e) {
      fail(e.kind(), "band " + std::to_string(b) + ": " + e.what());
    }
  }
  return t;
}

TransmissionGradient transmission_gradient_sweep(const CmtModel& model,
                                                 std::span<const double> omegas) {
  const auto n = static_cast<std::ptrdiff_t>(omegas.size());
  TransmissionGradient g{Eigen::VectorXd(n), Eigen::MatrixXd(n, model.n_params())};
  // Row-major scratch so each band writes a contiguous gradient row.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> jac(n, model.n_params());
  parallel_indexed(n, "band", [&](std::ptrdiff_t b) {
    g.values[b] = transmission_and_gradient(model, omegas[static_cast<std::size_t>(b)],
                                            jac.row(b).transpose());
  });
  g.jacobian = jac;
  return g;
}

}  // namespace spectral_codec::kernels

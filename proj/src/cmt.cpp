#include "spectral_codec/cmt.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spectral_codec/error.hpp"
#include "spectral_codec/kernels.hpp"

namespace spectral_codec {

namespace {

constexpr double kMaxCondition = 1e14;

bool is_unitary(const Eigen::Matrix2cd& c) {
  const Eigen::Matrix2cd d = c.adjoint() * c - Eigen::Matrix2cd::Identity();
  return d.cwiseAbs().maxCoeff() <= 1e-12;
}

// Factorized M = i(w - W) + K K^T / 2 at one frequency.
struct Resolvent {
  Eigen::MatrixXcd inverse;  // M^-1
  Eigen::MatrixXcd u;        // M^-1 K      (n x 2)
  Eigen::MatrixXcd v;        // K^T M^-1    (2 x n)
  Eigen::Matrix2cd t;        // K^T M^-1 K, so sigma = I - t
};

Resolvent resolve(const CmtModel& model, double omega) {
  const int n = model.n_modes();
  const auto& K = model.coupling();
  Eigen::MatrixXcd M = (0.5 * K * K.transpose()).cast<Complex>();
  for (int i = 0; i < n; ++i)
    M(i, i) += Complex(0.0, omega - model.resonance_freqs()[i]);

  Resolvent r;
  if (n == 0) {
    r.t.setZero();
    return r;
  }
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
  const double rc = lu.rcond();
  if (!(rc * kMaxCondition >= 1.0)) {
    std::ostringstream msg;
    msg << "coupled-mode matrix singular at omega = " << std::setprecision(17) << omega
        << " rad/fs (rcond " << rc << ")";
    fail(ErrorKind::Singular, msg.str());
  }
  r.inverse = lu.inverse();
  const Eigen::MatrixXcd Kc = K.cast<Complex>();
  r.u = r.inverse * Kc;
  r.v = Kc.transpose() * r.inverse;
  r.t = Kc.transpose() * r.u;
  return r;
}

}  // namespace

CmtModel::CmtModel(Eigen::VectorXd resonance_freqs, Eigen::MatrixXd coupling,
                   Eigen::Matrix2cd background)
    : resonance_freqs_(std::move(resonance_freqs)),
      coupling_(std::move(coupling)),
      background_(background) {
  require(coupling_.rows() == resonance_freqs_.size() && coupling_.cols() == kPorts,
          ErrorKind::InvalidArgument, "coupling must be n_modes x 2");
  require(resonance_freqs_.allFinite() && coupling_.allFinite(),
          ErrorKind::InvalidArgument, "non-finite CMT parameters");
  require(background_.allFinite() && is_unitary(background_), ErrorKind::InvalidArgument,
          "background scattering matrix must be unitary");
}

Eigen::Matrix2cd CmtModel::port_swap() {
  Eigen::Matrix2cd c;
  c << 0.0, 1.0, 1.0, 0.0;
  return c;
}

Eigen::VectorXd CmtModel::parameters() const {
  const int n = n_modes();
  Eigen::VectorXd p(3 * n);
  p.head(n) = resonance_freqs_;
  for (int i = 0; i < n; ++i) {
    p[n + 2 * i] = coupling_(i, 0);
    p[n + 2 * i + 1] = coupling_(i, 1);
  }
  return p;
}

CmtModel CmtModel::with_parameters(const Eigen::VectorXd& params) const {
  const int n = n_modes();
  require(params.size() == 3 * n, ErrorKind::InvalidArgument,
          "parameter vector length must be 3 * n_modes");
  Eigen::MatrixXd K(n, kPorts);
  for (int i = 0; i < n; ++i) {
    K(i, 0) = params[n + 2 * i];
    K(i, 1) = params[n + 2 * i + 1];
  }
  return CmtModel(params.head(n), std::move(K), background_);
}

ModeAmplitudes mode_amplitudes(const CmtModel& model, double omega,
                               const Eigen::Vector2cd& s_plus) {
  const auto r = resolve(model, omega);
  if (model.n_modes() == 0) return ModeAmplitudes(0);
  return r.u * s_plus;
}

Eigen::Matrix2cd scattering_sigma(const CmtModel& model, double omega) {
  return Eigen::Matrix2cd::Identity() - resolve(model, omega).t;
}

Eigen::Matrix2cd transfer(const CmtModel& model, double omega) {
  return model.background() * scattering_sigma(model, omega);
}

PortWaves scatter(const CmtModel& model, double omega, const Eigen::Vector2cd& s_plus) {
  const ModeAmplitudes a = mode_amplitudes(model, omega, s_plus);
  Eigen::Vector2cd inner = s_plus;
  if (model.n_modes() > 0) inner -= model.coupling().transpose().cast<Complex>() * a;
  return {s_plus, model.background() * inner};
}

double transmission(const CmtModel& model, double omega) {
  return std::norm(transfer(model, omega)(1, 0));
}

ProjectorCurve transmission_response(const CmtModel& model, const SpectralGrid& grid) {
  return kernels::transmission_sweep(model, grid.omegas());
}

double transmission_and_gradient(const CmtModel& model, double omega,
                                 Eigen::Ref<Eigen::VectorXd> grad) {
  const int n = model.n_modes();
  const auto r = resolve(model, omega);
  const Eigen::Matrix2cd sigma = Eigen::Matrix2cd::Identity() - r.t;
  const Eigen::Matrix2cd& C = model.background();
  // H_21 = C(1,0) sigma(0,0) + C(1,1) sigma(1,0)
  const Complex h21 = C(1, 0) * sigma(0, 0) + C(1, 1) * sigma(1, 0);
  const Complex h21_conj = std::conj(h21);
  auto chain = [&](Complex dsigma00, Complex dsigma10) {
    const Complex dh = C(1, 0) * dsigma00 + C(1, 1) * dsigma10;
    return 2.0 * std::real(h21_conj * dh);
  };
  const Complex minus_i(0.0, -1.0);
  for (int m = 0; m < n; ++m) {
    // d sigma_jl / d w_m = -i v(j,m) u(m,l)
    grad[m] = chain(minus_i * r.v(0, m) * r.u(m, 0), minus_i * r.v(1, m) * r.u(m, 0));
  }
  for (int m = 0; m < n; ++m)
    for (int p = 0; p < 2; ++p) {
      // d sigma_jl / d K_mp = -d_jp u(m,l) - v(j,m) d_lp
      //                       + (v(j,m) t(p,l) + t(j,p) u(m,l)) / 2, with l = 0
      Complex d[2];
      for (int j = 0; j < 2; ++j) {
        Complex val = 0.5 * (r.v(j, m) * r.t(p, 0) + r.t(j, p) * r.u(m, 0));
        if (j == p) val -= r.u(m, 0);
        if (p == 0) val -= r.v(j, m);
        d[j] = val;
      }
      grad[n + 2 * m + p] = chain(d[0], d[1]);
    }
  return std::norm(h21);
}

TransmissionGradient grad_transmission(const CmtModel& model, const SpectralGrid& grid) {
  return kernels::transmission_gradient_sweep(model, grid.omegas());
}

// ---------------------------------------------------------------------------

std::string to_text(const CmtModel& model) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "cmt_model 1\n";
  out << "n_modes " << model.n_modes() << "\n";
  out << "resonance_freqs";
  for (int i = 0; i < model.n_modes(); ++i) out << ' ' << model.resonance_freqs()[i];
  out << "\ncoupling\n";
  for (int i = 0; i < model.n_modes(); ++i)
    out << model.coupling()(i, 0) << ' ' << model.coupling()(i, 1) << '\n';
  out << "background";
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      out << ' ' << model.background()(r, c).real() << ' ' << model.background()(r, c).imag();
  out << '\n';
  return out.str();
}

CmtModel model_from_text(const std::string& text) {
  std::istringstream in(text);
  auto expect = [&](const char* key) {
    std::string tok;
    if (!(in >> tok) || tok != key)
      fail(ErrorKind::Format, std::string("CMT model: expected '") + key + "'");
  };
  auto number = [&] {
    double v;
    if (!(in >> v)) fail(ErrorKind::Format, "CMT model: expected a number");
    return v;
  };
  expect("cmt_model");
  if (number() != 1.0) fail(ErrorKind::Format, "CMT model: unsupported version");
  expect("n_modes");
  const double nm = number();
  if (nm < 0 || nm != std::floor(nm) || nm > 4096)
    fail(ErrorKind::Format, "CMT model: bad n_modes");
  const int n = static_cast<int>(nm);
  expect("resonance_freqs");
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = number();
  expect("coupling");
  Eigen::MatrixXd K(n, 2);
  for (int i = 0; i < n; ++i) {
    K(i, 0) = number();
    K(i, 1) = number();
  }
  expect("background");
  Eigen::Matrix2cd C;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      const double re = number();
      C(r, c) = Complex(re, number());
    }
  return CmtModel(std::move(w), std::move(K), C);
}

void save_model(const CmtModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  out << to_text(model);
}

CmtModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_text(ss.str());
}

}  // namespace spectral_codec

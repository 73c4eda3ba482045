#include "spectral_codec/projector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "binary_io.hpp"
#include "spectral_codec/error.hpp"
#include "spectral_codec/kernels.hpp"

namespace spectral_codec {

namespace {

constexpr double kMaxGramCondition = 1e12;
constexpr double kPhysicalLow = 0.02;
constexpr double kPhysicalHigh = 0.98;

Eigen::Map<const Eigen::RowVectorXd> weight_row(const SpectralGrid& grid) {
  return {grid.weights().data(), static_cast<Eigen::Index>(grid.size())};
}

}  // namespace

ProjectorBank::ProjectorBank(SpectralGrid g, Eigen::MatrixXd c)
    : grid(std::move(g)), curves(std::move(c)), affine(static_cast<std::size_t>(curves.rows())) {
  validate();
}

Eigen::MatrixXd ProjectorBank::weighted() const {
  return curves.array().rowwise() * weight_row(grid).array();
}

Eigen::MatrixXd ProjectorBank::gram() const { return weighted() * curves.transpose(); }

void ProjectorBank::validate() const {
  require(curves.rows() >= 1, ErrorKind::InvalidArgument, "projector bank needs k >= 1");
  require(static_cast<std::size_t>(curves.cols()) == grid.size(), ErrorKind::InvalidArgument,
          "projector curves do not match grid length");
  require(curves.allFinite(), ErrorKind::InvalidArgument, "projector curves not finite");
  require(affine.size() == k(), ErrorKind::InvalidArgument, "affine map count != k");
  if (physical)
    require(curves.minCoeff() >= 0.0 && curves.maxCoeff() <= 1.0, ErrorKind::InvalidArgument,
            "physical bank has values outside [0, 1]");
  if (orthonormal) {
    const Eigen::MatrixXd d =
        curves * curves.transpose() - Eigen::MatrixXd::Identity(curves.rows(), curves.rows());
    require(d.cwiseAbs().maxCoeff() <= 1e-10, ErrorKind::InvalidArgument,
            "bank flagged orthonormal but rows are not");
  }
}

ProjectorBank design_pca(const SpectraMatrix& B, const SpectralGrid& grid, std::size_t k,
                         PcaOptions options) {
  const auto bands = static_cast<std::size_t>(B.rows());
  const auto n = static_cast<std::size_t>(B.cols());
  require(bands == grid.size(), ErrorKind::InvalidArgument, "spectra rows != grid bands");
  require(k >= 1 && k <= std::min(bands, n), ErrorKind::InvalidArgument,
          "k must lie in [1, min(bands, n_pixels)]");
  require(B.allFinite(), ErrorKind::InvalidArgument, "spectra matrix not finite");

  Eigen::MatrixXd centered;
  const Eigen::MatrixXd* src = &B;
  if (options.centered) {
    centered = B.colwise() - B.rowwise().mean();
    src = &centered;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(*src, Eigen::ComputeThinU);
  require(svd.info() == Eigen::Success, ErrorKind::Singular, "SVD did not converge");

  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd rows = svd.matrixU().leftCols(kk).transpose();
  for (Eigen::Index i = 0; i < kk; ++i) {
    Eigen::Index arg = 0;
    rows.row(i).cwiseAbs().maxCoeff(&arg);
    if (rows(i, arg) < 0) rows.row(i) *= -1.0;
  }
  ProjectorBank bank(grid, std::move(rows));
  bank.orthonormal = true;
  bank.singular_values = svd.singularValues();
  bank.validate();
  return bank;
}

Barcode encode(const HsiCube& cube, const ProjectorBank& bank) {
  require(cube.grid().matches(bank.grid), ErrorKind::InvalidArgument,
          "projector bank grid does not match cube grid");
  Barcode out(cube.height(), cube.width(), bank.k());
  kernels::project_columns(bank.weighted(), cube.data(), out.data);
  return out;
}

double gram_condition(const ProjectorBank& bank) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(bank.gram(), Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

LinearDecoder::LinearDecoder(const ProjectorBank& bank)
    : grid_(bank.grid), condition_(spectral_codec::gram_condition(bank)) {
  require(condition_ <= kMaxGramCondition, ErrorKind::IllConditioned,
          "projector Gram matrix condition number " + std::to_string(condition_) +
              " exceeds 1e12");
  const Eigen::MatrixXd G = bank.gram();
  // decode = curves^T G^-1 = (G^-1 curves)^T since G is symmetric.
  decode_ = G.ldlt().solve(bank.curves).transpose();
}

HsiCube LinearDecoder::decode(const Barcode& barcode) const {
  require(barcode.k == static_cast<std::size_t>(decode_.cols()), ErrorKind::InvalidArgument,
          "barcode channel count does not match bank");
  HsiCube out(grid_, barcode.height, barcode.width);
  kernels::project_columns(decode_, barcode.data, out.data());
  return out;
}

HsiCube decode_linear(const Barcode& barcode, const ProjectorBank& bank) {
  return LinearDecoder(bank).decode(barcode);
}

ProjectorBank remap_physical(const ProjectorBank& bank) {
  ProjectorBank out = bank;
  out.orthonormal = false;
  for (Eigen::Index i = 0; i < bank.curves.rows(); ++i) {
    const double lo = bank.curves.row(i).minCoeff();
    const double hi = bank.curves.row(i).maxCoeff();
    AffineMap map;
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(hi))) {
      map.scale = 0.0;
      map.offset = std::clamp(lo, kPhysicalLow, kPhysicalHigh);
      map.degenerate = true;
    } else {
      map.scale = (kPhysicalHigh - kPhysicalLow) / (hi - lo);
      map.offset = kPhysicalLow - map.scale * lo;
    }
    for (Eigen::Index b = 0; b < bank.curves.cols(); ++b)
      out.curves(i, b) = std::clamp(map.apply(bank.curves(i, b)), 0.0, 1.0);
    out.affine[static_cast<std::size_t>(i)] = map;
  }
  out.physical = true;
  out.validate();
  return out;
}

std::vector<double> spectral_integrals(const HsiCube& cube) {
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, static_cast<Eigen::Index>(cube.bands()));
  ones.array().rowwise() *= weight_row(cube.grid()).array();
  std::vector<double> out(cube.pixels());
  kernels::project_columns(ones, cube.data(), out);
  return out;
}

Barcode affine_correct(const Barcode& physical, const ProjectorBank& bank,
                       std::span<const double> pixel_integrals) {
  require(physical.k == bank.k() && pixel_integrals.size() == physical.pixels(),
          ErrorKind::InvalidArgument, "affine correction shape mismatch");
  Barcode raw = physical;
  for (std::size_t p = 0; p < physical.pixels(); ++p)
    for (std::size_t c = 0; c < physical.k; ++c) {
      const auto& m = bank.affine[c];
      require(!m.degenerate, ErrorKind::Degenerate,
              "curve " + std::to_string(c) + " has a degenerate affine map");
      raw.data[p * physical.k + c] =
          (physical.data[p * physical.k + c] - m.offset * pixel_integrals[p]) / m.scale;
    }
  return raw;
}

// ---------------------------------------------------------------------------

void save_bank(const ProjectorBank& bank, const std::filesystem::path& path) {
  std::ostringstream h;
  h << std::setprecision(17);
  h << "HXP1\n";
  h << "k " << bank.k() << "\n";
  h << "bands " << bank.bands() << "\n";
  h << "flags";
  if (bank.orthonormal) h << " orthonormal";
  if (bank.physical) h << " physical";
  if (!bank.orthonormal && !bank.physical) h << " none";
  h << "\nwavelengths";
  for (double w : bank.grid.wavelengths()) h << ' ' << w;
  h << '\n';
  for (const auto& m : bank.affine)
    h << "affine " << m.scale << ' ' << m.offset << ' ' << (m.degenerate ? 1 : 0) << '\n';
  h << "singular_values " << bank.singular_values.size();
  for (Eigen::Index i = 0; i < bank.singular_values.size(); ++i)
    h << ' ' << bank.singular_values[i];
  h << "\nend_header\n";

  detail::Writer w;
  w.magic(h.str());
  for (Eigen::Index i = 0; i < bank.curves.rows(); ++i)
    for (Eigen::Index b = 0; b < bank.curves.cols(); ++b) w.f32(bank.curves(i, b));
  w.save(path);
}

ProjectorBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string_view all(raw.data(), raw.size());
  constexpr std::string_view kEnd = "end_header\n";
  const auto end = all.find(kEnd);
  if (all.substr(0, 5) != "HXP1\n" || end == std::string_view::npos)
    fail(ErrorKind::Format, path.string() + ": not an HXP1 projector bank");

  std::istringstream h(std::string(all.substr(5, end - 5)));
  auto expect = [&](const char* key) {
    std::string tok;
    if (!(h >> tok) || tok != key)
      fail(ErrorKind::Format, path.string() + ": expected '" + key + "' in bank header");
  };
  auto number = [&] {
    double v;
    if (!(h >> v)) fail(ErrorKind::Format, path.string() + ": bad number in bank header");
    return v;
  };
  expect("k");
  const auto k = static_cast<std::size_t>(number());
  expect("bands");
  const auto bands = static_cast<std::size_t>(number());
  expect("flags");
  bool ortho = false, phys = false;
  std::string tok;
  while (h >> tok && tok != "wavelengths") {
    if (tok == "orthonormal") ortho = true;
    else if (tok == "physical") phys = true;
    else if (tok != "none") fail(ErrorKind::Format, path.string() + ": unknown flag " + tok);
  }
  if (tok != "wavelengths") fail(ErrorKind::Format, path.string() + ": missing wavelengths");
  std::vector<double> wl(bands);
  for (auto& w : wl) w = number();
  std::vector<AffineMap> affine(k);
  for (auto& m : affine) {
    expect("affine");
    m.scale = number();
    m.offset = number();
    m.degenerate = number() != 0.0;
  }
  expect("singular_values");
  Eigen::VectorXd sv(static_cast<Eigen::Index>(number()));
  for (Eigen::Index i = 0; i < sv.size(); ++i) sv[i] = number();

  detail::Reader r(std::vector<char>(raw.begin() + static_cast<std::ptrdiff_t>(end + kEnd.size()),
                                     raw.end()),
                   path.string());
  r.need(k * bands * 4);
  Eigen::MatrixXd curves(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(bands));
  for (Eigen::Index i = 0; i < curves.rows(); ++i)
    for (Eigen::Index b = 0; b < curves.cols(); ++b) curves(i, b) = r.f32();

  ProjectorBank bank(SpectralGrid(std::move(wl)), std::move(curves));
  bank.affine = std::move(affine);
  bank.physical = phys;
  bank.singular_values = std::move(sv);
  // f32 storage cannot preserve orthonormality to 1e-10; keep the flag only
  // when the stored rows still satisfy it.
  const Eigen::MatrixXd d = bank.curves * bank.curves.transpose() -
                            Eigen::MatrixXd::Identity(bank.curves.rows(), bank.curves.rows());
  bank.orthonormal = ortho && d.cwiseAbs().maxCoeff() <= 1e-10;
  bank.validate();
  return bank;
}

void save_barcode(const Barcode& barcode, const std::filesystem::path& path) {
  require(barcode.data.size() == barcode.pixels() * barcode.k, ErrorKind::InvalidArgument,
          "barcode data length mismatch");
  detail::Writer w;
  w.magic("HXB1");
  w.u32(static_cast<std::uint32_t>(barcode.height));
  w.u32(static_cast<std::uint32_t>(barcode.width));
  w.u32(static_cast<std::uint32_t>(barcode.k));
  for (double v : barcode.data) w.f32(v);
  w.save(path);
}

Barcode load_barcode(const std::filesystem::path& path) {
  auto r = detail::Reader::from_file(path);
  r.expect_magic("HXB1");
  const std::size_t h = r.u32(), w = r.u32(), k = r.u32();
  r.need(h * w * k * 4);
  Barcode b(h, w, k);
  for (auto& v : b.data) v = r.f32();
  return b;
}

}  // namespace spectral_codec

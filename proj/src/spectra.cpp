#include "spectral_codec/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "binary_io.hpp"
#include "spectral_codec/error.hpp"

namespace spectral_codec {

double omega_from_nm(double wavelength_nm) {
  return 2.0 * std::numbers::pi * kSpeedOfLightNmPerFs / wavelength_nm;
}

SpectralGrid::SpectralGrid(std::vector<double> wavelengths_nm)
    : wavelengths_(std::move(wavelengths_nm)) {
  require(wavelengths_.size() >= 2, ErrorKind::InvalidGrid,
          "spectral grid needs at least 2 samples");
  for (std::size_t i = 0; i < wavelengths_.size(); ++i) {
    const double w = wavelengths_[i];
    require(std::isfinite(w) && w > 100.0 && w < 20000.0, ErrorKind::InvalidGrid,
            "wavelength out of (100, 20000) nm: " + std::to_string(w));
    if (i > 0)
      require(w > wavelengths_[i - 1], ErrorKind::InvalidGrid,
              "wavelengths must be strictly increasing");
  }
  const std::size_t n = wavelengths_.size();
  omegas_.resize(n);
  for (std::size_t i = 0; i < n; ++i) omegas_[i] = omega_from_nm(wavelengths_[i]);
  // omega decreases along the grid; each interval contributes half its width
  // to both endpoints.
  weights_.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = omegas_[i] - omegas_[i + 1];
    weights_[i] += 0.5 * h;
    weights_[i + 1] += 0.5 * h;
  }
}

SpectralGrid SpectralGrid::uniform(double start_nm, double stop_nm,
                                   double step_nm) {
  require(step_nm > 0 && stop_nm > start_nm, ErrorKind::InvalidGrid,
          "uniform grid needs start < stop and step > 0");
  const auto n =
      static_cast<std::size_t>(std::floor((stop_nm - start_nm) / step_nm + 1e-9)) + 1;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = start_nm + step_nm * static_cast<double>(i);
  return SpectralGrid(std::move(w));
}

SpectralGrid SpectralGrid::desk_default() { return uniform(400.0, 700.0, 10.0); }

bool SpectralGrid::matches(const SpectralGrid& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (std::abs(wavelengths_[i] - other.wavelengths_[i]) > 1e-4) return false;
  return true;
}

HsiCube::HsiCube(SpectralGrid grid, std::size_t height, std::size_t width)
    : grid_(std::move(grid)), height_(height), width_(width) {
  data_.assign(height_ * width_ * grid_.size(), 0.0);
}

HsiCube::HsiCube(SpectralGrid grid, std::size_t height, std::size_t width,
                 std::vector<double> data)
    : grid_(std::move(grid)), height_(height), width_(width), data_(std::move(data)) {
  require(data_.size() == height_ * width_ * grid_.size(), ErrorKind::InvalidArgument,
          "cube data length does not match height*width*bands");
}

bool HsiCube::operator==(const HsiCube& o) const {
  if (height_ != o.height_ || width_ != o.width_) return false;
  if (!std::ranges::equal(grid_.wavelengths(), o.grid_.wavelengths())) return false;
  return data_ == o.data_;
}

SpectraMatrix flatten(const HsiCube& cube) {
  // (y, x, band) with band fastest is exactly column-major bands x pixels.
  return Eigen::Map<const Eigen::MatrixXd>(cube.data().data(),
                                           static_cast<Eigen::Index>(cube.bands()),
                                           static_cast<Eigen::Index>(cube.pixels()));
}

HsiCube deflatten(const SpectraMatrix& spectra, const SpectralGrid& grid,
                  std::size_t height, std::size_t width) {
  require(static_cast<std::size_t>(spectra.rows()) == grid.size() &&
              static_cast<std::size_t>(spectra.cols()) == height * width,
          ErrorKind::InvalidArgument, "spectra matrix shape does not match cube");
  std::vector<double> data(spectra.data(), spectra.data() + spectra.size());
  return HsiCube(grid, height, width, std::move(data));
}

HsiCube normalize_white(const HsiCube& cube, const Rect& region) {
  require(region.height > 0 && region.width > 0 &&
              region.y0 + region.height <= cube.height() &&
              region.x0 + region.width <= cube.width(),
          ErrorKind::InvalidArgument, "white region outside image or empty");
  const std::size_t nb = cube.bands();
  std::vector<double> white(nb, 0.0);
  for (std::size_t y = region.y0; y < region.y0 + region.height; ++y)
    for (std::size_t x = region.x0; x < region.x0 + region.width; ++x) {
      auto px = cube.pixel(y, x);
      for (std::size_t b = 0; b < nb; ++b) white[b] += px[b];
    }
  const double count = static_cast<double>(region.height * region.width);
  for (std::size_t b = 0; b < nb; ++b) {
    white[b] /= count;
    require(white[b] > 1e-9, ErrorKind::Degenerate,
            "white reference band " + std::to_string(b) + " is <= 1e-9");
  }
  HsiCube out = cube;
  auto d = out.data();
  for (std::size_t p = 0; p < cube.pixels(); ++p)
    for (std::size_t b = 0; b < nb; ++b) d[p * nb + b] /= white[b];
  return out;
}

LabelMask::LabelMask(std::size_t h, std::size_t w,
                     std::vector<std::string> class_names)
    : height(h), width(w), labels(h * w, 0), classes(std::move(class_names)) {}

void LabelMask::validate() const {
  require(labels.size() == height * width, ErrorKind::InvalidArgument,
          "mask label count does not match height*width");
  for (auto l : labels)
    require(l < classes.size(), ErrorKind::InvalidArgument,
            "mask label " + std::to_string(l) + " outside class table");
}

RgbResponse RgbResponse::gaussian_default(const SpectralGrid& grid) {
  constexpr double centers[3] = {600.0, 550.0, 450.0};
  constexpr double sigma = 30.0;
  RgbResponse r{grid, Eigen::Matrix<double, 3, Eigen::Dynamic>(3, grid.size())};
  const auto wl = grid.wavelengths();
  for (int c = 0; c < 3; ++c)
    for (std::size_t b = 0; b < grid.size(); ++b) {
      const double d = (wl[b] - centers[c]) / sigma;
      r.curves(c, static_cast<Eigen::Index>(b)) = std::exp(-0.5 * d * d);
    }
  return r;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> RgbResponse::integration_matrix() const {
  auto w = grid.weights();
  Eigen::Map<const Eigen::RowVectorXd> wv(w.data(), static_cast<Eigen::Index>(w.size()));
  return curves.array().rowwise() * wv.array();
}

RgbImage to_rgb(const HsiCube& cube, const RgbResponse& response) {
  require(cube.grid().matches(response.grid), ErrorKind::InvalidArgument,
          "RGB response grid does not match cube grid");
  const auto R = response.integration_matrix();
  const SpectraMatrix B = flatten(cube);
  Eigen::Matrix<double, 3, Eigen::Dynamic> rgb = R * B;
  RgbImage img{cube.height(), cube.width(), {}};
  const double peak = rgb.size() ? rgb.maxCoeff() : 0.0;
  if (peak > 0.0) rgb /= peak;
  img.data.assign(rgb.data(), rgb.data() + rgb.size());
  return img;
}

// ---------------------------------------------------------------------------

SceneSpec default_scene_spec() {
  SceneSpec s;
  s.background = {"background", 0.15, {{500.0, 120.0, 0.10}}, 0.05};
  s.classes = {
      {"orange", 0.05, {{620.0, 50.0, 0.60}, {560.0, 40.0, 0.20}}, 0.08},
      {"lime", 0.06, {{540.0, 40.0, 0.50}, {470.0, 30.0, 0.10}}, 0.08},
      {"grape", 0.10, {{420.0, 50.0, 0.35}, {680.0, 60.0, 0.25}}, 0.08},
      {"artificial grape", 0.10, {}, 0.08},
  };
  s.metamer = MetamerRequest{3, 4, 0.2};
  return s;
}

namespace {

Eigen::VectorXd bump_spectrum(const ClassSpec& c, const SpectralGrid& grid) {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid.size()), c.baseline);
  const auto wl = grid.wavelengths();
  for (const auto& bump : c.bumps)
    for (std::size_t b = 0; b < grid.size(); ++b) {
      const double d = (wl[b] - bump.center_nm) / bump.width_nm;
      s[static_cast<Eigen::Index>(b)] += bump.amplitude * std::exp(-0.5 * d * d);
    }
  return s;
}

// s2 = s1 + n with R n = 0, ||n|| >= rel * ||s1||, s2 inside [0, 1].
Eigen::VectorXd metamer_of(const Eigen::VectorXd& s1, const SpectralGrid& grid,
                           double rel, std::uint64_t seed) {
  const auto R = RgbResponse::gaussian_default(grid).integration_matrix();
  const Eigen::Index nb = s1.size();
  require(nb > 3, ErrorKind::Infeasible,
          "metamer request infeasible: RGB null space is empty for " +
              std::to_string(nb) + " bands");
  // Orthonormal basis of range(R^T); n = v - Q Q^T v lies in null(R).
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(R.transpose());
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(nb, 3);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  const double target = s1.norm();
  for (int attempt = 0; attempt < 64; ++attempt) {
    Eigen::VectorXd v(nb);
    double a[4], ph[4];
    for (int m = 0; m < 4; ++m) { a[m] = amp(rng) / (m + 1); ph[m] = phase(rng); }
    for (Eigen::Index b = 0; b < nb; ++b) {
      const double t = static_cast<double>(b) / static_cast<double>(nb - 1);
      v[b] = 0.0;
      for (int m = 0; m < 4; ++m)
        v[b] += a[m] * std::cos(std::numbers::pi * (m + 1) * t + ph[m]);
    }
    Eigen::VectorXd n = v - Q * (Q.transpose() * v);
    if (n.norm() < 1e-12) continue;
    n.normalize();
    for (double scale = 1.5 * rel; scale >= rel - 1e-15; scale -= 0.05 * rel) {
      const Eigen::VectorXd s2 = s1 + scale * target * n;
      if (s2.minCoeff() >= 0.0 && s2.maxCoeff() <= 1.0) {
        const Eigen::VectorXd diff = s2 - s1;
        require((R * diff).cwiseAbs().maxCoeff() <= 1e-6, ErrorKind::Infeasible,
                "metamer construction lost RGB equality");
        return s2;
      }
    }
  }
  fail(ErrorKind::Infeasible,
       "metamer request infeasible: no null-space direction keeps the spectrum in [0, 1]");
}

}  // namespace

Eigen::MatrixXd class_spectra(const SceneSpec& spec) {
  const auto nb = static_cast<Eigen::Index>(spec.grid.size());
  const auto nc = static_cast<Eigen::Index>(spec.classes.size() + 1);
  Eigen::MatrixXd S(nb, nc);
  S.col(0) = bump_spectrum(spec.background, spec.grid);
  for (Eigen::Index c = 1; c < nc; ++c)
    S.col(c) = bump_spectrum(spec.classes[static_cast<std::size_t>(c - 1)], spec.grid);
  if (spec.metamer) {
    const auto& m = *spec.metamer;
    require(m.base_class >= 1 && m.base_class < static_cast<std::size_t>(nc) &&
                m.derived_class >= 1 && m.derived_class < static_cast<std::size_t>(nc) &&
                m.base_class != m.derived_class,
            ErrorKind::InvalidArgument, "metamer request refers to unknown classes");
    S.col(static_cast<Eigen::Index>(m.derived_class)) =
        metamer_of(S.col(static_cast<Eigen::Index>(m.base_class)), spec.grid,
                   m.min_relative_difference, spec.spectra_seed);
  }
  return S;
}

Scene synth_scene(const SceneSpec& spec, std::uint64_t seed) {
  require(!spec.classes.empty(), ErrorKind::InvalidArgument, "scene needs >= 1 object class");
  require(spec.height > 0 && spec.width > 0, ErrorKind::InvalidArgument, "empty scene");
  require(spec.objects_min >= 1 && spec.objects_max >= spec.objects_min,
          ErrorKind::InvalidArgument, "bad object count range");

  const Eigen::MatrixXd S = class_spectra(spec);
  std::vector<std::string> names{spec.background.name};
  for (const auto& c : spec.classes) names.push_back(c.name);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t h = spec.height, w = spec.width, nb = spec.grid.size();

  LabelMask mask(h, w, names);
  std::vector<double> brightness{1.0 + spec.background.brightness_jitter * (2 * unit(rng) - 1)};
  std::vector<std::uint16_t> instance(h * w, 0);

  std::uniform_int_distribution<std::size_t> count(spec.objects_min, spec.objects_max);
  std::uniform_int_distribution<std::size_t> pick(1, spec.classes.size());
  const std::size_t n_objects = count(rng);
  const double extent = static_cast<double>(std::min(h, w));
  // Ellipses painted in order; later objects occlude earlier ones.
  for (std::size_t o = 0; o < n_objects; ++o) {
    const auto cls = static_cast<std::uint16_t>(pick(rng));
    const double j = spec.classes[cls - 1].brightness_jitter;
    brightness.push_back(1.0 + j * (2 * unit(rng) - 1));
    const double cy = unit(rng) * static_cast<double>(h);
    const double cx = unit(rng) * static_cast<double>(w);
    const double ry = std::max(0.75, (0.08 + 0.12 * unit(rng)) * extent);
    const double rx = std::max(0.75, (0.08 + 0.12 * unit(rng)) * extent);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) {
          mask.labels[y * w + x] = cls;
          instance[y * w + x] = static_cast<std::uint16_t>(o + 1);
        }
      }
  }

  HsiCube cube(spec.grid, h, w);
  std::normal_distribution<double> noise(0.0, spec.pixel_noise);
  for (std::size_t p = 0; p < h * w; ++p) {
    const auto cls = static_cast<Eigen::Index>(mask.labels[p]);
    const double a = brightness[instance[p]];
    for (std::size_t b = 0; b < nb; ++b) {
      const double v = a * S(static_cast<Eigen::Index>(b), cls) +
                       (spec.pixel_noise > 0 ? noise(rng) : 0.0);
      cube.data()[p * nb + b] = std::max(0.0, v);
    }
  }
  return {std::move(cube), std::move(mask)};
}

// ---------------------------------------------------------------------------

void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
  detail::Writer w;
  w.magic("HXC1");
  w.u32(static_cast<std::uint32_t>(cube.height()));
  w.u32(static_cast<std::uint32_t>(cube.width()));
  w.u32(static_cast<std::uint32_t>(cube.bands()));
  for (double wl : cube.grid().wavelengths()) w.f32(wl);
  for (double v : cube.data()) w.f32(v);
  w.save(path);
}

HsiCube load_cube(const std::filesystem::path& path) {
  auto r = detail::Reader::from_file(path);
  r.expect_magic("HXC1");
  const std::size_t h = r.u32(), w = r.u32(), nb = r.u32();
  r.need(nb * 4);
  std::vector<double> wl(nb);
  for (auto& v : wl) v = r.f32();
  for (std::size_t i = 1; i < nb; ++i)
    require(wl[i] > wl[i - 1], ErrorKind::InvalidGrid,
            r.name() + ": wavelengths not strictly increasing");
  SpectralGrid grid(std::move(wl));
  const std::size_t n = h * w * nb;
  r.need(n * 4);
  std::vector<double> data(n);
  for (auto& v : data) v = r.f32();
  return HsiCube(std::move(grid), h, w, std::move(data));
}

void save_mask(const LabelMask& mask, const std::filesystem::path& path) {
  mask.validate();
  detail::Writer w;
  w.magic("HXM1");
  w.u32(static_cast<std::uint32_t>(mask.height));
  w.u32(static_cast<std::uint32_t>(mask.width));
  for (auto l : mask.labels) w.u16(l);
  w.u32(static_cast<std::uint32_t>(mask.classes.size()));
  for (const auto& name : mask.classes) w.str(name);
  w.save(path);
}

LabelMask load_mask(const std::filesystem::path& path) {
  auto r = detail::Reader::from_file(path);
  r.expect_magic("HXM1");
  LabelMask m;
  m.height = r.u32();
  m.width = r.u32();
  r.need(m.height * m.width * 2);
  m.labels.resize(m.height * m.width);
  for (auto& l : m.labels) l = r.u16();
  const std::size_t nc = r.u32();
  m.classes.reserve(nc);
  for (std::size_t c = 0; c < nc; ++c) m.classes.push_back(r.str());
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, r.name() + ": " + e.what());
  }
  return m;
}

}  // namespace spectral_codec

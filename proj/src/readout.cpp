#include "spectral_codec/readout.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spectral_codec/error.hpp"
#include "spectral_codec/kernels.hpp"

namespace spectral_codec {

void ReadoutConfig::validate() const {
  require(bit_depth >= 8 && bit_depth <= 16, ErrorKind::InvalidArgument,
          "bit_depth must lie in [8, 16]");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorKind::InvalidArgument,
          "noise_sigma must be >= 0");
}

std::vector<double> sensor_gains(const Barcode& barcode, const ReadoutConfig& cfg) {
  cfg.validate();
  const std::size_t k = barcode.k;
  switch (cfg.gain) {
    case GainMode::Fixed: {
      require(cfg.fixed_gains.size() == k, ErrorKind::InvalidArgument,
              "fixed gains must have one entry per channel");
      for (double g : cfg.fixed_gains)
        require(g > 0.0 && std::isfinite(g), ErrorKind::Degenerate, "fixed gain must be > 0");
      return cfg.fixed_gains;
    }
    case GainMode::PerChannelMax: {
      std::vector<double> g(k, 0.0);
      for (std::size_t p = 0; p < barcode.pixels(); ++p)
        for (std::size_t c = 0; c < k; ++c) g[c] = std::max(g[c], barcode.data[p * k + c]);
      for (std::size_t c = 0; c < k; ++c)
        require(g[c] > 0.0, ErrorKind::Degenerate,
                "channel " + std::to_string(c) + " is all zero; per-channel gain undefined");
      return g;
    }
    case GainMode::GlobalMax: {
      double m = 0.0;
      for (double v : barcode.data) m = std::max(m, v);
      require(m > 0.0, ErrorKind::Degenerate, "barcode is all zero; global gain undefined");
      return std::vector<double>(k, m);
    }
  }
  return {};
}

std::vector<double> white_reference_gains(const ProjectorBank& bank, double headroom) {
  const Eigen::VectorXd white = bank.weighted().rowwise().sum() * headroom;
  return {white.data(), white.data() + white.size()};
}

Barcode read_sensor(const Barcode& barcode, const ReadoutConfig& cfg) {
  for (double v : barcode.data)
    require(v >= 0.0 && std::isfinite(v), ErrorKind::InvalidArgument,
            "sensor input must be finite and non-negative");
  const auto gains = sensor_gains(barcode, cfg);
  const double fs = cfg.full_scale();
  const std::size_t k = barcode.k;
  const auto n = static_cast<std::ptrdiff_t>(barcode.pixels());
  Barcode out(barcode.height, barcode.width, k);
  const bool noisy = cfg.noise_sigma > 0.0;

#pragma omp parallel for schedule(static) num_threads(kernels::threads())
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    std::mt19937_64 rng(cfg.seed ^ static_cast<std::uint64_t>(p));
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma * fs);
    const auto base = static_cast<std::size_t>(p) * k;
    for (std::size_t c = 0; c < k; ++c) {
      double v = barcode.data[base + c] / gains[c] * fs;
      if (noisy) v += noise(rng);
      out.data[base + c] = std::round(std::clamp(v, 0.0, fs));
    }
  }
  return out;
}

Barcode dequantize(const Barcode& counts, std::span<const double> gains, const ReadoutConfig& cfg) {
  cfg.validate();
  require(gains.size() == counts.k, ErrorKind::InvalidArgument,
          "one gain per channel required");
  const double fs = cfg.full_scale();
  Barcode out = counts;
  for (std::size_t p = 0; p < counts.pixels(); ++p)
    for (std::size_t c = 0; c < counts.k; ++c) out.data[p * counts.k + c] *= gains[c] / fs;
  return out;
}

}  // namespace spectral_codec

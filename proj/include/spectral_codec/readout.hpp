#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spectral_codec/projector.hpp"

namespace spectral_codec {

enum class GainMode {
  PerChannelMax,  // each channel scaled by its own image maximum
  GlobalMax,      // one gain for all channels: the image maximum
  Fixed,          // caller-supplied per-channel gains (exposure held fixed)
};

// Monochrome camera behind the projector array.
struct ReadoutConfig {
  int bit_depth = 8;
  double noise_sigma = 0.0;  // additive Gaussian, fraction of full scale
  GainMode gain = GainMode::PerChannelMax;
  std::vector<double> fixed_gains;  // GainMode::Fixed only, one per channel
  std::uint64_t seed = 0;

  double full_scale() const { return static_cast<double>((1u << bit_depth) - 1u); }
  void validate() const;
};

// Gains (barcode value mapped to full scale) for this barcode and config.
std::vector<double> sensor_gains(const Barcode& barcode, const ReadoutConfig& cfg);

// Barcode a perfect white reflector (beta = 1) produces, times `headroom`.
// Suitable as GainMode::Fixed gains so one exposure serves a whole corpus.
std::vector<double> white_reference_gains(const ProjectorBank& bank, double headroom = 1.05);

// Scales to full range, adds seeded noise (pixel p uses seed ^ p), clamps to
// [0, 2^bits - 1] and rounds. Values are integer counts stored as doubles.
Barcode read_sensor(const Barcode& barcode, const ReadoutConfig& cfg);

// Counts back to barcode units: counts * gain / full_scale.
Barcode dequantize(const Barcode& counts, std::span<const double> gains, const ReadoutConfig& cfg);

}  // namespace spectral_codec

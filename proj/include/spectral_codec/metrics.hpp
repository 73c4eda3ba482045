#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spectral_codec/spectra.hpp"

namespace spectral_codec {

// Root-mean-square error over all pixels and bands, scaled by 255 so it reads
// as an error in 8-bit pixel intensity. Truth must be white-normalized.
double rmse255(const HsiCube& pred, const HsiCube& truth);

struct RmseReport {
  std::vector<double> per_image;
  double mean = 0.0;
  double std = 0.0;  // population std over images
};

RmseReport dataset_rmse(std::span<const HsiCube> preds, std::span<const HsiCube> truths);

struct ClassStats {
  double iou = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  // Some score had a zero denominator and was reported as 0.
  bool degenerate = false;
};

struct SegReport {
  std::vector<std::string> classes;
  std::vector<ClassStats> per_class;
  // confusion[t * n + p] = pixels of true class t predicted as p.
  std::vector<std::uint64_t> confusion;
  ClassStats total;                     // unweighted mean over all classes
  ClassStats total_without_background;  // same, class 0 excluded

  std::size_t n_classes() const { return classes.size(); }
  std::uint64_t count(std::size_t truth, std::size_t pred) const {
    return confusion[truth * classes.size() + pred];
  }
};

SegReport segmentation_stats(const LabelMask& pred, const LabelMask& truth);

double miou(const SegReport& report, bool include_background);

// Aligned text table: one row per class with IoU F1 Prec Recall Acc, then the
// two total rows and the confusion matrix.
std::string format_seg_report(const SegReport& report);
std::string format_rmse_report(const RmseReport& report);

// Machine-readable JSON renderings.
std::string seg_report_json(const SegReport& report);
std::string rmse_report_json(const RmseReport& report);

}  // namespace spectral_codec

#include "spectral_codec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "spectral_codec/error.hpp"

namespace spectral_codec {

double rmse255(const HsiCube& pred, const HsiCube& truth) {
  require(pred.height() == truth.height() && pred.width() == truth.width() &&
              pred.grid().matches(truth.grid()),
          ErrorKind::InvalidArgument, "rmse255: cube dimensions or grids differ");
  const auto p = pred.data();
  const auto t = truth.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i] >= -1e-9 && t[i] <= 1.05 + 1e-9, ErrorKind::InvalidArgument,
            "rmse255: truth is not white-normalized to [0, 1]");
    const double d = p[i] - t[i];
    sum += d * d;
  }
  return t.empty() ? 0.0 : 255.0 * std::sqrt(sum / static_cast<double>(t.size()));
}

RmseReport dataset_rmse(std::span<const HsiCube> preds, std::span<const HsiCube> truths) {
  require(!preds.empty(), ErrorKind::InvalidArgument, "dataset_rmse: empty list");
  require(preds.size() == truths.size(), ErrorKind::InvalidArgument,
          "dataset_rmse: prediction and truth lists differ in length");
  RmseReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) r.per_image.push_back(rmse255(preds[i], truths[i]));
  const double n = static_cast<double>(r.per_image.size());
  for (double v : r.per_image) r.mean += v;
  r.mean /= n;
  for (double v : r.per_image) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / n);
  return r;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

ClassStats mean_of(std::span<const ClassStats> s) {
  ClassStats m;
  if (s.empty()) return m;
  for (const auto& c : s) {
    m.iou += c.iou;
    m.f1 += c.f1;
    m.precision += c.precision;
    m.recall += c.recall;
    m.accuracy += c.accuracy;
    m.degenerate = m.degenerate || c.degenerate;
  }
  const double n = static_cast<double>(s.size());
  m.iou /= n;
  m.f1 /= n;
  m.precision /= n;
  m.recall /= n;
  m.accuracy /= n;
  return m;
}

}  // namespace

SegReport segmentation_stats(const LabelMask& pred, const LabelMask& truth) {
  require(pred.height == truth.height && pred.width == truth.width, ErrorKind::InvalidArgument,
          "segmentation_stats: mask dimensions differ");
  require(pred.classes == truth.classes, ErrorKind::InvalidArgument,
          "segmentation_stats: class tables differ");
  pred.validate();
  truth.validate();
  const std::size_t n = truth.classes.size();
  SegReport r;
  r.classes = truth.classes;
  r.confusion.assign(n * n, 0);
  for (std::size_t i = 0; i < truth.labels.size(); ++i)
    ++r.confusion[truth.labels[i] * n + pred.labels[i]];

  const auto total = static_cast<std::uint64_t>(truth.labels.size());
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t tp = r.confusion[c * n + c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      fn += r.confusion[c * n + o];
      fp += r.confusion[o * n + c];
    }
    const std::uint64_t tn = total - tp - fp - fn;
    ClassStats s;
    s.iou = ratio(tp, tp + fp + fn, s.degenerate);
    s.f1 = ratio(2 * tp, 2 * tp + fp + fn, s.degenerate);
    s.precision = ratio(tp, tp + fp, s.degenerate);
    s.recall = ratio(tp, tp + fn, s.degenerate);
    s.accuracy = ratio(tp + tn, total, s.degenerate);
    r.per_class.push_back(s);
  }
  r.total = mean_of(r.per_class);
  if (n > 1) r.total_without_background = mean_of(std::span(r.per_class).subspan(1));
  return r;
}

double miou(const SegReport& report, bool include_background) {
  const std::size_t first = include_background ? 0 : 1;
  if (report.per_class.size() <= first) return 0.0;
  double s = 0.0;
  for (std::size_t c = first; c < report.per_class.size(); ++c) s += report.per_class[c].iou;
  return s / static_cast<double>(report.per_class.size() - first);
}

std::string format_seg_report(const SegReport& report) {
  std::size_t width = std::string("total(-background)").size();
  for (const auto& c : report.classes) width = std::max(width, c.size());
  std::ostringstream out;
  char buf[128];
  auto row = [&](const std::string& name, const ClassStats& s) {
    std::snprintf(buf, sizeof buf, " %.4f %.4f %.4f %.4f %.4f%s\n", s.iou, s.f1, s.precision,
                  s.recall, s.accuracy, s.degenerate ? " *" : "");
    out << name << std::string(width - name.size(), ' ') << buf;
  };
  out << "class" << std::string(width - 5, ' ') << " IoU    F1     Prec   Recall Acc\n";
  for (std::size_t c = 0; c < report.classes.size(); ++c) row(report.classes[c], report.per_class[c]);
  row("total", report.total);
  if (report.n_classes() > 1) row("total(-background)", report.total_without_background);
  out << "\nconfusion (rows = truth, cols = prediction)\n";
  for (std::size_t t = 0; t < report.n_classes(); ++t) {
    out << report.classes[t] << std::string(width - report.classes[t].size(), ' ');
    for (std::size_t p = 0; p < report.n_classes(); ++p) out << ' ' << report.count(t, p);
    out << '\n';
  }
  return out.str();
}

std::string format_rmse_report(const RmseReport& report) {
  std::ostringstream out;
  char buf[96];
  for (std::size_t i = 0; i < report.per_image.size(); ++i) {
    std::snprintf(buf, sizeof buf, "image %zu  rmse255 %.4f\n", i, report.per_image[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "mean %.4f +- %.4f\n", report.mean, report.std);
  out << buf;
  return out.str();
}

namespace {
nlohmann::json stats_json(const ClassStats& s) {
  return {{"iou", s.iou},           {"f1", s.f1},
          {"precision", s.precision}, {"recall", s.recall},
          {"accuracy", s.accuracy},   {"degenerate", s.degenerate}};
}
}  // namespace

std::string seg_report_json(const SegReport& report) {
  nlohmann::json j;
  j["classes"] = report.classes;
  for (const auto& c : report.per_class) j["per_class"].push_back(stats_json(c));
  j["confusion"] = report.confusion;
  j["total"] = stats_json(report.total);
  j["total_without_background"] = stats_json(report.total_without_background);
  j["miou"] = miou(report, true);
  j["miou_without_background"] = miou(report, false);
  return j.dump(2);
}

std::string rmse_report_json(const RmseReport& report) {
  nlohmann::json j{{"per_image", report.per_image}, {"mean", report.mean}, {"std", report.std}};
  return j.dump(2);
}

}  // namespace spectral_codec

#include "spectral_codec/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <omp.h>

#include <json.hpp>

#include "spectral_codec/kernels.hpp"

namespace spectral_codec {

void FitConfig::validate() const {
  require(n_modes >= 1, ErrorKind::InvalidArgument, "n_modes must be >= 1");
  require(lr > 0.0, ErrorKind::InvalidArgument, "fit lr must be positive");
  require(epochs >= 1 && steps_per_epoch >= 1, ErrorKind::InvalidArgument,
          "fit epochs must be positive");
  require(restarts >= 1, ErrorKind::InvalidArgument, "fit restarts must be positive");
  require(coupling_lo > 0.0 && coupling_hi >= coupling_lo, ErrorKind::InvalidArgument,
          "coupling init range must satisfy 0 < lo <= hi");
}

nn::AdamConfig FitConfig::adam() const {
  nn::AdamConfig a;
  a.lr = lr;
  a.step_size = step_size;
  a.gamma = gamma;
  return a;
}

double curve_mse(const CmtModel& model, const SpectralGrid& grid, const Eigen::VectorXd& target) {
  return (transmission_response(model, grid) - target).squaredNorm() /
         static_cast<double>(target.size());
}

CmtModel constant_curve_model(double value, const SpectralGrid& grid, int n_modes) {
  require(value >= 0.0 && value <= 1.0, ErrorKind::InvalidArgument,
          "constant target must lie in [0, 1]");
  require(n_modes >= 1, ErrorKind::InvalidArgument, "n_modes must be >= 1");
  // On resonance |sigma_11|^2 = (1 - 2r)^2 with r = k1^2 / (k1^2 + k2^2); a
  // linewidth 1000x the grid span keeps it flat to ~1e-7 across the band.
  const double span = grid.omega_span();
  const double r = 0.5 * (1.0 - std::sqrt(value));
  const double decay = 1000.0 * span;
  Eigen::VectorXd w(n_modes);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n_modes, 2);
  w[0] = 0.5 * (grid.omega_min() + grid.omega_max());
  K(0, 0) = std::sqrt(2.0 * decay * r);
  K(0, 1) = std::sqrt(2.0 * decay * (1.0 - r));
  // Uncoupled spectators, parked above the band so M stays invertible.
  for (int m = 1; m < n_modes; ++m) w[m] = grid.omega_max() + span * m;
  return CmtModel(std::move(w), std::move(K));
}

CmtModel initial_model(const SpectralGrid& grid, const FitConfig& cfg, int restart,
                       std::mt19937_64& rng) {
  const int n = cfg.n_modes;
  const double span = grid.omega_span();
  const double pitch = span / n;
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  std::uniform_real_distribution<double> coupling(cfg.coupling_lo * std::sqrt(span),
                                                  cfg.coupling_hi * std::sqrt(span));
  std::bernoulli_distribution sign(0.5);
  Eigen::VectorXd w(n);
  Eigen::MatrixXd K(n, 2);
  for (int m = 0; m < n; ++m) {
    w[m] = grid.omega_min() + (m + 0.5) * pitch;
    if (restart > 0) w[m] += jitter(rng) * pitch;
    K(m, 0) = coupling(rng);
    K(m, 1) = coupling(rng);
    if (restart > 0 && sign(rng)) K(m, 1) = -K(m, 1);
  }
  return CmtModel(std::move(w), std::move(K));
}

namespace {

void check_target(const Eigen::VectorXd& target, const SpectralGrid& grid) {
  require(static_cast<std::size_t>(target.size()) == grid.size(), ErrorKind::InvalidArgument,
          "target length does not match grid bands");
  require(target.allFinite() && target.minCoeff() >= 0.0 && target.maxCoeff() <= 1.0,
          ErrorKind::InvalidArgument, "target curve must lie in [0, 1]");
}

struct RestartResult {
  double best = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd best_params;
  std::vector<double> trajectory;
};

RestartResult run_restart(const CmtModel& init, const Eigen::VectorXd& target,
                          const SpectralGrid& grid, const FitConfig& cfg) {
  RestartResult out;
  Eigen::VectorXd p = init.parameters();
  nn::AdamState adam(static_cast<std::size_t>(p.size()), cfg.adam());
  const double n = static_cast<double>(target.size());
  double loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      TransmissionGradient g;
      try {
        g = grad_transmission(init.with_parameters(p), grid);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Singular) throw;
        return out;  // keeps whatever best was reached; NaN if none
      }
      const Eigen::VectorXd r = g.values - target;
      loss = r.squaredNorm() / n;
      if (!std::isfinite(loss)) return out;
      if (out.trajectory.empty()) out.trajectory.push_back(loss);
      if (!(loss >= out.best)) {  // also true while best is NaN
        out.best = loss;
        out.best_params = p;
      }
      if (loss < cfg.tol) {
        out.trajectory.push_back(loss);
        return out;
      }
      const Eigen::VectorXd grad = (2.0 / n) * (g.jacobian.transpose() * r);
      adam.step(std::span<double>(p.data(), static_cast<std::size_t>(p.size())),
                std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size())),
                epoch);
    }
    out.trajectory.push_back(loss);
  }
  // The last step's result has not been scored yet.
  try {
    const double last = curve_mse(init.with_parameters(p), grid, target);
    if (std::isfinite(last) && last < out.best) {
      out.best = last;
      out.best_params = p;
      out.trajectory.back() = last;
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Singular) throw;
  }
  return out;
}

}  // namespace

FitReport fit_projector(const Eigen::VectorXd& target, const SpectralGrid& grid,
                        const FitConfig& cfg) {
  cfg.validate();
  check_target(target, grid);
  FitReport report;
  if (target.maxCoeff() - target.minCoeff() <= 1e-12) {
    const CmtModel m = constant_curve_model(target.mean(), grid, cfg.n_modes);
    report.constant_target = true;
    report.mse = curve_mse(m, grid, target);
    report.best_restart = 0;
    report.restart_mse = {report.mse};
    report.trajectory = {report.mse};
    report.model = m;
    return report;
  }

  std::mt19937_64 rng(cfg.seed);
  for (int r = 0; r < cfg.restarts; ++r) {
    const CmtModel init = initial_model(grid, cfg, r, rng);
    RestartResult res = run_restart(init, target, grid, cfg);
    report.restart_mse.push_back(res.best);
    if (std::isfinite(res.best) && (report.best_restart < 0 || res.best < report.mse)) {
      report.best_restart = r;
      report.mse = res.best;
      report.trajectory = std::move(res.trajectory);
      report.model = init.with_parameters(res.best_params);
    }
    if (report.best_restart >= 0 && report.mse < cfg.tol) break;
  }
  if (report.best_restart < 0)
    throw FitError("all " + std::to_string(cfg.restarts) + " restarts diverged", report);
  return report;
}

FitReport refine_projector(const CmtModel& init, const Eigen::VectorXd& target,
                           const SpectralGrid& grid, const FitConfig& cfg) {
  cfg.validate();
  check_target(target, grid);
  RestartResult res = run_restart(init, target, grid, cfg);
  FitReport report;
  report.restart_mse = {res.best};
  if (!std::isfinite(res.best)) throw FitError("refinement diverged", report);
  report.best_restart = 0;
  report.mse = res.best;
  report.trajectory = std::move(res.trajectory);
  report.model = init.with_parameters(res.best_params);
  return report;
}

double BankFit::mean_mse() const {
  if (reports.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : reports) s += r.mse;
  return s / static_cast<double>(reports.size());
}

ProjectorBank realize_bank(const std::vector<CmtModel>& models, const SpectralGrid& grid,
                           const std::vector<AffineMap>& affine) {
  require(!models.empty(), ErrorKind::InvalidArgument, "no models to realize");
  Eigen::MatrixXd curves(static_cast<Eigen::Index>(models.size()),
                         static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < models.size(); ++i)
    curves.row(static_cast<Eigen::Index>(i)) =
        transmission_response(models[i], grid).cwiseMax(0.0).cwiseMin(1.0).transpose();
  ProjectorBank bank(grid, std::move(curves));
  if (!affine.empty()) {
    require(affine.size() == models.size(), ErrorKind::InvalidArgument,
            "affine map count does not match model count");
    bank.affine = affine;
  }
  bank.physical = true;
  bank.validate();
  return bank;
}

BankFit fit_bank(const ProjectorBank& targets, const FitConfig& cfg) {
  cfg.validate();
  require(targets.physical, ErrorKind::InvalidArgument,
          "fit_bank needs a physical target bank (see remap_physical)");
  const std::size_t k = targets.k();
  std::vector<std::optional<FitReport>> reports(k);
  std::vector<std::string> errors(k);

#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::threads())
  for (std::size_t i = 0; i < k; ++i) {
    FitConfig c = cfg;
    c.seed = cfg.seed + i;
    try {
      reports[i] = fit_projector(targets.curves.row(static_cast<Eigen::Index>(i)).transpose(),
                                 targets.grid, c);
    } catch (const FitError& e) {
      reports[i] = e.report();
      errors[i] = e.what();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }

  BankFit out{{}, ProjectorBank(targets.grid, Eigen::MatrixXd::Ones(1, static_cast<Eigen::Index>(targets.bands()))), {}, {}};
  for (std::size_t i = 0; i < k; ++i) {
    FitReport r = reports[i].value_or(FitReport{});
    if (!errors[i].empty()) {
      out.failures.push_back({i, errors[i]});
      r.model = constant_curve_model(1.0, targets.grid, cfg.n_modes);
      r.mse = curve_mse(*r.model, targets.grid,
                        targets.curves.row(static_cast<Eigen::Index>(i)).transpose());
    }
    out.models.push_back(*r.model);
    out.reports.push_back(std::move(r));
  }
  out.realized = realize_bank(out.models, targets.grid, targets.affine);
  return out;
}

void save_fit_report(const BankFit& fit, const std::filesystem::path& path) {
  nlohmann::json j;
  j["mean_mse"] = fit.mean_mse();
  j["gram_condition"] = gram_condition(fit.realized);
  for (const auto& r : fit.reports) {
    nlohmann::json c;
    c["mse"] = r.mse;
    c["best_restart"] = r.best_restart;
    c["constant_target"] = r.constant_target;
    nlohmann::json rm = nlohmann::json::array();
    for (double v : r.restart_mse) rm.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json());
    c["restart_mse"] = rm;
    c["trajectory"] = r.trajectory;
    j["curves"].push_back(c);
  }
  j["failures"] = nlohmann::json::array();
  for (const auto& f : fit.failures) j["failures"].push_back({{"index", f.index}, {"message", f.message}});
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

double feature_scale(const SpectralGrid& grid) { return 1.0 / grid.omega_span(); }

PixelSet collect_pixels(std::span<const HsiCube> cubes, std::span<const LabelMask> masks) {
  require(!cubes.empty(), ErrorKind::InvalidArgument, "no training cubes");
  require(masks.empty() || masks.size() == cubes.size(), ErrorKind::InvalidArgument,
          "one mask per cube required");
  std::size_t total = 0;
  for (const auto& c : cubes) {
    require(c.grid().matches(cubes.front().grid()), ErrorKind::InvalidArgument,
            "training cubes use different grids");
    total += c.pixels();
  }
  PixelSet out;
  out.spectra.resize(static_cast<Eigen::Index>(cubes.front().bands()),
                     static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(cubes[i].pixels());
    out.spectra.middleCols(col, n) = flatten(cubes[i]);
    col += n;
    if (!masks.empty()) {
      require(masks[i].height == cubes[i].height() && masks[i].width == cubes[i].width(),
              ErrorKind::InvalidArgument, "mask and cube sizes differ");
      for (auto l : masks[i].labels) out.labels.push_back(static_cast<int>(l));
    }
  }
  return out;
}

namespace {

struct ChainTerms {
  Eigen::MatrixXd weighted;                 // k x bands
  std::vector<TransmissionGradient> grads;  // per model
};

ChainTerms chain_terms(const std::vector<CmtModel>& models, const SpectralGrid& grid) {
  ChainTerms t;
  t.weighted.resize(static_cast<Eigen::Index>(models.size()), static_cast<Eigen::Index>(grid.size()));
  const Eigen::Map<const Eigen::RowVectorXd> w(grid.weights().data(),
                                               static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < models.size(); ++i) {
    t.grads.push_back(grad_transmission(models[i], grid));
    t.weighted.row(static_cast<Eigen::Index>(i)) = t.grads.back().values.transpose().cwiseProduct(w);
  }
  return t;
}

// dL/dparams of every model from dL/d(decoder input).
std::vector<Eigen::VectorXd> cmt_gradients(const ChainTerms& t, const SpectralGrid& grid,
                                           const Eigen::MatrixXd& spectra,
                                           const Eigen::MatrixXd& grad_features) {
  const Eigen::Map<const Eigen::RowVectorXd> w(grid.weights().data(),
                                               static_cast<Eigen::Index>(grid.size()));
  const Eigen::MatrixXd d_curves =
      (feature_scale(grid) * (grad_features * spectra.transpose())).array().rowwise() * w.array();
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < t.grads.size(); ++i)
    out.push_back(t.grads[i].jacobian.transpose() *
                  d_curves.row(static_cast<Eigen::Index>(i)).transpose());
  return out;
}

void check_e2e_shapes(const std::vector<CmtModel>& models, const nn::Mlp& decoder, Task task,
                      Eigen::Index bands) {
  require(!models.empty(), ErrorKind::InvalidArgument, "end-to-end training needs >= 1 model");
  require(decoder.input_dim() == static_cast<int>(models.size()), ErrorKind::InvalidArgument,
          "decoder input width must equal the number of projectors");
  if (task == Task::Reconstruction)
    require(decoder.output_dim() == bands, ErrorKind::InvalidArgument,
            "reconstruction decoder must output one value per band");
}

}  // namespace

EndToEndResult end_to_end_train(std::span<const HsiCube> cubes, std::span<const LabelMask> masks,
                                std::vector<CmtModel> models, nn::Mlp decoder,
                                const EndToEndConfig& cfg) {
  const bool classify = cfg.task == Task::Classification;
  require(!classify || !masks.empty(), ErrorKind::InvalidArgument,
          "classification needs label masks");
  const PixelSet px = collect_pixels(cubes, classify ? masks : std::span<const LabelMask>{});
  const SpectralGrid& grid = cubes.front().grid();
  check_e2e_shapes(models, decoder, cfg.task, px.spectra.rows());

  nn::TrainConfig tc = cfg.train;
  tc.loss = classify ? nn::Loss::CrossEntropy : nn::Loss::Mse;
  nn::AdamState adam(decoder.n_params(), cfg.decoder_adam);
  nn::MinibatchTrainer trainer(decoder, adam, tc);
  std::vector<nn::AdamState> cmt_adam;
  for (const auto& m : models) cmt_adam.emplace_back(static_cast<std::size_t>(m.n_params()), cfg.cmt_adam);

  const double scale = feature_scale(grid);
  Eigen::MatrixXd frozen_x;
  if (cfg.freeze_cmt) {
    // Same features nn::train would see: encode each cube, then scale.
    const ProjectorBank bank = realize_bank(models, grid);
    frozen_x.resize(static_cast<Eigen::Index>(models.size()), px.spectra.cols());
    Eigen::Index col = 0;
    for (const auto& c : cubes) {
      const auto n = static_cast<Eigen::Index>(c.pixels());
      frozen_x.middleCols(col, n) = nn::barcode_features(encode(c, bank), scale);
      col += n;
    }
  }

  EndToEndResult result{{}, {}, {}};
  const std::size_t n = static_cast<std::size_t>(px.spectra.cols());
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  std::vector<int> labels;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = trainer.epoch_order(n);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < n; s += bs) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, n - s));
      Eigen::MatrixXd x, beta;
      ChainTerms terms;
      if (cfg.freeze_cmt) {
        x = nn::gather_columns(frozen_x, idx);
      } else {
        beta = nn::gather_columns(px.spectra, idx);
        terms = chain_terms(models, grid);
        x = scale * (terms.weighted * beta);
      }
      double loss;
      Eigen::MatrixXd grad_x;
      Eigen::MatrixXd* want = cfg.freeze_cmt ? nullptr : &grad_x;
      if (classify) {
        labels.resize(idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = px.labels[idx[j]];
        loss = trainer.step(x, nullptr, labels, epoch, want);
      } else {
        const Eigen::MatrixXd y = nn::gather_columns(px.spectra, idx);
        loss = trainer.step(x, &y, {}, epoch, want);
      }
      if (!std::isfinite(loss))
        fail(ErrorKind::Divergence, "end-to-end training diverged (non-finite loss) at epoch " +
                                        std::to_string(epoch));
      if (!cfg.freeze_cmt) {
        const auto g = cmt_gradients(terms, grid, beta, grad_x);
        for (std::size_t i = 0; i < models.size(); ++i) {
          Eigen::VectorXd p = models[i].parameters();
          cmt_adam[i].step(std::span<double>(p.data(), static_cast<std::size_t>(p.size())),
                           std::span<const double>(g[i].data(), static_cast<std::size_t>(g[i].size())),
                           epoch);
          require(p.allFinite(), ErrorKind::Divergence, "CMT parameters became non-finite");
          models[i] = models[i].with_parameters(p);
        }
      }
      sum += loss;
      ++batches;
    }
    result.report.loss_history.push_back(sum / static_cast<double>(batches));
  }
  result.models = std::move(models);
  result.decoder = std::move(decoder);
  return result;
}

CompositeGradient composite_gradient(const std::vector<CmtModel>& models, const nn::Mlp& decoder,
                                     const SpectralGrid& grid, const Eigen::MatrixXd& spectra,
                                     Task task, std::span<const int> labels) {
  require(static_cast<std::size_t>(spectra.rows()) == grid.size(), ErrorKind::InvalidArgument,
          "spectra rows do not match grid");
  check_e2e_shapes(models, decoder, task, spectra.rows());
  const ChainTerms terms = chain_terms(models, grid);
  const Eigen::MatrixXd x = feature_scale(grid) * (terms.weighted * spectra);
  nn::ForwardCache cache;
  const Eigen::MatrixXd out = nn::forward(decoder, x, false, nullptr, &cache);
  Eigen::MatrixXd grad;
  nn::GradientAt at = nn::GradientAt::Output;
  CompositeGradient cg;
  if (task == Task::Reconstruction) {
    cg.loss = nn::mse_loss(out, spectra, &grad);
  } else if (decoder.layers().back().activation == nn::Activation::Softmax) {
    cg.loss = nn::cross_entropy_loss(out, labels, &grad);
    at = nn::GradientAt::Logits;
  } else {
    cg.loss = nn::cross_entropy_loss(nn::softmax_columns(out), labels, &grad);
  }
  Eigen::MatrixXd grad_x;
  nn::backward(decoder, cache, grad, at, &grad_x);
  const auto g = cmt_gradients(terms, grid, spectra, grad_x);
  Eigen::Index total = 0;
  for (const auto& v : g) total += v.size();
  cg.grad.resize(total);
  Eigen::Index o = 0;
  for (const auto& v : g) {
    cg.grad.segment(o, v.size()) = v;
    o += v.size();
  }
  return cg;
}

// ---------------------------------------------------------------------------

GeometryFit fit_geometry(const nn::Surrogate& surrogate, const Eigen::VectorXd& target,
                         const GeometryFitConfig& cfg) {
  require(target.size() == surrogate.bands(), ErrorKind::InvalidArgument,
          "target length does not match surrogate output");
  require(cfg.lr > 0.0 && cfg.steps >= 1 && cfg.restarts >= 1, ErrorKind::InvalidArgument,
          "geometry fit needs positive lr, steps and restarts");
  std::mt19937_64 rng(cfg.seed);
  GeometryFit best;
  best.mse = std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(target.size());
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.step_size = 0;

  for (int period : nn::kPeriods)
    for (int thickness : nn::kThicknesses)
      for (int r = 0; r < cfg.restarts; ++r) {
        nn::GeometryParams g = nn::random_geometry(rng);
        g.period_nm = period;
        g.thickness_nm = thickness;
        nn::AdamState adam(nn::kShapeDim, ac);
        for (int step = 0; step <= cfg.steps; ++step) {
          const nn::GeometryParams one[1] = {g};
          nn::Surrogate::Cache cache;
          const Eigen::MatrixXd pred =
              surrogate.forward(nn::make_surrogate_batch(one), false, nullptr, &cache);
          const Eigen::VectorXd diff = pred.col(0) - target;
          const double mse = diff.squaredNorm() / n;
          if (mse < best.mse) best = {g, mse};
          if (step == cfg.steps) break;
          Eigen::MatrixXd grad_shape;
          surrogate.backward(cache, (2.0 / n) * diff, &grad_shape);
          adam.step(g.shape, std::span<const double>(grad_shape.data(), nn::kShapeDim), 0);
          for (double& v : g.shape) v = std::clamp(v, 0.0, 1.0);
        }
      }
  return best;
}

}  // namespace spectral_codec

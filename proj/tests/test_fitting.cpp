#include <doctest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "cmt_oracle.hpp"
#include "spectral_codec/fitting.hpp"
#include "test_util.hpp"

using namespace spectral_codec;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::InvalidArgument;
}

// Model MSE recomputed from the long-double reference transmission.
double oracle_mse(const CmtModel& m, const SpectralGrid& grid, const Eigen::VectorXd& target) {
  const auto om = oracle::from(m);
  long double s = 0;
  for (std::size_t b = 0; b < grid.size(); ++b) {
    const long double d = oracle::transmission(om, grid.omegas()[b]) - target[static_cast<Eigen::Index>(b)];
    s += d * d;
  }
  return static_cast<double>(s / grid.size());
}

FitConfig quick_config() {
  FitConfig cfg;
  cfg.epochs = 40;
  cfg.restarts = 2;
  cfg.step_size = 20;
  return cfg;
}

}  // namespace

TEST_CASE("constant targets take the closed-form path") {
  const auto grid = SpectralGrid::desk_default();
  for (double c : {0.0, 0.3, 0.75, 1.0}) {
    const Eigen::VectorXd target = Eigen::VectorXd::Constant(31, c);
    const auto r = fit_projector(target, grid, FitConfig{});
    CHECK(r.constant_target);
    CHECK(r.mse < 1e-6);
    CHECK(oracle_mse(*r.model, grid, target) < 1e-6);
    CHECK(r.model->n_modes() == 8);
  }
  CHECK(kind_of([&] { constant_curve_model(1.5, grid, 8); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("refining a perturbed known model recovers it") {
  const auto grid = SpectralGrid::desk_default();
  FitConfig cfg;
  cfg.n_modes = 3;
  for (std::uint64_t s = 0; s < 3; ++s) {
    std::mt19937_64 rng(200 + s);
    const CmtModel truth = initial_model(grid, cfg, 1, rng);
    const Eigen::VectorXd target = transmission_response(truth, grid);
    Eigen::VectorXd p = truth.parameters();
    std::normal_distribution<double> jitter(0.0, 0.02);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] *= 1.0 + jitter(rng);
    const CmtModel start = truth.with_parameters(p);
    const auto r = refine_projector(start, target, grid, cfg);
    CHECK(r.trajectory.front() > 1e-5);
    CHECK(r.mse < 1e-5);
    CHECK(oracle_mse(*r.model, grid, target) == doctest::Approx(r.mse).epsilon(1e-6));
  }
}

TEST_CASE("fit_projector bookkeeping") {
  const auto grid = SpectralGrid::desk_default();
  Eigen::VectorXd target(31);
  for (Eigen::Index i = 0; i < 31; ++i) target[i] = 0.5 + 0.4 * std::sin(0.3 * static_cast<double>(i));
  auto cfg = quick_config();
  cfg.restarts = 3;
  cfg.seed = 5;
  const auto r = fit_projector(target, grid, cfg);
  CHECK_FALSE(r.constant_target);
  REQUIRE(r.restart_mse.size() == 3);
  double best = INFINITY;
  int arg = -1;
  for (std::size_t i = 0; i < 3; ++i)
    if (std::isfinite(r.restart_mse[i]) && r.restart_mse[i] < best) {
      best = r.restart_mse[i];
      arg = static_cast<int>(i);
    }
  CHECK(r.best_restart == arg);
  CHECK(r.mse == best);
  CHECK(r.trajectory.size() == static_cast<std::size_t>(cfg.epochs) + 1);
  CHECK(r.trajectory.back() <= r.trajectory.front());
  CHECK(r.mse <= r.trajectory.front());
  CHECK(oracle_mse(*r.model, grid, target) == doctest::Approx(r.mse).epsilon(1e-6));

  // Same seed, same answer.
  CHECK(fit_projector(target, grid, cfg).model == r.model);

  SUBCASE("invalid input") {
    Eigen::VectorXd bad = target;
    bad[3] = 1.2;
    CHECK(kind_of([&] { fit_projector(bad, grid, cfg); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([&] { fit_projector(target.head(30), grid, cfg); }) ==
          ErrorKind::InvalidArgument);
    FitConfig z = cfg;
    z.restarts = 0;
    CHECK(kind_of([&] { fit_projector(target, grid, z); }) == ErrorKind::InvalidArgument);
  }
}

TEST_CASE("fit_bank") {
  const auto grid = SpectralGrid::desk_default();
  Eigen::MatrixXd curves(3, 31);
  for (Eigen::Index i = 0; i < 31; ++i) {
    const double x = static_cast<double>(i) / 30.0;
    curves(0, i) = 0.2 + 0.6 * x;
    curves(1, i) = 0.9 - 0.7 * std::exp(-std::pow((x - 0.5) / 0.15, 2));
    curves(2, i) = 0.6;
  }
  ProjectorBank targets(grid, curves);
  targets.physical = true;
  auto cfg = quick_config();
  cfg.seed = 11;
  const auto fit = fit_bank(targets, cfg);
  REQUIRE(fit.models.size() == 3);
  CHECK(fit.failures.empty());
  CHECK(fit.reports[2].constant_target);
  // Curve i uses seed + i.
  FitConfig c1 = cfg;
  c1.seed = 12;
  CHECK(fit_projector(curves.row(1).transpose(), grid, c1).model == fit.models[1]);

  CHECK(fit.realized.curves.minCoeff() >= 0.0);
  CHECK(fit.realized.curves.maxCoeff() <= 1.0);
  CHECK(std::isfinite(gram_condition(fit.realized)));
  CHECK(gram_condition(fit.realized) < 1e12);
  double mean = 0.0;
  for (const auto& r : fit.reports) mean += r.mse / 3.0;
  CHECK(fit.mean_mse() == doctest::Approx(mean));
  for (std::size_t i = 0; i < 3; ++i) {
    const Eigen::VectorXd t = transmission_response(fit.models[i], grid);
    CHECK((fit.realized.curves.row(static_cast<Eigen::Index>(i)).transpose() - t).norm() < 1e-12);
  }

  test_util::TempDir dir("fit");
  save_fit_report(fit, dir / "fit.json");
  const auto j = nlohmann::json::parse(test_util::read_bytes(dir / "fit.json"));
  CHECK(j["curves"].size() == 3);

  ProjectorBank raw(grid, curves);
  CHECK(kind_of([&] { fit_bank(raw, cfg); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("composite gradient matches central differences") {
  const SpectralGrid grid({500.0, 550.0, 600.0, 650.0});
  const double w0 = grid.omegas()[1];
  std::vector<CmtModel> models{CmtModel(Eigen::VectorXd::Constant(1, w0),
                                        (Eigen::MatrixXd(1, 2) << 0.4, -0.3).finished())};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Eigen::MatrixXd spectra(4, 6);
  for (Eigen::Index j = 0; j < 6; ++j)
    for (Eigen::Index i = 0; i < 4; ++i) spectra(i, j) = u(rng);

  auto check = [&](const nn::Mlp& dec, Task task, std::span<const int> labels) {
    const auto cg = composite_gradient(models, dec, grid, spectra, task, labels);
    REQUIRE(cg.grad.size() == 3);
    const double h = 1e-6;
    for (int p = 0; p < 3; ++p) {
      Eigen::VectorXd a = models[0].parameters(), b = a;
      a[p] += h;
      b[p] -= h;
      const double up =
          composite_gradient({models[0].with_parameters(a)}, dec, grid, spectra, task, labels).loss;
      const double dn =
          composite_gradient({models[0].with_parameters(b)}, dec, grid, spectra, task, labels).loss;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::abs(cg.grad[p] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  };
  SUBCASE("reconstruction") {
    check(nn::Mlp::sequential({1, 5, 4}, nn::Activation::Sigmoid, nn::Activation::Identity, 2),
          Task::Reconstruction, {});
  }
  SUBCASE("classification") {
    const std::vector<int> labels{0, 1, 2, 1, 0, 2};
    check(nn::Mlp::sequential({1, 5, 3}, nn::Activation::Sigmoid, nn::Activation::Softmax, 3),
          Task::Classification, labels);
  }
}

TEST_CASE("end-to-end training") {
  const auto grid = SpectralGrid::desk_default();
  auto spec = default_scene_spec();
  spec.height = spec.width = 16;
  std::vector<HsiCube> cubes;
  std::vector<LabelMask> masks;
  for (std::uint64_t i = 0; i < 4; ++i) {
    auto sc = synth_scene(spec, i);
    cubes.push_back(std::move(sc.cube));
    masks.push_back(std::move(sc.mask));
  }
  FitConfig mc;
  mc.n_modes = 4;
  std::mt19937_64 rng(7);
  std::vector<CmtModel> models;
  for (int i = 0; i < 3; ++i) models.push_back(initial_model(grid, mc, 1, rng));

  SUBCASE("frozen bank walks the same trajectory as nn::train") {
    for (Task task : {Task::Reconstruction, Task::Classification}) {
      const bool cls = task == Task::Classification;
      EndToEndConfig ec;
      ec.task = task;
      ec.freeze_cmt = true;
      ec.train.loss = cls ? nn::Loss::CrossEntropy : nn::Loss::Mse;
      ec.train.epochs = 3;
      ec.train.batch_size = 50;
      ec.train.seed = 9;
      ec.decoder_adam.lr = 5e-3;
      const auto dec = nn::Mlp::sequential({3, 12, cls ? 5 : 31}, nn::Activation::Relu,
                                           cls ? nn::Activation::Softmax : nn::Activation::Sigmoid,
                                           4, true, 0.1);
      const auto r = end_to_end_train(cubes, masks, models, dec, ec);
      CHECK(r.models == models);

      // Reference: encode with the realized bank, then plain nn::train.
      const auto bank = realize_bank(models, grid);
      const auto px = collect_pixels(cubes, masks);
      nn::Dataset d;
      d.x.resize(3, px.spectra.cols());
      Eigen::Index col = 0;
      for (const auto& c : cubes) {
        const auto n = static_cast<Eigen::Index>(c.pixels());
        d.x.middleCols(col, n) = nn::barcode_features(encode(c, bank), feature_scale(grid));
        col += n;
      }
      if (cls)
        d.labels = px.labels;
      else
        d.y = px.spectra;
      nn::Mlp ref = dec;
      nn::AdamState adam(ref.n_params(), ec.decoder_adam);
      const auto rep = nn::train(ref, d, ec.train, adam);
      CHECK(rep.loss_history == r.report.loss_history);
      CHECK(std::equal(ref.params().begin(), ref.params().end(), r.decoder.params().begin()));
    }
  }

  SUBCASE("training the bank beats a frozen random bank on metamers") {
    auto run = [&](bool frozen) {
      EndToEndConfig ec;
      ec.task = Task::Classification;
      ec.freeze_cmt = frozen;
      ec.train.loss = nn::Loss::CrossEntropy;
      ec.train.epochs = 15;
      ec.train.batch_size = 64;
      ec.train.seed = 1;
      ec.decoder_adam.lr = 1e-2;
      ec.decoder_adam.step_size = 1000;
      ec.cmt_adam.lr = 1e-2;
      const auto dec =
          nn::Mlp::sequential({3, 16, 5}, nn::Activation::Relu, nn::Activation::Softmax, 3);
      return end_to_end_train(cubes, masks, models, dec, ec);
    };
    const auto frozen = run(true);
    const auto joint = run(false);
    CHECK_FALSE(joint.models == models);
    CHECK(joint.report.loss_history.back() < frozen.report.loss_history.back());
  }

  SUBCASE("shape checks") {
    EndToEndConfig ec;
    ec.task = Task::Classification;
    ec.train.loss = nn::Loss::CrossEntropy;
    const auto dec = nn::Mlp::sequential({2, 4, 5}, nn::Activation::Relu, nn::Activation::Softmax, 0);
    CHECK(kind_of([&] { end_to_end_train(cubes, masks, models, dec, ec); }) ==
          ErrorKind::InvalidArgument);
    const std::vector<LabelMask> none;
    const auto dec3 = nn::Mlp::sequential({3, 4, 5}, nn::Activation::Relu, nn::Activation::Softmax, 0);
    CHECK(kind_of([&] { end_to_end_train(cubes, none, models, dec3, ec); }) ==
          ErrorKind::InvalidArgument);
  }
}

TEST_CASE("geometry fit through a trained surrogate") {
  const auto grid = SpectralGrid::desk_default();
  std::mt19937_64 rng(4);
  std::vector<nn::GeometryParams> xs;
  Eigen::MatrixXd ys(31, 3000);
  for (int i = 0; i < 3000; ++i) {
    xs.push_back(nn::random_geometry(rng));
    ys.col(i) = nn::oracle_spectrum(xs.back(), grid);
  }
  nn::Surrogate net(31, 1);
  nn::TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 64;
  nn::AdamConfig ac;
  ac.lr = 1e-3;
  nn::train_surrogate(net, xs, ys, {}, Eigen::MatrixXd(31, 0), tc, ac);

  const auto goal = nn::random_geometry(rng);
  const Eigen::VectorXd target = nn::oracle_spectrum(goal, grid);
  GeometryFitConfig gc;
  gc.steps = 60;
  const auto fit = fit_geometry(net, target, gc);
  fit.geometry.validate();
  const double recomputed = (nn::surrogate_predict(net, fit.geometry) - target).squaredNorm() / 31;
  CHECK(fit.mse == doctest::Approx(recomputed).epsilon(1e-12));
  // The true geometry is one feasible point; the search must do at least as well.
  CHECK(fit.mse <= (nn::surrogate_predict(net, goal) - target).squaredNorm() / 31);

  gc.steps = 0;
  CHECK(kind_of([&] { fit_geometry(net, target, gc); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { fit_geometry(net, target.head(30), GeometryFitConfig{}); }) ==
        ErrorKind::InvalidArgument);
}

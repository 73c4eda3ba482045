#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "spectral_codec/error.hpp"
#include "spectral_codec/nn.hpp"

namespace spectral_codec::nn {

int GeometryParams::period_index() const {
  const auto it = std::ranges::find(kPeriods, period_nm);
  return it == kPeriods.end() ? -1 : static_cast<int>(it - kPeriods.begin());
}

int GeometryParams::thickness_index() const {
  const auto it = std::ranges::find(kThicknesses, thickness_nm);
  return it == kThicknesses.end() ? -1 : static_cast<int>(it - kThicknesses.begin());
}

void GeometryParams::validate() const {
  for (double v : shape)
    require(v >= 0.0 && v <= 1.0, ErrorKind::InvalidArgument,
            "geometry shape entries must lie in [0, 1]");
  require(period_index() >= 0, ErrorKind::InvalidArgument,
          "period must be one of 250 / 500 / 750 nm");
  require(thickness_index() >= 0, ErrorKind::InvalidArgument,
          "thickness must be 50..300 nm in 25 nm steps");
}

Eigen::VectorXd GeometryParams::continuous_features() const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kShapeDim);
  for (int b = 0; b < kMaxBoxes; ++b)
    if (box_active(b))
      for (int j = 0; j < 4; ++j) f[4 * b + j] = shape[static_cast<std::size_t>(4 * b + j)];
  return f;
}

GeometryParams random_geometry(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> size(0.1, 1.0);
  std::uniform_int_distribution<int> boxes(1, kMaxBoxes);
  std::uniform_int_distribution<std::size_t> period(0, kPeriods.size() - 1);
  std::uniform_int_distribution<std::size_t> thick(0, kThicknesses.size() - 1);
  GeometryParams g;
  const int n = boxes(rng);
  for (int b = 0; b < n; ++b) {
    const auto o = static_cast<std::size_t>(4 * b);
    g.shape[o] = unit(rng);
    g.shape[o + 1] = unit(rng);
    g.shape[o + 2] = size(rng);
    g.shape[o + 3] = size(rng);
  }
  g.period_nm = kPeriods[period(rng)];
  g.thickness_nm = kThicknesses[thick(rng)];
  return g;
}

Eigen::VectorXd oracle_spectrum(const GeometryParams& g, const SpectralGrid& grid) {
  g.validate();
  const double pi = g.period_index();
  const double tf = g.thickness_index() / 10.0;
  const double baseline = 0.95 - 0.12 * tf - 0.05 * pi;
  const auto wl = grid.wavelengths();
  Eigen::VectorXd t = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(wl.size()), baseline);
  for (int b = 0; b < kMaxBoxes; ++b) {
    if (!g.box_active(b)) continue;
    const auto o = static_cast<std::size_t>(4 * b);
    const double cx = g.shape[o], cy = g.shape[o + 1], w = g.shape[o + 2], h = g.shape[o + 3];
    const double size = 0.6 * w + 0.4 * h;
    const double center = 420.0 + 260.0 * size * (0.85 + 0.15 * tf) + 15.0 * (pi - 1.0) +
                          10.0 * (cx - 0.5);
    const double width = 12.0 + 35.0 * w * h + 8.0 * cy;
    const double depth = 0.25 + 0.55 * std::sqrt(w * h);
    for (std::size_t i = 0; i < wl.size(); ++i) {
      const double d = (wl[i] - center) / width;
      t[static_cast<Eigen::Index>(i)] *= 1.0 - depth / (1.0 + d * d);
    }
  }
  return t;
}

SurrogateBatch make_surrogate_batch(std::span<const GeometryParams> geometries) {
  const auto n = static_cast<Eigen::Index>(geometries.size());
  SurrogateBatch b{Eigen::MatrixXd(kShapeDim, n),
                   Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kPeriods.size()), n),
                   Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kThicknesses.size()), n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& g = geometries[static_cast<std::size_t>(j)];
    g.validate();
    b.shape.col(j) = g.continuous_features();
    b.period(g.period_index(), j) = 1.0;
    b.thickness(g.thickness_index(), j) = 1.0;
  }
  return b;
}

namespace {
constexpr int kEmbed = 8;
constexpr int kContinuousWidth = 128;
constexpr int kCategoricalWidth = 64;
}  // namespace

Surrogate::Surrogate(int bands, std::uint64_t seed, double dropout)
    : continuous_({{kShapeDim, kContinuousWidth, Activation::Relu, true, dropout},
                   {kContinuousWidth, kContinuousWidth, Activation::Relu, true, dropout}},
                  seed),
      period_embed_({{static_cast<int>(kPeriods.size()), kEmbed, Activation::Identity, false, 0.0}},
                    seed + 1),
      thickness_embed_(
          {{static_cast<int>(kThicknesses.size()), kEmbed, Activation::Identity, false, 0.0}},
          seed + 2),
      categorical_({{2 * kEmbed, kCategoricalWidth, Activation::Relu, true, dropout}}, seed + 3),
      readout_({{kContinuousWidth + kCategoricalWidth, 256, Activation::Relu, true, dropout},
                {256, 128, Activation::Relu, true, dropout},
                {128, bands, Activation::Sigmoid, false, 0.0}},
               seed + 4) {}

std::array<Mlp*, 5> Surrogate::nets() {
  return {&continuous_, &period_embed_, &thickness_embed_, &categorical_, &readout_};
}

std::array<const Mlp*, 5> Surrogate::nets() const {
  return {&continuous_, &period_embed_, &thickness_embed_, &categorical_, &readout_};
}

Eigen::MatrixXd Surrogate::forward(const SurrogateBatch& batch, bool train, std::mt19937_64* rng,
                                   Cache* cache) const {
  const auto n = batch.shape.cols();
  const Eigen::MatrixXd hc = nn::forward(continuous_, batch.shape, train, rng,
                                         cache ? &cache->continuous : nullptr);
  const Eigen::MatrixXd ep = nn::forward(period_embed_, batch.period, train, rng,
                                         cache ? &cache->period : nullptr);
  const Eigen::MatrixXd et = nn::forward(thickness_embed_, batch.thickness, train, rng,
                                         cache ? &cache->thickness : nullptr);
  Eigen::MatrixXd emb(2 * kEmbed, n);
  emb << ep, et;
  const Eigen::MatrixXd hk = nn::forward(categorical_, emb, train, rng,
                                         cache ? &cache->categorical : nullptr);
  Eigen::MatrixXd joint(kContinuousWidth + kCategoricalWidth, n);
  joint << hc, hk;
  return nn::forward(readout_, joint, train, rng, cache ? &cache->readout : nullptr);
}

std::vector<Eigen::VectorXd> Surrogate::backward(const Cache& cache,
                                                 const Eigen::MatrixXd& grad_out,
                                                 Eigen::MatrixXd* grad_shape) const {
  std::vector<Eigen::VectorXd> g(5);
  Eigen::MatrixXd d_joint, d_emb;
  g[4] = nn::backward(readout_, cache.readout, grad_out, GradientAt::Output, &d_joint);
  const Eigen::MatrixXd d_cont = d_joint.topRows(kContinuousWidth);
  const Eigen::MatrixXd d_cat = d_joint.bottomRows(kCategoricalWidth);
  g[3] = nn::backward(categorical_, cache.categorical, d_cat, GradientAt::Output, &d_emb);
  g[1] = nn::backward(period_embed_, cache.period, d_emb.topRows(kEmbed));
  g[2] = nn::backward(thickness_embed_, cache.thickness, d_emb.bottomRows(kEmbed));
  g[0] = nn::backward(continuous_, cache.continuous, d_cont, GradientAt::Output, grad_shape);
  return g;
}

void Surrogate::update_running_stats(const Cache& cache) {
  nn::update_running_stats(continuous_, cache.continuous);
  nn::update_running_stats(categorical_, cache.categorical);
  nn::update_running_stats(readout_, cache.readout);
}

double surrogate_mse(const Surrogate& net, std::span<const GeometryParams> x,
                     const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd pred = net.forward(make_surrogate_batch(x), false, nullptr);
  return mse_loss(pred, y);
}

SurrogateTrainReport train_surrogate(Surrogate& net, std::span<const GeometryParams> train_x,
                                     const Eigen::MatrixXd& train_y,
                                     std::span<const GeometryParams> val_x,
                                     const Eigen::MatrixXd& val_y, const TrainConfig& cfg,
                                     const AdamConfig& adam_cfg) {
  require(!train_x.empty() && static_cast<std::size_t>(train_y.cols()) == train_x.size() &&
              train_y.rows() == net.bands(),
          ErrorKind::InvalidArgument, "surrogate training data shape mismatch");
  const SurrogateBatch all = make_surrogate_batch(train_x);
  std::vector<AdamState> adam;
  for (const Mlp* m : std::as_const(net).nets()) adam.emplace_back(m->n_params(), adam_cfg);

  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = train_x.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  SurrogateTrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s + 1 < n; s += bs) {  // batch norm needs >= 2 samples
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, n - s));
      if (idx.size() < 2) break;
      const SurrogateBatch b{gather_columns(all.shape, idx), gather_columns(all.period, idx),
                             gather_columns(all.thickness, idx)};
      Surrogate::Cache cache;
      const Eigen::MatrixXd pred = net.forward(b, true, &rng, &cache);
      Eigen::MatrixXd grad;
      const double loss = mse_loss(pred, gather_columns(train_y, idx), &grad);
      if (!std::isfinite(loss))
        fail(ErrorKind::Divergence,
             "surrogate training diverged at epoch " + std::to_string(epoch));
      const auto grads = net.backward(cache, grad);
      auto nets = net.nets();
      for (std::size_t i = 0; i < nets.size(); ++i)
        adam[i].step(nets[i]->params(),
                     std::span<const double>(grads[i].data(), static_cast<std::size_t>(grads[i].size())),
                     epoch);
      net.update_running_stats(cache);
      sum += loss;
      ++batches;
    }
    report.train_loss.push_back(sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
    if (!val_x.empty()) report.val_mse.push_back(surrogate_mse(net, val_x, val_y));
  }
  return report;
}

Eigen::VectorXd surrogate_predict(const Surrogate& net, const GeometryParams& g) {
  const GeometryParams one[1] = {g};
  return net.forward(make_surrogate_batch(one), false, nullptr).col(0);
}

}  // namespace spectral_codec::nn

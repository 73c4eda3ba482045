#include "spectral_codec/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "spectral_codec/error.hpp"

namespace spectral_codec::nn {

namespace {

std::size_t layer_param_count(const LayerSpec& l) {
  const auto out = static_cast<std::size_t>(l.out);
  return out * static_cast<std::size_t>(l.in) + out + (l.batch_norm ? 2 * out : 0);
}

void validate_layers(const std::vector<LayerSpec>& layers) {
  require(!layers.empty(), ErrorKind::InvalidArgument, "network needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    require(l.in > 0 && l.out > 0, ErrorKind::InvalidArgument, "layer sizes must be positive");
    require(l.dropout >= 0.0 && l.dropout < 1.0, ErrorKind::InvalidArgument,
            "dropout must lie in [0, 1)");
    if (i > 0)
      require(layers[i - 1].out == l.in, ErrorKind::InvalidArgument,
              "consecutive layer sizes do not match");
    if (l.activation == Activation::Softmax)
      require(i + 1 == layers.size(), ErrorKind::InvalidArgument,
              "softmax is only supported on the output layer");
  }
}

}  // namespace

Mlp::Mlp(std::vector<LayerSpec> layers, std::uint64_t seed) : layers_(std::move(layers)) {
  validate_layers(layers_);
  std::size_t total = 0;
  for (const auto& l : layers_) {
    offsets_.push_back(total);
    total += layer_param_count(l);
  }
  params_.assign(total, 0.0);
  running_mean_.resize(layers_.size());
  running_var_.resize(layers_.size());

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    // He-uniform for ReLU layers, Glorot-uniform otherwise.
    const double limit = l.activation == Activation::Relu
                             ? std::sqrt(6.0 / l.in)
                             : std::sqrt(6.0 / (l.in + l.out));
    std::uniform_real_distribution<double> u(-limit, limit);
    auto W = weight(i);
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = u(rng);
    if (l.batch_norm) {
      const std::size_t g = offsets_[i] + static_cast<std::size_t>(l.out * l.in + l.out);
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(g), l.out, 1.0);
      running_mean_[i] = Eigen::VectorXd::Zero(l.out);
      running_var_[i] = Eigen::VectorXd::Ones(l.out);
    }
  }
}

Mlp Mlp::sequential(const std::vector<int>& sizes, Activation hidden, Activation head,
                    std::uint64_t seed, bool batch_norm, double dropout) {
  require(sizes.size() >= 2, ErrorKind::InvalidArgument, "need at least input and output size");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    layers.push_back({sizes[i], sizes[i + 1], last ? head : hidden, !last && batch_norm,
                      last ? 0.0 : dropout});
  }
  return Mlp(std::move(layers), seed);
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(std::size_t l) {
  return {params_.data() + offsets_[l], layers_[l].out, layers_[l].in};
}
Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], layers_[l].out, layers_[l].in};
}
Eigen::Map<Eigen::VectorXd> Mlp::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + layers_[l].out * layers_[l].in, layers_[l].out};
}
Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + layers_[l].out * layers_[l].in, layers_[l].out};
}
Eigen::Map<const Eigen::VectorXd> Mlp::gamma(std::size_t l) const {
  return {params_.data() + offsets_[l] + layers_[l].out * (layers_[l].in + 1), layers_[l].out};
}
Eigen::Map<const Eigen::VectorXd> Mlp::beta(std::size_t l) const {
  return {params_.data() + offsets_[l] + layers_[l].out * (layers_[l].in + 2), layers_[l].out};
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - m).exp();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& x, bool train,
                        std::mt19937_64* rng, ForwardCache* cache) {
  require(x.rows() == net.input_dim(), ErrorKind::InvalidArgument,
          "input dimension " + std::to_string(x.rows()) + " != network input " +
              std::to_string(net.input_dim()));
  require(x.allFinite(), ErrorKind::InvalidArgument, "non-finite network input");
  if (cache) {
    cache->train = train;
    cache->layers.assign(net.layers().size(), {});
  }
  Eigen::MatrixXd h = x;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& spec = net.layers()[i];
    LayerCache* lc = cache ? &cache->layers[i] : nullptr;
    if (lc) lc->input = h;
    Eigen::MatrixXd z = net.weight(i) * h;
    z.colwise() += net.bias(i);
    if (lc) lc->z = z;
    if (spec.batch_norm) {
      Eigen::VectorXd mean, var;
      if (train) {
        mean = z.rowwise().mean();
        var = (z.colwise() - mean).array().square().rowwise().mean();
      } else {
        mean = net.running_mean()[i];
        var = net.running_var()[i];
      }
      const Eigen::VectorXd inv_std = (var.array() + kBatchNormEps).rsqrt();
      Eigen::MatrixXd z_hat = (z.colwise() - mean).array().colwise() * inv_std.array();
      z = (z_hat.array().colwise() * net.gamma(i).array()).colwise() + net.beta(i).array();
      if (lc) {
        lc->z_hat = std::move(z_hat);
        lc->inv_std = inv_std;
        lc->batch_mean = mean;
        lc->batch_var = var;
      }
    }
    switch (spec.activation) {
      case Activation::Identity: break;
      case Activation::Relu: z = z.cwiseMax(0.0); break;
      case Activation::Sigmoid: z = (1.0 + (-z.array()).exp()).inverse(); break;
      case Activation::Softmax: z = softmax_columns(z); break;
    }
    if (lc) lc->activated = z;
    if (train && spec.dropout > 0.0) {
      require(rng != nullptr, ErrorKind::InvalidArgument, "dropout in train mode needs an rng");
      std::bernoulli_distribution keep(1.0 - spec.dropout);
      Eigen::MatrixXd mask(z.rows(), z.cols());
      const double scale = 1.0 / (1.0 - spec.dropout);
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(*rng) ? scale : 0.0;
      z.array() *= mask.array();
      if (lc) lc->mask = std::move(mask);
    }
    h = std::move(z);
  }
  if (cache) cache->output = h;
  return h;
}

Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& x) {
  return forward(net, Eigen::MatrixXd(x), false).col(0);
}

void update_running_stats(Mlp& net, const ForwardCache& cache) {
  if (!cache.train) return;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layers()[i].batch_norm) continue;
    const auto& lc = cache.layers[i];
    const double n = static_cast<double>(lc.z.cols());
    const Eigen::VectorXd unbiased = n > 1 ? Eigen::VectorXd(lc.batch_var * (n / (n - 1))) : lc.batch_var;
    net.running_mean()[i] =
        (1 - kBatchNormMomentum) * net.running_mean()[i] + kBatchNormMomentum * lc.batch_mean;
    net.running_var()[i] =
        (1 - kBatchNormMomentum) * net.running_var()[i] + kBatchNormMomentum * unbiased;
  }
}

Eigen::VectorXd backward(const Mlp& net, const ForwardCache& cache, const Eigen::MatrixXd& grad,
                         GradientAt at, Eigen::MatrixXd* grad_input) {
  const std::size_t L = net.layers().size();
  require(cache.layers.size() == L, ErrorKind::InvalidArgument,
          "stale forward cache: layer count mismatch");
  require(grad.rows() == net.output_dim() && grad.cols() == cache.output.cols(),
          ErrorKind::InvalidArgument, "stale forward cache: gradient shape mismatch");
  for (std::size_t i = 0; i < L; ++i)
    require(cache.layers[i].input.rows() == net.layers()[i].in, ErrorKind::InvalidArgument,
            "stale forward cache: layer input shape mismatch");
  if (at == GradientAt::Logits)
    require(net.layers().back().activation == Activation::Softmax, ErrorKind::InvalidArgument,
            "logit gradients need a softmax head");

  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.n_params()));
  Eigen::MatrixXd d = grad;
  for (std::size_t ii = L; ii-- > 0;) {
    const auto& spec = net.layers()[ii];
    const auto& lc = cache.layers[ii];
    if (lc.mask.size() > 0) d.array() *= lc.mask.array();
    const bool logits_given = at == GradientAt::Logits && ii + 1 == L;
    if (!logits_given) {
      switch (spec.activation) {
        case Activation::Identity: break;
        case Activation::Relu: d.array() *= (lc.activated.array() > 0.0).cast<double>(); break;
        case Activation::Sigmoid:
          d.array() *= lc.activated.array() * (1.0 - lc.activated.array());
          break;
        case Activation::Softmax: {
          const Eigen::MatrixXd& s = lc.activated;
          const Eigen::RowVectorXd dots = (d.array() * s.array()).colwise().sum();
          d = s.array() * (d.array().rowwise() - dots.array());
          break;
        }
      }
    }
    const Eigen::Index out = spec.out, in = spec.in;
    const std::size_t off = net.offset(ii);
    if (spec.batch_norm) {
      const Eigen::VectorXd gamma = net.gamma(ii);
      g.segment(static_cast<Eigen::Index>(off) + out * (in + 1), out) =
          (d.array() * lc.z_hat.array()).rowwise().sum();
      g.segment(static_cast<Eigen::Index>(off) + out * (in + 2), out) = d.rowwise().sum();
      Eigen::MatrixXd dxhat = d.array().colwise() * gamma.array();
      if (cache.train) {
        const double n = static_cast<double>(d.cols());
        const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
        const Eigen::VectorXd sum_dx = (dxhat.array() * lc.z_hat.array()).rowwise().sum();
        Eigen::MatrixXd t = (n * dxhat.array()).colwise() - sum_d.array();
        t.array() -= lc.z_hat.array().colwise() * sum_dx.array();
        d = (t.array().colwise() * lc.inv_std.array()) / n;
      } else {
        d = dxhat.array().colwise() * lc.inv_std.array();
      }
    }
    Eigen::Map<Eigen::MatrixXd>(g.data() + off, out, in).noalias() = d * lc.input.transpose();
    g.segment(static_cast<Eigen::Index>(off) + out * in, out) = d.rowwise().sum();
    if (ii > 0 || grad_input) d = net.weight(ii).transpose() * d;
  }
  if (grad_input) *grad_input = std::move(d);
  return g;
}

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                Eigen::MatrixXd* grad) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          ErrorKind::InvalidArgument, "mse: shape mismatch");
  const double n = static_cast<double>(pred.size());
  const Eigen::MatrixXd diff = pred - target;
  if (grad) *grad = diff * (2.0 / n);
  return diff.squaredNorm() / n;
}

double cross_entropy_loss(const Eigen::MatrixXd& probabilities, std::span<const int> labels,
                          Eigen::MatrixXd* grad_logits) {
  require(static_cast<std::size_t>(probabilities.cols()) == labels.size(),
          ErrorKind::InvalidArgument, "cross entropy: label count mismatch");
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const int y = labels[j];
    require(y >= 0 && y < probabilities.rows(), ErrorKind::InvalidArgument,
            "cross entropy: label out of range");
    loss -= std::log(std::max(probabilities(y, static_cast<Eigen::Index>(j)), 1e-300));
  }
  if (grad_logits) {
    *grad_logits = probabilities;
    for (std::size_t j = 0; j < labels.size(); ++j)
      (*grad_logits)(labels[j], static_cast<Eigen::Index>(j)) -= 1.0;
    *grad_logits /= n;
  }
  return loss / n;
}

// ---------------------------------------------------------------------------

double AdamConfig::lr_at(int epoch) const {
  const int decays = step_size > 0 ? epoch / step_size : 0;
  return lr * std::pow(gamma, decays);
}

AdamState::AdamState(std::size_t n_params, AdamConfig cfg)
    : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {
  require(cfg.lr > 0.0, ErrorKind::InvalidArgument, "learning rate must be positive");
}

void AdamState::step(std::span<double> params, std::span<const double> grad, int epoch) {
  require(params.size() == m_.size() && grad.size() == m_.size(), ErrorKind::InvalidArgument,
          "Adam state does not match parameter count");
  ++t_;
  const double lr = cfg_.lr_at(epoch);
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
  }
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& src, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(src.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = src.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}

MinibatchTrainer::MinibatchTrainer(Mlp& net, AdamState& adam, const TrainConfig& cfg)
    : net_(net), adam_(adam), cfg_(cfg), rng_(cfg.seed) {
  require(cfg.batch_size > 0 && cfg.epochs >= 0, ErrorKind::InvalidArgument,
          "batch size must be positive");
}

std::vector<std::size_t> MinibatchTrainer::epoch_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  return order;
}

double MinibatchTrainer::step(const Eigen::MatrixXd& x, const Eigen::MatrixXd* y,
                              std::span<const int> labels, int epoch,
                              Eigen::MatrixXd* grad_input) {
  ForwardCache cache;
  const Eigen::MatrixXd out = forward(net_, x, true, &rng_, &cache);
  Eigen::MatrixXd grad;
  double loss = 0.0;
  GradientAt at = GradientAt::Output;
  if (cfg_.loss == Loss::Mse) {
    require(y != nullptr, ErrorKind::InvalidArgument, "MSE training needs targets");
    loss = mse_loss(out, *y, &grad);
  } else if (net_.layers().back().activation == Activation::Softmax) {
    loss = cross_entropy_loss(out, labels, &grad);
    at = GradientAt::Logits;
  } else {
    // Identity head: the outputs are the logits.
    loss = cross_entropy_loss(softmax_columns(out), labels, &grad);
  }
  const Eigen::VectorXd g = backward(net_, cache, grad, at, grad_input);
  adam_.step(net_.params(), std::span<const double>(g.data(), static_cast<std::size_t>(g.size())),
             epoch);
  update_running_stats(net_, cache);
  return loss;
}

TrainReport train(Mlp& net, const Dataset& data, const TrainConfig& cfg, AdamState& adam) {
  const std::size_t n = data.size();
  require(n > 0, ErrorKind::InvalidArgument, "training set is empty");
  require(data.x.rows() == net.input_dim(), ErrorKind::InvalidArgument,
          "dataset input dimension does not match network");
  if (cfg.loss == Loss::Mse)
    require(data.y.cols() == data.x.cols() && data.y.rows() == net.output_dim(),
            ErrorKind::InvalidArgument, "dataset targets do not match network output");
  else
    require(data.labels.size() == n, ErrorKind::InvalidArgument, "one label per sample required");

  MinibatchTrainer trainer(net, adam, cfg);
  TrainReport report;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = trainer.epoch_order(n);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < n; s += bs) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, n - s));
      const Eigen::MatrixXd x = gather_columns(data.x, idx);
      double loss;
      if (cfg.loss == Loss::Mse) {
        const Eigen::MatrixXd y = gather_columns(data.y, idx);
        loss = trainer.step(x, &y, {}, epoch);
      } else {
        std::vector<int> labels(idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = data.labels[idx[j]];
        loss = trainer.step(x, nullptr, labels, epoch);
      }
      if (!std::isfinite(loss))
        fail(ErrorKind::Divergence, "training diverged (non-finite loss) at epoch " +
                                        std::to_string(epoch));
      sum += loss;
      ++batches;
    }
    report.loss_history.push_back(sum / static_cast<double>(batches));
  }
  return report;
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

Eigen::MatrixXd barcode_features(const Barcode& barcode, double scale) {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(
      barcode.data.data(), static_cast<Eigen::Index>(barcode.k),
      static_cast<Eigen::Index>(barcode.pixels()));
  if (scale != 1.0) x *= scale;
  return x;
}

Eigen::MatrixXd rgb_features(const RgbImage& image) {
  return Eigen::Map<const Eigen::MatrixXd>(image.data.data(), 3,
                                           static_cast<Eigen::Index>(image.height * image.width));
}

PixelClassification classify_features(const Mlp& net, const Eigen::MatrixXd& features,
                                      std::size_t height, std::size_t width,
                                      std::vector<std::string> classes) {
  require(features.rows() == net.input_dim(), ErrorKind::InvalidArgument,
          "classifier expects " + std::to_string(net.input_dim()) + " input channels, got " +
              std::to_string(features.rows()));
  require(static_cast<std::size_t>(features.cols()) == height * width,
          ErrorKind::InvalidArgument, "feature count does not match image size");
  require(static_cast<std::size_t>(net.output_dim()) == classes.size(),
          ErrorKind::InvalidArgument, "classifier output does not match class table");
  const Eigen::MatrixXd out = forward(net, features, false);
  PixelClassification r{LabelMask(height, width, std::move(classes)),
                        net.layers().back().activation == Activation::Softmax
                            ? out
                            : softmax_columns(out)};
  for (Eigen::Index j = 0; j < r.probabilities.cols(); ++j)
    r.mask.labels[static_cast<std::size_t>(j)] =
        static_cast<std::uint16_t>(argmax(r.probabilities.col(j)));
  return r;
}

PixelClassification classify_pixels(const Mlp& net, const Barcode& barcode,
                                    std::vector<std::string> classes, double scale) {
  return classify_features(net, barcode_features(barcode, scale), barcode.height, barcode.width,
                           std::move(classes));
}

// ---------------------------------------------------------------------------

void save_mlp(const Mlp& net, const std::filesystem::path& path) {
  detail::Writer w;
  w.magic("MLP1");
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.in));
    w.u32(static_cast<std::uint32_t>(l.out));
    w.u8(static_cast<std::uint8_t>(l.activation));
    w.u8(l.batch_norm ? 1 : 0);
    w.f32(l.dropout);
  }
  for (double p : net.params()) w.f32(p);
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layers()[i].batch_norm) continue;
    for (double v : net.running_mean()[i]) w.f32(v);
    for (double v : net.running_var()[i]) w.f32(v);
  }
  w.save(path);
}

Mlp load_mlp(const std::filesystem::path& path) {
  auto r = detail::Reader::from_file(path);
  r.expect_magic("MLP1");
  const std::size_t n = r.u32();
  if (n == 0 || n > 1024) fail(ErrorKind::Format, r.name() + ": bad layer count");
  std::vector<LayerSpec> layers(n);
  for (auto& l : layers) {
    l.in = static_cast<int>(r.u32());
    l.out = static_cast<int>(r.u32());
    const auto act = r.u8();
    if (act > 3) fail(ErrorKind::Format, r.name() + ": unknown activation");
    l.activation = static_cast<Activation>(act);
    l.batch_norm = r.u8() != 0;
    l.dropout = static_cast<double>(r.get<float>());
  }
  Mlp net;
  try {
    net = Mlp(layers, 0);
  } catch (const Error& e) {
    fail(ErrorKind::Format, r.name() + ": " + e.what());
  }
  r.need(net.n_params() * 4);
  for (double& p : net.params()) p = r.f32();
  for (std::size_t i = 0; i < n; ++i) {
    if (!layers[i].batch_norm) continue;
    for (double& v : net.running_mean()[i]) v = r.f32();
    for (double& v : net.running_var()[i]) v = r.f32();
  }
  return net;
}

}  // namespace spectral_codec::nn

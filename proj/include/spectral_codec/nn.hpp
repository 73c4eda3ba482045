#pragma once

// Small fully-connected networks with hand-written backpropagation and Adam.
// Batches are column-major matrices: one sample per column.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "spectral_codec/projector.hpp"
#include "spectral_codec/spectra.hpp"

namespace spectral_codec::nn {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1, Sigmoid = 2, Softmax = 3 };

// One block: affine -> [batch norm] -> activation -> [dropout].
struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation activation = Activation::Identity;
  bool batch_norm = false;
  double dropout = 0.0;  // train-time drop probability, in [0, 1)

  bool operator==(const LayerSpec&) const = default;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<LayerSpec> layers, std::uint64_t seed);

  // sizes = {in, h1, ..., out}; hidden layers share `hidden`, last uses `head`.
  static Mlp sequential(const std::vector<int>& sizes, Activation hidden, Activation head,
                        std::uint64_t seed, bool batch_norm = false, double dropout = 0.0);

  int input_dim() const { return layers_.front().in; }
  int output_dim() const { return layers_.back().out; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t n_params() const { return params_.size(); }

  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l);
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> gamma(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> beta(std::size_t l) const;

  // Batch-norm running statistics (non-trainable).
  std::vector<Eigen::VectorXd>& running_mean() { return running_mean_; }
  std::vector<Eigen::VectorXd>& running_var() { return running_var_; }
  const std::vector<Eigen::VectorXd>& running_mean() const { return running_mean_; }
  const std::vector<Eigen::VectorXd>& running_var() const { return running_var_; }

  // Offset of layer l's parameter block: W (out x in, column-major), b, and
  // for batch-norm layers gamma, beta.
  std::size_t offset(std::size_t l) const { return offsets_[l]; }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  std::vector<Eigen::VectorXd> running_mean_;
  std::vector<Eigen::VectorXd> running_var_;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct LayerCache {
  Eigen::MatrixXd input;     // in x batch
  Eigen::MatrixXd z;         // affine output
  Eigen::MatrixXd z_hat;     // normalized z (batch-norm layers)
  Eigen::VectorXd inv_std;   // 1 / sqrt(var + eps) used for normalization
  Eigen::VectorXd batch_mean;
  Eigen::VectorXd batch_var;
  Eigen::MatrixXd activated; // activation output, before dropout
  Eigen::MatrixXd mask;      // dropout scale mask (train mode, dropout > 0)
};

struct ForwardCache {
  bool train = false;
  std::vector<LayerCache> layers;
  Eigen::MatrixXd output;
};

// `rng` is required only when train == true and some layer has dropout.
Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& x, bool train,
                        std::mt19937_64* rng = nullptr, ForwardCache* cache = nullptr);
Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& x);

// Folds the batch statistics of a train-mode pass into the running averages.
void update_running_stats(Mlp& net, const ForwardCache& cache);

enum class GradientAt {
  Output,  // grad is dL/d(network output)
  Logits,  // grad is dL/d(pre-softmax logits) of a softmax head
};

// Returns dL/dparams in the layout of Mlp::params(). When `grad_input` is
// non-null it receives dL/dx.
Eigen::VectorXd backward(const Mlp& net, const ForwardCache& cache, const Eigen::MatrixXd& grad,
                         GradientAt at = GradientAt::Output,
                         Eigen::MatrixXd* grad_input = nullptr);

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);

// Mean over every element; grad = dL/dpred.
double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                Eigen::MatrixXd* grad = nullptr);
// Mean negative log-likelihood of softmax probabilities; grad is dL/dlogits.
double cross_entropy_loss(const Eigen::MatrixXd& probabilities, std::span<const int> labels,
                          Eigen::MatrixXd* grad_logits = nullptr);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int step_size = 50;  // epochs between decays
  double gamma = 0.1;

  double lr_at(int epoch) const;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t n_params, AdamConfig cfg);

  void step(std::span<double> params, std::span<const double> grad, int epoch);

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t t_ = 0;
};

enum class Loss { Mse, CrossEntropy };

struct Dataset {
  Eigen::MatrixXd x;        // in x n
  Eigen::MatrixXd y;        // out x n (Mse)
  std::vector<int> labels;  // n (CrossEntropy)

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
};

struct TrainConfig {
  Loss loss = Loss::Mse;
  int epochs = 10;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> loss_history;  // mean minibatch loss per epoch
};

// Shuffling, batching and update logic shared by nn::train and the
// end-to-end trainer, so both walk identical trajectories for equal seeds.
class MinibatchTrainer {
 public:
  MinibatchTrainer(Mlp& net, AdamState& adam, const TrainConfig& cfg);

  std::vector<std::size_t> epoch_order(std::size_t n);
  // One Adam step on the batch; returns the batch loss. `grad_input` gets
  // dL/dx at the pre-update parameters.
  double step(const Eigen::MatrixXd& x, const Eigen::MatrixXd* y, std::span<const int> labels,
              int epoch, Eigen::MatrixXd* grad_input = nullptr);
  std::mt19937_64& rng() { return rng_; }

 private:
  Mlp& net_;
  AdamState& adam_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
};

// Columns of `src` in the order given by idx.
Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& src, std::span<const std::size_t> idx);

TrainReport train(Mlp& net, const Dataset& data, const TrainConfig& cfg, AdamState& adam);

// argmax with lowest-index tie-break.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

// Network inputs from a barcode: one column per pixel, every value times `scale`.
Eigen::MatrixXd barcode_features(const Barcode& barcode, double scale = 1.0);
Eigen::MatrixXd rgb_features(const RgbImage& image);

struct PixelClassification {
  LabelMask mask;
  Eigen::MatrixXd probabilities;  // n_classes x pixels, columns sum to 1
};

// Softmax of the network output per pixel, label = argmax.
PixelClassification classify_features(const Mlp& net, const Eigen::MatrixXd& features,
                                      std::size_t height, std::size_t width,
                                      std::vector<std::string> classes);
PixelClassification classify_pixels(const Mlp& net, const Barcode& barcode,
                                    std::vector<std::string> classes, double scale = 1.0);

void save_mlp(const Mlp& net, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Geometry surrogate: metasurface geometry -> transmission spectrum.

inline constexpr int kMaxBoxes = 5;
inline constexpr int kShapeDim = 4 * kMaxBoxes;
inline constexpr std::array<int, 3> kPeriods{250, 500, 750};
inline constexpr std::array<int, 11> kThicknesses{50, 75, 100, 125, 150, 175,
                                                  200, 225, 250, 275, 300};

// Up to five cuboids, each (cx, cy, w, h) normalized to [0, 1]. A box with
// w == 0 or h == 0 is an unused slot.
struct GeometryParams {
  std::array<double, kShapeDim> shape{};
  int period_nm = 500;
  int thickness_nm = 150;

  bool box_active(int i) const { return shape[4 * i + 2] > 0.0 && shape[4 * i + 3] > 0.0; }
  int period_index() const;
  int thickness_index() const;
  void validate() const;
  // Shape vector with unused slots zeroed.
  Eigen::VectorXd continuous_features() const;
};

GeometryParams random_geometry(std::mt19937_64& rng);

// Synthetic geometry -> spectrum oracle: a product of Lorentzian dips (one per
// active box) whose centres and widths vary smoothly with box size, on a
// baseline set by period and thickness.
Eigen::VectorXd oracle_spectrum(const GeometryParams& g, const SpectralGrid& grid);

struct SurrogateBatch {
  Eigen::MatrixXd shape;        // 20 x n
  Eigen::MatrixXd period;       // 3 x n one-hot
  Eigen::MatrixXd thickness;    // 11 x n one-hot
};

SurrogateBatch make_surrogate_batch(std::span<const GeometryParams> geometries);

// Continuous branch and categorical embedding branch, concatenated into a
// readout stack with a sigmoid head.
class Surrogate {
 public:
  Surrogate(int bands, std::uint64_t seed, double dropout = 0.1);

  int bands() const { return readout_.output_dim(); }

  struct Cache {
    ForwardCache continuous, period, thickness, categorical, readout;
  };

  Eigen::MatrixXd forward(const SurrogateBatch& batch, bool train, std::mt19937_64* rng,
                          Cache* cache = nullptr) const;
  // Parameter gradients per sub-network (same order as nets()), plus the
  // gradient w.r.t. the continuous shape input when requested.
  std::vector<Eigen::VectorXd> backward(const Cache& cache, const Eigen::MatrixXd& grad_out,
                                        Eigen::MatrixXd* grad_shape = nullptr) const;
  void update_running_stats(const Cache& cache);

  std::array<Mlp*, 5> nets();
  std::array<const Mlp*, 5> nets() const;

 private:
  Mlp continuous_;
  Mlp period_embed_;
  Mlp thickness_embed_;
  Mlp categorical_;
  Mlp readout_;
};

struct SurrogateTrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_mse;
};

SurrogateTrainReport train_surrogate(Surrogate& net, std::span<const GeometryParams> train_x,
                                     const Eigen::MatrixXd& train_y,
                                     std::span<const GeometryParams> val_x,
                                     const Eigen::MatrixXd& val_y, const TrainConfig& cfg,
                                     const AdamConfig& adam);

double surrogate_mse(const Surrogate& net, std::span<const GeometryParams> x,
                     const Eigen::MatrixXd& y);

// Eval-mode prediction, values in (0, 1).
Eigen::VectorXd surrogate_predict(const Surrogate& net, const GeometryParams& g);

}  // namespace spectral_codec::nn

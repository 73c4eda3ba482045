#include <doctest.h>

#include <cmath>
#include <random>

#include "spectral_codec/error.hpp"
#include "spectral_codec/nn.hpp"
#include "test_util.hpp"

using namespace spectral_codec;
using namespace spectral_codec::nn;

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

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                              double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

// Scalar test loss sum(R .* out), so dL/dout = R.
double probe(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& R) {
  return (forward(net, x, true).array() * R.array()).sum();
}

void check_close(double analytic, double numeric, double tol) {
  CHECK(std::abs(analytic - numeric) <= tol * std::max({1.0, std::abs(analytic), std::abs(numeric)}));
}

void check_backward(Mlp net, std::uint64_t seed, int batch) {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd x = random_matrix(net.input_dim(), batch, rng);
  const Eigen::MatrixXd R = random_matrix(net.output_dim(), batch, rng);
  ForwardCache cache;
  forward(net, x, true, nullptr, &cache);
  Eigen::MatrixXd gx;
  const Eigen::VectorXd g = backward(net, cache, R, GradientAt::Output, &gx);
  REQUIRE(static_cast<std::size_t>(g.size()) == net.n_params());
  const double h = 1e-6;
  for (std::size_t p = 0; p < net.n_params(); ++p) {
    const double keep = net.params()[p];
    net.params()[p] = keep + h;
    const double up = probe(net, x, R);
    net.params()[p] = keep - h;
    const double dn = probe(net, x, R);
    net.params()[p] = keep;
    check_close(g[static_cast<Eigen::Index>(p)], (up - dn) / (2 * h), 1e-4);
  }
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::MatrixXd a = x, b = x;
      a(i, j) += h;
      b(i, j) -= h;
      check_close(gx(i, j), (probe(net, a, R) - probe(net, b, R)) / (2 * h), 1e-4);
    }
}

}  // namespace

TEST_CASE("forward basics") {
  SUBCASE("identity network") {
    Mlp net({{3, 3, Activation::Identity}}, 0);
    net.weight(0).setIdentity();
    net.bias(0).setZero();
    const Eigen::Vector3d x(0.3, -2.0, 7.5);
    CHECK((forward(net, Eigen::VectorXd(x)) - x).norm() == 0.0);
  }
  SUBCASE("sigmoid head stays in (0, 1)") {
    const auto net = Mlp::sequential({4, 16, 5}, Activation::Relu, Activation::Sigmoid, 1);
    std::mt19937_64 rng(1);
    const auto y = forward(net, random_matrix(4, 200, rng, -50, 50), false);
    CHECK(y.minCoeff() >= 0.0);
    CHECK(y.maxCoeff() <= 1.0);
  }
  SUBCASE("eval mode is deterministic even with dropout and batch norm") {
    const auto net =
        Mlp::sequential({4, 16, 16, 3}, Activation::Relu, Activation::Softmax, 2, true, 0.5);
    std::mt19937_64 rng(2);
    const auto x = random_matrix(4, 10, rng);
    const auto a = forward(net, x, false);
    CHECK(a == forward(net, x, false));
    for (Eigen::Index j = 0; j < a.cols(); ++j) CHECK(a.col(j).sum() == doctest::Approx(1.0));
    // A single column in eval mode matches the batch.
    CHECK((forward(net, Eigen::VectorXd(x.col(3))) - a.col(3)).norm() < 1e-14);
  }
  SUBCASE("input checks") {
    const auto net = Mlp::sequential({2, 3, 1}, Activation::Relu, Activation::Identity, 0);
    CHECK(kind_of([&] { forward(net, Eigen::MatrixXd::Zero(3, 1), false); }) ==
          ErrorKind::InvalidArgument);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 1);
    bad(0, 0) = std::nan("");
    CHECK(kind_of([&] { forward(net, bad, false); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([&] { Mlp({{2, 3, Activation::Relu}, {4, 1, Activation::Identity}}, 0); }) ==
          ErrorKind::InvalidArgument);
    CHECK(kind_of([&] { Mlp({{2, 3, Activation::Softmax}, {3, 1, Activation::Identity}}, 0); }) ==
          ErrorKind::InvalidArgument);
    CHECK(kind_of([&] { Mlp({{2, 3, Activation::Relu, false, 1.0}}, 0); }) ==
          ErrorKind::InvalidArgument);
  }
}

TEST_CASE("backward matches central differences") {
  SUBCASE("2-3-1") {
    check_backward(Mlp::sequential({2, 3, 1}, Activation::Sigmoid, Activation::Identity, 3), 3, 5);
  }
  SUBCASE("random networks") {
    for (std::uint64_t s = 0; s < 6; ++s) {
      const Activation hidden = s % 2 ? Activation::Relu : Activation::Sigmoid;
      const Activation head = s % 3 == 0   ? Activation::Softmax
                              : s % 3 == 1 ? Activation::Sigmoid
                                           : Activation::Identity;
      check_backward(Mlp::sequential({3, 6, 5, 4}, hidden, head, 10 + s, s >= 3), 20 + s, 7);
    }
  }
  SUBCASE("softmax head with logit gradients") {
    auto net = Mlp::sequential({3, 5, 4}, Activation::Sigmoid, Activation::Softmax, 4, true);
    std::mt19937_64 rng(4);
    const auto x = random_matrix(3, 6, rng);
    const std::vector<int> labels{0, 3, 1, 1, 2, 0};
    ForwardCache cache;
    Eigen::MatrixXd gl;
    cross_entropy_loss(forward(net, x, true, nullptr, &cache), labels, &gl);
    const auto g = backward(net, cache, gl, GradientAt::Logits);
    const double h = 1e-6;
    for (std::size_t p = 0; p < net.n_params(); ++p) {
      const double keep = net.params()[p];
      net.params()[p] = keep + h;
      const double up = cross_entropy_loss(forward(net, x, true), labels);
      net.params()[p] = keep - h;
      const double dn = cross_entropy_loss(forward(net, x, true), labels);
      net.params()[p] = keep;
      check_close(g[static_cast<Eigen::Index>(p)], (up - dn) / (2 * h), 1e-4);
    }
  }
  SUBCASE("zero upstream gradient gives zero gradients") {
    const auto net = Mlp::sequential({3, 8, 2}, Activation::Relu, Activation::Identity, 5, true);
    std::mt19937_64 rng(5);
    ForwardCache cache;
    forward(net, random_matrix(3, 4, rng), true, nullptr, &cache);
    Eigen::MatrixXd gx;
    CHECK(backward(net, cache, Eigen::MatrixXd::Zero(2, 4), GradientAt::Output, &gx).norm() ==
          0.0);
    CHECK(gx.norm() == 0.0);
  }
}

TEST_CASE("losses and helpers") {
  Eigen::MatrixXd p(2, 2), t(2, 2), g;
  p << 1, 2, 3, 4;
  t << 1, 0, 3, 0;
  CHECK(mse_loss(p, t, &g) == doctest::Approx(5.0));
  CHECK(g(0, 1) == doctest::Approx(1.0));

  Eigen::MatrixXd logits(3, 1);
  logits << 1000.0, 1000.0, -1000.0;
  const auto s = softmax_columns(logits);
  CHECK(s.sum() == doctest::Approx(1.0));
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(argmax(s.col(0)) == 0);
  CHECK(argmax(Eigen::Vector3d(1, 3, 3)) == 1);

  const std::vector<int> labels{0};
  CHECK(cross_entropy_loss(s, labels) == doctest::Approx(std::log(2.0)));
  const std::vector<int> bad{3};
  CHECK(kind_of([&] { cross_entropy_loss(s, bad); }) == ErrorKind::InvalidArgument);

  AdamConfig a;
  a.lr = 1e-2;
  a.step_size = 50;
  a.gamma = 0.1;
  CHECK(a.lr_at(0) == 1e-2);
  CHECK(a.lr_at(49) == 1e-2);
  CHECK(a.lr_at(50) == doctest::Approx(1e-3));
  CHECK(a.lr_at(149) == doctest::Approx(1e-4));
}

TEST_CASE("training converges on small problems") {
  SUBCASE("1-4-1 regression of the identity") {
    Dataset d;
    d.x.resize(1, 64);
    for (int i = 0; i < 64; ++i) d.x(0, i) = -1.0 + 2.0 * i / 63.0;
    d.y = d.x;
    auto net = Mlp::sequential({1, 4, 1}, Activation::Sigmoid, Activation::Identity, 7);
    AdamConfig ac;
    ac.lr = 1e-2;
    ac.step_size = 1000;
    AdamState adam(net.n_params(), ac);
    TrainConfig tc;
    tc.epochs = 400;
    tc.batch_size = 16;
    const auto rep = train(net, d, tc, adam);
    CHECK(rep.loss_history.back() < rep.loss_history.front());
    CHECK(mse_loss(forward(net, d.x, false), d.y) < 1e-3);
  }
  SUBCASE("2-8-2 classifier learns XOR") {
    Dataset d;
    d.x.resize(2, 4);
    d.x << 0, 0, 1, 1, 0, 1, 0, 1;
    d.labels = {0, 1, 1, 0};
    auto net = Mlp::sequential({2, 8, 2}, Activation::Relu, Activation::Softmax, 8);
    AdamConfig ac;
    ac.lr = 5e-2;
    ac.step_size = 1000;
    AdamState adam(net.n_params(), ac);
    TrainConfig tc;
    tc.loss = Loss::CrossEntropy;
    tc.epochs = 500;
    tc.batch_size = 4;
    train(net, d, tc, adam);
    const auto probs = forward(net, d.x, false);
    for (int j = 0; j < 4; ++j) CHECK(argmax(probs.col(j)) == d.labels[static_cast<std::size_t>(j)]);
  }
  SUBCASE("equal seeds give identical runs") {
    Dataset d;
    std::mt19937_64 rng(9);
    d.x = random_matrix(3, 50, rng);
    d.y = random_matrix(2, 50, rng);
    auto run = [&] {
      auto net = Mlp::sequential({3, 8, 2}, Activation::Relu, Activation::Identity, 1, true, 0.2);
      AdamState adam(net.n_params(), AdamConfig{});
      TrainConfig tc;
      tc.epochs = 3;
      tc.batch_size = 8;
      tc.seed = 4;
      train(net, d, tc, adam);
      return std::vector<double>(net.params().begin(), net.params().end());
    };
    CHECK(run() == run());
  }
  SUBCASE("non-finite loss raises Divergence") {
    Dataset d;
    d.x = Eigen::MatrixXd::Ones(1, 4);
    d.y = Eigen::MatrixXd::Constant(1, 4, std::nan(""));
    auto net = Mlp::sequential({1, 2, 1}, Activation::Relu, Activation::Identity, 0);
    AdamState adam(net.n_params(), AdamConfig{});
    CHECK(kind_of([&] { train(net, d, TrainConfig{}, adam); }) == ErrorKind::Divergence);
  }
}

TEST_CASE("MLP1 file round trip") {
  test_util::TempDir dir("nn");
  auto net = Mlp::sequential({5, 7, 3}, Activation::Relu, Activation::Softmax, 11, true, 0.25);
  net.running_mean()[0].setConstant(0.3);
  net.running_var()[0].setConstant(2.0);
  save_mlp(net, dir / "net.mlp");
  const auto back = load_mlp(dir / "net.mlp");
  CHECK(back.layers() == net.layers());
  for (std::size_t p = 0; p < net.n_params(); ++p)
    CHECK(back.params()[p] == static_cast<double>(static_cast<float>(net.params()[p])));
  CHECK(back.running_var()[0][2] == doctest::Approx(2.0));
  std::mt19937_64 rng(1);
  const auto x = random_matrix(5, 4, rng);
  CHECK((forward(back, x, false) - forward(net, x, false)).cwiseAbs().maxCoeff() < 1e-5);

  CHECK(kind_of([&] { load_mlp(dir / "missing.mlp"); }) == ErrorKind::Io);
  test_util::write_bytes(dir / "bad.mlp", "NOPE");
  CHECK(kind_of([&] { load_mlp(dir / "bad.mlp"); }) == ErrorKind::Format);
  auto bytes = test_util::read_bytes(dir / "net.mlp");
  bytes.resize(bytes.size() - 8);
  test_util::write_bytes(dir / "short.mlp", bytes);
  CHECK(kind_of([&] { load_mlp(dir / "short.mlp"); }) == ErrorKind::Truncated);
}

TEST_CASE("geometry surrogate") {
  const auto grid = SpectralGrid::desk_default();
  Surrogate net(31, 3);
  std::mt19937_64 rng(3);
  const auto g = random_geometry(rng);
  const auto y = surrogate_predict(net, g);
  CHECK(y.size() == 31);
  CHECK(y.minCoeff() > 0.0);
  CHECK(y.maxCoeff() < 1.0);

  SUBCASE("unused slots do not matter") {
    GeometryParams a;
    a.shape = {0.5, 0.5, 0.4, 0.6};
    GeometryParams b = a;
    b.shape[4] = 0.9;  // slot 1 has w = h = 0
    b.shape[5] = 0.1;
    b.shape[6] = 0.7;  // w set but h = 0: still unused
    CHECK(surrogate_predict(net, a) == surrogate_predict(net, b));
    CHECK(oracle_spectrum(a, grid) == oracle_spectrum(b, grid));
  }
  SUBCASE("shape gradient matches central differences") {
    std::vector<GeometryParams> gs{g};
    const auto batch = make_surrogate_batch(gs);
    Surrogate::Cache cache;
    const auto out = net.forward(batch, false, nullptr, &cache);
    const Eigen::MatrixXd R = random_matrix(31, 1, rng);
    Eigen::MatrixXd gshape;
    net.backward(cache, R, &gshape);
    const double h = 1e-6;
    for (int i = 0; i < kShapeDim; ++i) {
      if (!g.box_active(i / 4)) continue;
      SurrogateBatch a = batch, b = batch;
      a.shape(i, 0) += h;
      b.shape(i, 0) -= h;
      const double fd = ((net.forward(a, false, nullptr).array() - net.forward(b, false, nullptr).array()) *
                         R.array()).sum() / (2 * h);
      check_close(gshape(i, 0), fd, 1e-4);
    }
  }
  SUBCASE("geometry validation") {
    GeometryParams bad;
    bad.period_nm = 300;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidArgument);
    bad.period_nm = 500;
    bad.thickness_nm = 60;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidArgument);
    bad.thickness_nm = 300;
    bad.shape[0] = 1.5;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidArgument);
  }
}

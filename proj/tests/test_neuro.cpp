#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <zlib.h>

#include "doctest.h"
#include "v2x/neuro.hpp"

using namespace v2x::neuro;

namespace {

// Plain-loop forward pass over the flat parameter vector.
std::vector<double> naive_forward(const std::vector<int>& sizes, const std::vector<double>& p,
                                  std::vector<double> x) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    std::vector<double> y(out, 0.0);
    for (int o = 0; o < out; ++o) {
      for (int i = 0; i < in; ++i) y[o] += p[off + o * in + i] * x[i];
    }
    off += static_cast<std::size_t>(in) * out;
    for (int o = 0; o < out; ++o) {
      y[o] += p[off + o];
      if (l + 2 < sizes.size()) y[o] = std::max(0.0, y[o]);
    }
    off += out;
    x = std::move(y);
  }
  return x;
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double objective(const QNetwork& net, const Matrix& x, const Matrix& dy) {
  return (net.forward(x).array() * dy.array()).sum() / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("init: shapes, bounds, zero biases, determinism") {
  const auto net = QNetwork::init({24, 500, 250, 120, 16}, 7);
  CHECK(net.num_layers() == 4);
  CHECK(net.parameter_count() == 24 * 500 + 500 + 500 * 250 + 250 + 250 * 120 + 120 + 120 * 16 + 16);
  const std::vector<int> fan_in{24, 500, 250, 120};
  for (std::size_t l = 0; l < 4; ++l) {
    const double bound = 1.0 / std::sqrt(fan_in[l]);
    CHECK(net.weight(l).cwiseAbs().maxCoeff() <= bound);
    CHECK(net.bias(l).isZero());
  }
  CHECK(net == QNetwork::init({24, 500, 250, 120, 16}, 7));
  CHECK_FALSE(net == QNetwork::init({24, 500, 250, 120, 16}, 8));
  CHECK_THROWS(QNetwork::init({4}, 0));
  CHECK_THROWS(QNetwork::init({4, 0, 2}, 0));
}

TEST_CASE("forward matches a plain-loop evaluation") {
  std::mt19937_64 rng(11);
  std::vector<int> sizes{5, 7, 6, 3};
  auto net = QNetwork::init(sizes, 3);
  // Nonzero biases so they are exercised.
  auto p = net.parameters();
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& v : p) v += n(rng);
  net.set_parameters(p);
  const Matrix x = random_matrix(9, 5, rng);
  const Matrix y = net.forward(x);
  REQUIRE(y.rows() == 9);
  REQUIRE(y.cols() == 3);
  for (int r = 0; r < 9; ++r) {
    std::vector<double> row(x.row(r).data(), x.row(r).data() + 5);
    const auto want = naive_forward(sizes, p, row);
    const auto one = net.forward_one(row);
    for (int c = 0; c < 3; ++c) {
      CHECK(y(r, c) == doctest::Approx(want[c]).epsilon(1e-12));
      CHECK(one(c) == doctest::Approx(want[c]).epsilon(1e-12));
    }
  }
  CHECK_THROWS(net.forward(Matrix::Zero(2, 4)));
}

TEST_CASE("parameters round-trip through set_parameters") {
  auto net = QNetwork::init({3, 4, 2}, 1);
  auto p = net.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.01 * static_cast<double>(i);
  net.set_parameters(p);
  CHECK(net.parameters() == p);
  CHECK(net.weight(0)(1, 2) == p[1 * 3 + 2]);
  CHECK(net.bias(0)(3) == p[12 + 3]);
  CHECK_THROWS(net.set_parameters(std::vector<double>(p.size() - 1)));
  CHECK(describe_parameter(net, 0) == "W0[0,0]");
  CHECK(describe_parameter(net, 12) == "b0[0]");
  CHECK(describe_parameter(net, 16) == "W1[0,0]");
}

TEST_CASE("backward agrees with central differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> sizes{4, 6, 5, 3};
    auto net = QNetwork::init(sizes, 100 + trial);
    const Matrix x = random_matrix(4, 4, rng);
    const Matrix dy = random_matrix(4, 3, rng);
    const auto analytic = flatten(net.backward(x, dy));
    const auto base = net.parameters();
    const auto pattern = net.activation_pattern(x);
    const double h = 1e-6;
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto p = base;
      p[i] = base[i] + h;
      net.set_parameters(p);
      const bool kink_plus = net.activation_pattern(x) != pattern;
      const double up = objective(net, x, dy);
      p[i] = base[i] - h;
      net.set_parameters(p);
      const bool kink_minus = net.activation_pattern(x) != pattern;
      const double down = objective(net, x, dy);
      net.set_parameters(base);
      if (kink_plus || kink_minus) continue;
      const double numeric = (up - down) / (2 * h);
      CHECK(std::abs(numeric - analytic[i]) <= 1e-6 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST_CASE("grad_check passes clean gradients and flags a corrupted one") {
  std::mt19937_64 rng(9);
  const auto net = QNetwork::init({6, 8, 4}, 2);
  const Matrix x = random_matrix(3, 6, rng);
  const Matrix dy = random_matrix(3, 4, rng);
  const auto clean = grad_check(net, x, dy);
  CHECK(clean.passed);
  CHECK(clean.max_relative_error < 1e-4);
  CHECK(clean.checked + clean.skipped_kinks == net.parameter_count());

  const auto g = flatten(net.backward(x, dy));
  std::size_t big = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (std::abs(g[i]) > std::abs(g[big])) big = i;
  }
  const auto bad = grad_check(net, x, dy, {}, big);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_index == big);
  CHECK(bad.worst_coordinate == describe_parameter(net, big));
  CHECK(bad.max_relative_error == doctest::Approx(2.0).epsilon(1e-3));

  GradCheckOptions loose;
  loose.tolerance = 3.0;
  CHECK(grad_check(net, x, dy, loose, big).passed);
}

TEST_CASE("RMSProp step matches the update rule") {
  auto net = QNetwork::init({2, 3, 1}, 4);
  RmsPropParams params{0.01, 0.9, 1e-8};
  RmsProp opt(net, params);
  const auto before = net.parameters();
  auto grads = zeros_like(net);
  grads.weights[0](1, 0) = 0.5;
  grads.biases[1](0) = -2.0;
  opt.step(net, grads);
  auto after = net.parameters();
  const double v1 = 0.1 * 0.25;
  CHECK(after[1 * 2 + 0] == doctest::Approx(before[2] - 0.01 * 0.5 / (std::sqrt(v1) + 1e-8)));
  const std::size_t b1 = 6 + 3 + 3;
  const double v2 = 0.1 * 4.0;
  CHECK(after[b1] == doctest::Approx(before[b1] + 0.01 * 2.0 / (std::sqrt(v2) + 1e-8)));
  // Untouched coordinates stay put.
  CHECK(after[0] == before[0]);

  // Second step accumulates the mean square.
  opt.step(net, grads);
  const double v1b = 0.9 * v1 + 0.1 * 0.25;
  CHECK(opt.mean_square().weights[0](1, 0) == doctest::Approx(v1b));
  CHECK(net.parameters()[2] ==
        doctest::Approx(after[2] - 0.01 * 0.5 / (std::sqrt(v1b) + 1e-8)));

  CHECK_THROWS(RmsProp(net, {0.01, 1.0, 1e-8}));
}

TEST_CASE("checkpoint round-trip is bit exact") {
  std::vector<QNetwork> nets{QNetwork::init({24, 10, 16}, 1), QNetwork::init({24, 12, 8, 16}, 2)};
  const auto bytes = encode_checkpoint(nets);
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == nets[0]);
  CHECK(back[1] == nets[1]);

  const auto dir = std::filesystem::temp_directory_path() / "v2x_neuro_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "nets.bin";
  save_checkpoint(path, nets);
  CHECK_FALSE(std::filesystem::exists(dir / "nets.bin.tmp"));
  const auto loaded = load_checkpoint(path);
  CHECK(loaded == back);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint corruption is detected") {
  std::vector<QNetwork> nets{QNetwork::init({4, 5, 3}, 1)};
  const auto bytes = encode_checkpoint(nets);

  auto flipped = bytes;
  flipped[30] ^= 0x01;
  CHECK_THROWS_WITH(decode_checkpoint(flipped), "checkpoint checksum mismatch");

  CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)));
  CHECK_THROWS_WITH(decode_checkpoint("garbage"), "not a Q-network checkpoint");

  // A future version with a valid checksum.
  auto future = bytes.substr(0, bytes.size() - 4);
  future[8] = 2;
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(future.data()), static_cast<uInt>(future.size())));
  for (int i = 0; i < 4; ++i) future.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));
  CHECK_THROWS_WITH(decode_checkpoint(future), "unsupported checkpoint version 2");

  CHECK_THROWS(load_checkpoint("/nonexistent/dir/nets.bin"));
}

#include "v2x/neuro.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "v2x/rng.hpp"

namespace v2x::neuro {

QNetwork QNetwork::init(std::vector<int> layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("network needs at least two layers");
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("zero-size layer");
  }
  QNetwork net;
  net.sizes_ = std::move(layer_sizes);
  Rng rng = make_rng(seed, 0x6e6e);
  for (std::size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
    const int in = net.sizes_[l];
    const int out = net.sizes_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = u(rng);
    net.weights_.push_back(std::move(w));
    net.biases_.push_back(Vector::Zero(out));
  }
  return net;
}

std::size_t QNetwork::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Matrix QNetwork::forward(const Matrix& x) const {
  if (x.cols() != input_size()) {
    throw std::invalid_argument(fmt::format("input width {} != {}", x.cols(), input_size()));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = h * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose();
    if (l + 1 < weights_.size()) {
      h = z.cwiseMax(0.0);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Vector QNetwork::forward_one(std::span<const double> x) const {
  Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return forward(row).row(0).transpose();
}

Gradients QNetwork::backward(const Matrix& x, const Matrix& output_gradient) const {
  if (x.cols() != input_size()) throw std::invalid_argument("input width mismatch");
  if (output_gradient.rows() != x.rows() || output_gradient.cols() != output_size()) {
    throw std::invalid_argument("output gradient shape mismatch");
  }
  const std::size_t L = weights_.size();
  std::vector<Matrix> acts;
  acts.reserve(L);
  acts.push_back(x);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Matrix z = acts.back() * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose();
    acts.push_back(z.cwiseMax(0.0));
  }

  Gradients g;
  g.weights.resize(L);
  g.biases.resize(L);
  Matrix delta = output_gradient / static_cast<double>(x.rows());
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l] = delta.transpose() * acts[l];
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * weights_[l];
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

std::vector<bool> QNetwork::activation_pattern(const Matrix& x) const {
  std::vector<bool> pattern;
  Matrix h = x;
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
    Matrix z = h * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose();
    for (Eigen::Index i = 0; i < z.size(); ++i) pattern.push_back(z.data()[i] > 0.0);
    h = z.cwiseMax(0.0);
  }
  return pattern;
}

std::vector<double> QNetwork::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.insert(flat.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
    flat.insert(flat.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
  }
  return flat;
}

void QNetwork::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("parameter count mismatch");
  std::size_t pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::copy_n(flat.data() + pos, weights_[l].size(), weights_[l].data());
    pos += weights_[l].size();
    std::copy_n(flat.data() + pos, biases_[l].size(), biases_[l].data());
    pos += biases_[l].size();
  }
}

bool QNetwork::operator==(const QNetwork& other) const {
  return sizes_ == other.sizes_ && parameters() == other.parameters();
}

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> flat;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    flat.insert(flat.end(), g.weights[l].data(), g.weights[l].data() + g.weights[l].size());
    flat.insert(flat.end(), g.biases[l].data(), g.biases[l].data() + g.biases[l].size());
  }
  return flat;
}

Gradients zeros_like(const QNetwork& net) {
  Gradients g;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    g.weights.push_back(Matrix::Zero(net.weight(l).rows(), net.weight(l).cols()));
    g.biases.push_back(Vector::Zero(net.bias(l).size()));
  }
  return g;
}

RmsProp::RmsProp(const QNetwork& net, RmsPropParams params)
    : params_(params), mean_square_(zeros_like(net)) {
  if (!(params.decay > 0.0 && params.decay < 1.0)) throw std::invalid_argument("decay must be in (0,1)");
}

void RmsProp::step(QNetwork& net, const Gradients& grads) {
  const double d = params_.decay;
  const double lr = params_.learning_rate;
  const double e = params_.epsilon;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& vw = mean_square_.weights[l];
    vw = d * vw + (1.0 - d) * grads.weights[l].cwiseAbs2();
    net.weight(l).array() -= lr * grads.weights[l].array() / (vw.array().sqrt() + e);
    auto& vb = mean_square_.biases[l];
    vb = d * vb + (1.0 - d) * grads.biases[l].cwiseAbs2();
    net.bias(l).array() -= lr * grads.biases[l].array() / (vb.array().sqrt() + e);
  }
}

std::string describe_parameter(const QNetwork& net, std::size_t flat_index) {
  std::size_t pos = flat_index;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weight(l);
    if (pos < static_cast<std::size_t>(w.size())) {
      return fmt::format("W{}[{},{}]", l, pos / w.cols(), pos % w.cols());
    }
    pos -= w.size();
    if (pos < static_cast<std::size_t>(net.bias(l).size())) return fmt::format("b{}[{}]", l, pos);
    pos -= net.bias(l).size();
  }
  return "out-of-range";
}

GradCheckReport check_gradient(const QNetwork& net, std::span<const double> analytic,
                               const ScalarObjective& objective, const GradCheckOptions& opts) {
  const auto base = net.parameters();
  if (analytic.size() != base.size()) throw std::invalid_argument("gradient size mismatch");
  GradCheckReport report;
  QNetwork probe = net;
  auto params = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    params[i] = base[i] + opts.step;
    probe.set_parameters(params);
    const double up = objective.value(probe);
    const auto pattern_up = objective.pattern(probe);
    params[i] = base[i] - opts.step;
    probe.set_parameters(params);
    const double down = objective.value(probe);
    const auto pattern_down = objective.pattern(probe);
    params[i] = base[i];
    if (pattern_up != pattern_down) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * opts.step);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), opts.scale_floor});
    const double rel = std::abs(numeric - analytic[i]) / scale;
    ++report.checked;
    if (report.checked == 1 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  report.worst_coordinate = describe_parameter(net, report.worst_index);
  report.passed = report.max_relative_error < opts.tolerance;
  return report;
}

namespace {

struct ContractedOutput final : ScalarObjective {
  const Matrix& x;
  const Matrix& dy;
  ContractedOutput(const Matrix& x_, const Matrix& dy_) : x(x_), dy(dy_) {}
  double value(const QNetwork& net) const override {
    return net.forward(x).cwiseProduct(dy).sum() / static_cast<double>(x.rows());
  }
  std::vector<bool> pattern(const QNetwork& net) const override {
    return net.activation_pattern(x);
  }
};

}  // namespace

GradCheckReport grad_check(const QNetwork& net, const Matrix& x, const Matrix& output_gradient,
                           const GradCheckOptions& opts, std::optional<std::size_t> corrupt_index) {
  auto analytic = flatten(net.backward(x, output_gradient));
  if (corrupt_index) analytic.at(*corrupt_index) = -analytic.at(*corrupt_index);
  return check_gradient(net, analytic, ContractedOutput(x, output_gradient), opts);
}

}  // namespace v2x::neuro

#pragma once

// Fully connected ReLU network with hand-written reverse mode and RMSProp.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace v2x::neuro {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Gradients {
  std::vector<Matrix> weights;  // [layer] out x in
  std::vector<Vector> biases;   // [layer] out
};

// Hidden layers apply max(0, .), the output layer is linear. Inputs are batch
// rows.
class QNetwork {
 public:
  QNetwork() = default;

  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  static QNetwork init(std::vector<int> layer_sizes, std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  std::size_t parameter_count() const;

  Matrix forward(const Matrix& x) const;
  Vector forward_one(std::span<const double> x) const;

  // Mean over batch rows of d<output_gradient_r, f(x_r)>/d theta.
  Gradients backward(const Matrix& x, const Matrix& output_gradient) const;

  // Hidden-unit on/off pattern for a batch, used to detect ReLU kinks.
  std::vector<bool> activation_pattern(const Matrix& x) const;

  Matrix& weight(std::size_t layer) { return weights_[layer]; }
  const Matrix& weight(std::size_t layer) const { return weights_[layer]; }
  Vector& bias(std::size_t layer) { return biases_[layer]; }
  const Vector& bias(std::size_t layer) const { return biases_[layer]; }

  // Layer by layer, weights (row-major) then bias.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  bool operator==(const QNetwork& other) const;

 private:
  std::vector<int> sizes_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

std::vector<double> flatten(const Gradients& g);
Gradients zeros_like(const QNetwork& net);

struct RmsPropParams {
  double learning_rate = 1e-3;
  double decay = 0.99;
  double epsilon = 1e-8;
};

class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(const QNetwork& net, RmsPropParams params);

  // v <- d v + (1 - d) g^2; theta <- theta - lr g / (sqrt(v) + e).
  void step(QNetwork& net, const Gradients& grads);

  const RmsPropParams& params() const { return params_; }
  const Gradients& mean_square() const { return mean_square_; }

 private:
  RmsPropParams params_;
  Gradients mean_square_;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;  // flat parameter index
  std::size_t worst_layer = 0;
  std::string worst_coordinate;  // e.g. "W1[3,7]"
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Denominator floor of the relative error.
  double scale_floor = 1e-6;
};

// Compares an analytic gradient with central differences of `objective`.
// Coordinates where a perturbation flips any ReLU (per `pattern`) are
// skipped.
struct ScalarObjective {
  virtual ~ScalarObjective() = default;
  virtual double value(const QNetwork& net) const = 0;
  virtual std::vector<bool> pattern(const QNetwork& net) const = 0;
};

GradCheckReport check_gradient(const QNetwork& net, std::span<const double> analytic,
                               const ScalarObjective& objective, const GradCheckOptions& opts);

// backward() against central differences of mean_r <dy_r, f(x_r)>.
// `corrupt_index`, when set, flips the sign of that analytic entry.
GradCheckReport grad_check(const QNetwork& net, const Matrix& x, const Matrix& output_gradient,
                           const GradCheckOptions& opts = {},
                           std::optional<std::size_t> corrupt_index = std::nullopt);

std::string describe_parameter(const QNetwork& net, std::size_t flat_index);

// Checkpoint: magic, format version, network count, per network the layer
// sizes and raw float64 parameters (little endian), trailing CRC-32 of all
// preceding bytes. Written atomically through a temporary file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::span<const QNetwork> nets);
std::vector<QNetwork> load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(std::span<const QNetwork> nets);
std::vector<QNetwork> decode_checkpoint(const std::string& bytes);

}  // namespace v2x::neuro

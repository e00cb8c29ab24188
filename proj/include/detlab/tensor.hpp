#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace detlab {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Activations are NCHW; convolution
/// weights are (C_out, C_in / groups, K, K).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute elementwise difference. Shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Multiply-accumulate tally filled by the instrumented reference ops.
struct MacCounter {
  std::uint64_t macs = 0;
};

struct ConvSpec {
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  bool depthwise() const { return groups == c_in && groups == c_out; }
  void validate() const;
  Shape weight_shape() const { return {c_out, c_in / groups, kernel, kernel}; }
  std::size_t out_extent(std::size_t in) const;
  std::uint64_t weight_count() const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Direct zero-padded cross-correlation. Every output element executes the
/// full K*K*(C_in/groups) window, padded taps included, and the counter is
/// advanced once per executed multiply-accumulate. `bias` may be empty.
Tensor conv2d_ref(const Tensor& x, const Tensor& w, std::span<const double> bias,
                  const ConvSpec& spec, MacCounter* counter = nullptr);

enum class Activation { SiLU, ReLU, Identity };

double activate(double v, Activation act);
void apply_activation(Tensor& x, Activation act);

/// Per-channel inference-time batch-norm statistics.
struct BatchNormStats {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> mean;
  std::vector<double> var;
  double eps = 1e-5;

  static BatchNormStats identity(std::size_t channels, double eps = 0.0);
};

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel of NCHW `x`.
Tensor batch_norm_ref(const Tensor& x, const BatchNormStats& bn);

/// Folds inference batch norm into the preceding convolution so that
/// conv(x; w', b') = BN(conv(x; w, b)). An empty `bias` is treated as zero.
std::pair<Tensor, std::vector<double>> bn_fold(const Tensor& w, std::span<const double> bias,
                                               const BatchNormStats& bn);

/// Merges a 3x3 depthwise branch into a 7x7 depthwise kernel by centring the
/// 3x3 taps. Running the fused kernel with padding 3 equals the sum of the
/// 7x7 branch (padding 3) and the 3x3 branch (padding 1), same stride.
Tensor reparam_fuse_lk(const Tensor& dw7, const Tensor& dw3);

/// As above, also summing the branch biases (either may be empty).
std::pair<Tensor, std::vector<double>> reparam_fuse_lk(const Tensor& dw7,
                                                       std::span<const double> b7,
                                                       const Tensor& dw3,
                                                       std::span<const double> b3);

Tensor add(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace detlab

#include "detlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "detlab/error.hpp"

namespace detlab {

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_nchw(const Tensor& x, const char* what) {
  if (x.rank() != 4) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + " must be 4-d, got " + shape_string(x.shape()));
  }
}

void require_channels(std::span<const double> v, std::size_t channels, const char* what) {
  if (v.size() != channels) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " has length " +
                                              std::to_string(v.size()) + ", expected " +
                                              std::to_string(channels));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty() || std::find(shape_.begin(), shape_.end(), 0) != shape_.end()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor dims must be positive, got " + shape_string(shape_));
  }
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || std::find(shape_.begin(), shape_.end(), 0) != shape_.end()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor dims must be positive, got " + shape_string(shape_));
  }
  if (element_count(shape_) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape_) + " needs " +
                                              std::to_string(element_count(shape_)) +
                                              " values, got " + std::to_string(data_.size()));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

void ConvSpec::validate() const {
  if (c_in == 0 || c_out == 0 || kernel == 0 || stride == 0 || groups == 0) {
    throw Error(ErrorCode::ShapeMismatch, "conv dims, stride and groups must be positive");
  }
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw Error(ErrorCode::ShapeMismatch, "channels (" + std::to_string(c_in) + " -> " +
                                              std::to_string(c_out) +
                                              ") not divisible by groups " +
                                              std::to_string(groups));
  }
}

std::size_t ConvSpec::out_extent(std::size_t in) const {
  if (in + 2 * padding < kernel) {
    throw Error(ErrorCode::ShapeMismatch, "input extent " + std::to_string(in) +
                                              " too small for kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

std::uint64_t ConvSpec::weight_count() const {
  return static_cast<std::uint64_t>(c_out) * (c_in / groups) * kernel * kernel;
}

Tensor conv2d_ref(const Tensor& x, const Tensor& w, std::span<const double> bias,
                  const ConvSpec& spec, MacCounter* counter) {
  spec.validate();
  require_nchw(x, "conv input");
  if (x.dim(1) != spec.c_in) {
    throw Error(ErrorCode::ShapeMismatch, "conv input " + shape_string(x.shape()) + " has " +
                                              std::to_string(x.dim(1)) + " channels, spec expects " +
                                              std::to_string(spec.c_in));
  }
  if (w.shape() != spec.weight_shape()) {
    throw Error(ErrorCode::ShapeMismatch, "conv weight " + shape_string(w.shape()) +
                                              " does not match spec " +
                                              shape_string(spec.weight_shape()));
  }
  if (!bias.empty()) require_channels(bias, spec.c_out, "conv bias");

  const std::size_t batch = x.dim(0);
  const std::size_t in_h = x.dim(2);
  const std::size_t in_w = x.dim(3);
  const std::size_t out_h = spec.out_extent(in_h);
  const std::size_t out_w = spec.out_extent(in_w);
  const std::size_t cin_g = spec.c_in / spec.groups;
  const std::size_t cout_g = spec.c_out / spec.groups;
  const std::size_t k = spec.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  Tensor y({batch, spec.c_out, out_h, out_w});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oc = 0; oc < spec.c_out; ++oc) {
      const std::size_t ic0 = (oc / cout_g) * cin_g;
      const double b = bias.empty() ? 0.0 : bias[oc];
      for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
          double acc = b;
          for (std::size_t ic = 0; ic < cin_g; ++ic) {
            for (std::size_t kh = 0; kh < k; ++kh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * spec.stride + kh) - pad;
              const bool row_in = ih >= 0 && ih < static_cast<std::ptrdiff_t>(in_h);
              for (std::size_t kw = 0; kw < k; ++kw) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * spec.stride + kw) - pad;
                const bool in = row_in && iw >= 0 && iw < static_cast<std::ptrdiff_t>(in_w);
                const double v = in ? x(n, ic0 + ic, static_cast<std::size_t>(ih),
                                        static_cast<std::size_t>(iw))
                                    : 0.0;
                acc += v * w(oc, ic, kh, kw);
              }
            }
          }
          y(n, oc, oh, ow) = acc;
        }
      }
    }
  }
  if (counter) counter->macs += static_cast<std::uint64_t>(batch) * spec.c_out * out_h * out_w * cin_g * k * k;
  return y;
}

double activate(double v, Activation act) {
  switch (act) {
    case Activation::SiLU: return v / (1.0 + std::exp(-v));
    case Activation::ReLU: return v > 0.0 ? v : 0.0;
    case Activation::Identity: return v;
  }
  return v;
}

void apply_activation(Tensor& x, Activation act) {
  if (act == Activation::Identity) return;
  for (double& v : x.data()) v = activate(v, act);
}

BatchNormStats BatchNormStats::identity(std::size_t channels, double eps) {
  return {std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0),
          std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), eps};
}

Tensor batch_norm_ref(const Tensor& x, const BatchNormStats& bn) {
  require_nchw(x, "batch-norm input");
  const std::size_t channels = x.dim(1);
  require_channels(bn.gamma, channels, "bn gamma");
  require_channels(bn.beta, channels, "bn beta");
  require_channels(bn.mean, channels, "bn mean");
  require_channels(bn.var, channels, "bn var");
  Tensor y = x;
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double inv = 1.0 / std::sqrt(bn.var[c] + bn.eps);
      for (std::size_t h = 0; h < x.dim(2); ++h) {
        for (std::size_t w = 0; w < x.dim(3); ++w) {
          y(n, c, h, w) = bn.gamma[c] * (x(n, c, h, w) - bn.mean[c]) * inv + bn.beta[c];
        }
      }
    }
  }
  return y;
}

std::pair<Tensor, std::vector<double>> bn_fold(const Tensor& w, std::span<const double> bias,
                                               const BatchNormStats& bn) {
  require_nchw(w, "conv weight");
  const std::size_t c_out = w.dim(0);
  require_channels(bn.gamma, c_out, "bn gamma");
  require_channels(bn.beta, c_out, "bn beta");
  require_channels(bn.mean, c_out, "bn mean");
  require_channels(bn.var, c_out, "bn var");
  if (!bias.empty()) require_channels(bias, c_out, "conv bias");

  Tensor folded = w;
  std::vector<double> folded_bias(c_out);
  const std::size_t per_channel = w.size() / c_out;
  for (std::size_t o = 0; o < c_out; ++o) {
    if (bn.var[o] < 0.0) throw Error(ErrorCode::ShapeMismatch, "bn variance must be non-negative");
    const double scale = bn.gamma[o] / std::sqrt(bn.var[o] + bn.eps);
    for (std::size_t i = 0; i < per_channel; ++i) folded.data()[o * per_channel + i] *= scale;
    const double b = bias.empty() ? 0.0 : bias[o];
    folded_bias[o] = (b - bn.mean[o]) * scale + bn.beta[o];
  }
  return {std::move(folded), std::move(folded_bias)};
}

Tensor reparam_fuse_lk(const Tensor& dw7, const Tensor& dw3) {
  require_nchw(dw7, "7x7 weight");
  require_nchw(dw3, "3x3 weight");
  if (dw7.dim(1) != 1 || dw7.dim(2) != 7 || dw7.dim(3) != 7) {
    throw Error(ErrorCode::ShapeMismatch,
                "large-kernel weight must be (C, 1, 7, 7), got " + shape_string(dw7.shape()));
  }
  if (dw3.shape() != Shape{dw7.dim(0), 1, 3, 3}) {
    throw Error(ErrorCode::ShapeMismatch, "3x3 branch weight " + shape_string(dw3.shape()) +
                                              " does not pair with " + shape_string(dw7.shape()));
  }
  Tensor fused = dw7;
  for (std::size_t c = 0; c < dw7.dim(0); ++c) {
    for (std::size_t kh = 0; kh < 3; ++kh) {
      for (std::size_t kw = 0; kw < 3; ++kw) fused(c, 0, kh + 2, kw + 2) += dw3(c, 0, kh, kw);
    }
  }
  return fused;
}

std::pair<Tensor, std::vector<double>> reparam_fuse_lk(const Tensor& dw7,
                                                       std::span<const double> b7,
                                                       const Tensor& dw3,
                                                       std::span<const double> b3) {
  Tensor fused = reparam_fuse_lk(dw7, dw3);
  const std::size_t channels = dw7.dim(0);
  if (b7.empty() && b3.empty()) return {std::move(fused), {}};
  if (!b7.empty()) require_channels(b7, channels, "7x7 bias");
  if (!b3.empty()) require_channels(b3, channels, "3x3 bias");
  std::vector<double> bias(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    bias[c] = (b7.empty() ? 0.0 : b7[c]) + (b3.empty() ? 0.0 : b3[c]);
  }
  return {std::move(fused), std::move(bias)};
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot add " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require_nchw(x, "slice input");
  if (count == 0 || begin + count > x.dim(1)) {
    throw Error(ErrorCode::ShapeMismatch, "channel slice out of range");
  }
  Tensor out({x.dim(0), count, x.dim(2), x.dim(3)});
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const auto src = x.data().begin() + static_cast<std::ptrdiff_t>((n * x.dim(1) + begin) * plane);
    std::copy(src, src + static_cast<std::ptrdiff_t>(count * plane),
              out.data().begin() + static_cast<std::ptrdiff_t>(n * count * plane));
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_nchw(a, "concat input");
  require_nchw(b, "concat input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot concat " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  const std::size_t plane = a.dim(2) * a.dim(3);
  Tensor out({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  auto dst = out.data().begin();
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    const auto sa = a.data().begin() + static_cast<std::ptrdiff_t>(n * a.dim(1) * plane);
    dst = std::copy(sa, sa + static_cast<std::ptrdiff_t>(a.dim(1) * plane), dst);
    const auto sb = b.data().begin() + static_cast<std::ptrdiff_t>(n * b.dim(1) * plane);
    dst = std::copy(sb, sb + static_cast<std::ptrdiff_t>(b.dim(1) * plane), dst);
  }
  return out;
}

}  // namespace detlab

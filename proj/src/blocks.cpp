#include "detlab/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "detlab/error.hpp"
#include "detlab/random.hpp"

namespace detlab {

namespace {

constexpr std::size_t kExpansion = 2;  // CIB/IRB bottleneck and PSA FFN

ConvSpec pointwise(std::size_t c_in, std::size_t c_out) { return {c_in, c_out, 1, 1, 0, 1}; }

ConvSpec depthwise(std::size_t c, std::size_t k, std::size_t stride = 1) {
  return {c, c, k, stride, k / 2, c};
}

ConvSpec dense(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride = 1) {
  return {c_in, c_out, k, stride, k / 2, 1};
}

std::string attn_name(std::size_t round, const char* part) {
  return "attn" + std::to_string(round) + "." + part;
}

std::string ffn_name(std::size_t round, const char* part) {
  return "ffn" + std::to_string(round) + "." + part;
}

class LayerSet {
 public:
  LayerSet(const BlockSpec& spec, const BlockWeights& weights, MacCounter* counter)
      : weights_(weights), counter_(counter), act_(spec.activation) {
    for (auto& plan : block_layers(spec)) plan_.emplace(plan.name, plan.spec);
  }

  const ConvLayer& layer(const std::string& name) const {
    const auto it = weights_.find(name);
    if (it == weights_.end()) throw Error(ErrorCode::MissingWeight, "block weight '" + name + "' missing");
    const auto planned = plan_.find(name);
    if (planned == plan_.end() || !(planned->second == it->second.spec)) {
      throw Error(ErrorCode::ShapeMismatch, "layer '" + name + "' does not match the block spec");
    }
    return it->second;
  }

  Tensor run(const std::string& name, const Tensor& x, bool activated = true) const {
    return layer(name).forward(x, activated ? act_ : Activation::Identity, counter_);
  }

  MacCounter* counter() const { return counter_; }
  Activation act() const { return act_; }

 private:
  const BlockWeights& weights_;
  MacCounter* counter_;
  Activation act_;
  std::map<std::string, ConvSpec> plan_;
};

Tensor cib_forward(const Tensor& x, const BlockSpec& spec, const LayerSet& layers) {
  Tensor y = layers.run("dw1", x);
  y = layers.run("pw1", y);
  if (spec.kind == BlockKind::LkCib && !spec.reparameterized) {
    Tensor large = layers.run("dw2", y, false);
    Tensor small = layers.run("dw2_3x3", y, false);
    y = add(large, small);
    apply_activation(y, layers.act());
  } else {
    y = layers.run("dw2", y);
  }
  y = layers.run("pw2", y);
  y = layers.run("dw3", y);
  return add(x, y);
}

Tensor psa_forward(const Tensor& x, const BlockSpec& spec, const LayerSet& layers) {
  const std::size_t half = spec.c / 2;
  Tensor y = layers.run("cv1", x);
  const Tensor passthrough = slice_channels(y, 0, half);
  Tensor attended = slice_channels(y, half, half);
  for (std::size_t r = 0; r < spec.n_psa; ++r) {
    attended = add(attended, attention_forward(attended, layers.layer(attn_name(r, "qkv")),
                                               layers.layer(attn_name(r, "proj")),
                                               layers.counter()));
    Tensor hidden = layers.run(ffn_name(r, "up"), attended);
    attended = add(attended, layers.run(ffn_name(r, "down"), hidden, false));
  }
  return layers.run("cv2", concat_channels(passthrough, attended));
}

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::StdDownsample: return "std_downsample";
    case BlockKind::ScdDownsample: return "scd_downsample";
    case BlockKind::ClsHeadStandard: return "cls_head_standard";
    case BlockKind::ClsHeadLight: return "cls_head_light";
    case BlockKind::Cib: return "cib";
    case BlockKind::Irb: return "irb";
    case BlockKind::IrbDw: return "irb_dw";
    case BlockKind::Psa: return "psa";
    case BlockKind::LkCib: return "lk_cib";
    case BlockKind::Pointwise: return "pointwise";
  }
  return "unknown";
}

std::optional<BlockKind> parse_block_kind(std::string_view name) {
  for (const BlockKind kind :
       {BlockKind::StdDownsample, BlockKind::ScdDownsample, BlockKind::ClsHeadStandard,
        BlockKind::ClsHeadLight, BlockKind::Cib, BlockKind::Irb, BlockKind::IrbDw, BlockKind::Psa,
        BlockKind::LkCib, BlockKind::Pointwise}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

void BlockSpec::validate() const {
  if (h == 0 || w == 0 || c == 0) {
    throw Error(ErrorCode::ShapeMismatch, "block dims must be positive");
  }
  switch (kind) {
    case BlockKind::StdDownsample:
    case BlockKind::ScdDownsample:
      if (h % 2 != 0 || w % 2 != 0) {
        throw Error(ErrorCode::ShapeMismatch, std::string(to_string(kind)) +
                                                  " needs even H and W, got " + std::to_string(h) +
                                                  "x" + std::to_string(w));
      }
      break;
    case BlockKind::ClsHeadStandard:
    case BlockKind::ClsHeadLight:
      if (num_classes == 0) throw Error(ErrorCode::ShapeMismatch, "num_classes must be positive");
      if (hidden && *hidden == 0) throw Error(ErrorCode::ShapeMismatch, "head width must be positive");
      break;
    case BlockKind::Psa:
      if (c % 2 != 0) {
        throw Error(ErrorCode::OddChannels,
                    "psa splits channels evenly; C=" + std::to_string(c) + " is odd");
      }
      if (n_psa == 0) throw Error(ErrorCode::ShapeMismatch, "n_psa must be at least 1");
      break;
    case BlockKind::LkCib:
      if (large_kernel < 3 || large_kernel % 2 == 0) {
        throw Error(ErrorCode::ShapeMismatch, "large kernel must be odd and at least 3");
      }
      break;
    case BlockKind::Pointwise:
      if (hidden && *hidden == 0) throw Error(ErrorCode::ShapeMismatch, "output width must be positive");
      break;
    case BlockKind::Cib:
    case BlockKind::Irb:
    case BlockKind::IrbDw:
      break;
  }
}

std::size_t BlockSpec::head_width() const {
  return hidden.value_or(std::max(c, std::min<std::size_t>(num_classes, 100)));
}

Shape BlockSpec::output_shape(std::size_t batch) const {
  switch (kind) {
    case BlockKind::StdDownsample:
    case BlockKind::ScdDownsample:
      return {batch, 2 * c, h / 2, w / 2};
    case BlockKind::ClsHeadStandard:
    case BlockKind::ClsHeadLight:
      return {batch, num_classes, h, w};
    case BlockKind::Pointwise:
      return {batch, hidden.value_or(c), h, w};
    default:
      return {batch, c, h, w};
  }
}

AttentionShape psa_attention_shape(std::size_t channels) {
  AttentionShape shape;
  shape.heads = std::max<std::size_t>(1, channels / 64);
  while (channels % shape.heads != 0) --shape.heads;
  shape.head_dim = channels / shape.heads;
  shape.key_dim = std::max<std::size_t>(1, shape.head_dim / 2);
  return shape;
}

Tensor ConvLayer::forward(const Tensor& x, Activation act, MacCounter* counter) const {
  Tensor y = conv2d_ref(x, weight, bias, spec, counter);
  apply_activation(y, act);
  return y;
}

std::vector<LayerPlan> block_layers(const BlockSpec& spec) {
  spec.validate();
  const std::size_t c = spec.c;
  switch (spec.kind) {
    case BlockKind::StdDownsample:
      return {{"conv", dense(c, 2 * c, 3, 2)}};
    case BlockKind::Pointwise:
      return {{"conv", pointwise(c, spec.hidden.value_or(c))}};
    case BlockKind::ScdDownsample:
      return {{"pw", pointwise(c, 2 * c)}, {"dw", depthwise(2 * c, 3, 2)}};
    case BlockKind::ClsHeadStandard: {
      const std::size_t hw = spec.head_width();
      return {{"conv1", dense(c, hw, 3)},
              {"conv2", dense(hw, hw, 3)},
              {"pred", pointwise(hw, spec.num_classes)}};
    }
    case BlockKind::ClsHeadLight: {
      const std::size_t hw = spec.head_width();
      return {{"dw1", depthwise(c, 3)},
              {"pw1", pointwise(c, hw)},
              {"dw2", depthwise(hw, 3)},
              {"pw2", pointwise(hw, hw)},
              {"pred", pointwise(hw, spec.num_classes)}};
    }
    case BlockKind::Irb:
    case BlockKind::IrbDw: {
      std::vector<LayerPlan> plan{{"expand", pointwise(c, kExpansion * c)},
                                  {"dw", depthwise(kExpansion * c, 3)},
                                  {"project", pointwise(kExpansion * c, c)}};
      if (spec.kind == BlockKind::IrbDw) plan.push_back({"dw_out", depthwise(c, 3)});
      return plan;
    }
    case BlockKind::Cib:
    case BlockKind::LkCib: {
      const std::size_t mid = kExpansion * c;
      const std::size_t k = spec.kind == BlockKind::LkCib ? spec.large_kernel : 3;
      std::vector<LayerPlan> plan{{"dw1", depthwise(c, 3)},
                                  {"pw1", pointwise(c, mid)},
                                  {"dw2", depthwise(mid, k)}};
      if (spec.kind == BlockKind::LkCib && !spec.reparameterized) {
        plan.push_back({"dw2_3x3", depthwise(mid, 3)});
      }
      plan.push_back({"pw2", pointwise(mid, c)});
      plan.push_back({"dw3", depthwise(c, 3)});
      return plan;
    }
    case BlockKind::Psa: {
      const std::size_t half = c / 2;
      const AttentionShape attn = psa_attention_shape(half);
      std::vector<LayerPlan> plan{{"cv1", pointwise(c, c)}};
      for (std::size_t r = 0; r < spec.n_psa; ++r) {
        plan.push_back({attn_name(r, "qkv"), pointwise(half, attn.qkv_channels())});
        plan.push_back({attn_name(r, "proj"), pointwise(half, half)});
        plan.push_back({ffn_name(r, "up"), pointwise(half, kExpansion * half)});
        plan.push_back({ffn_name(r, "down"), pointwise(kExpansion * half, half)});
      }
      plan.push_back({"cv2", pointwise(c, c)});
      return plan;
    }
  }
  return {};
}

BlockWeights make_block_weights(const BlockSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  BlockWeights weights;
  for (const auto& plan : block_layers(spec)) {
    const double fan_in = static_cast<double>(plan.spec.c_in / plan.spec.groups * plan.spec.kernel *
                                              plan.spec.kernel);
    const double bound = 1.0 / std::sqrt(fan_in);
    Tensor w(plan.spec.weight_shape());
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    std::vector<double> bias(plan.spec.c_out);
    for (double& v : bias) v = rng.uniform(-0.1, 0.1);
    weights.emplace(plan.name, ConvLayer{plan.spec, std::move(w), std::move(bias)});
  }
  return weights;
}

Tensor attention_forward(const Tensor& x, const ConvLayer& qkv, const ConvLayer& proj,
                         MacCounter* counter, std::vector<std::vector<double>>* attention_maps) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "attention input must be 4-d");
  const std::size_t channels = x.dim(1);
  const AttentionShape shape = psa_attention_shape(channels);
  if (qkv.spec != pointwise(channels, shape.qkv_channels()) ||
      proj.spec != pointwise(channels, channels)) {
    throw Error(ErrorCode::ShapeMismatch, "attention projections do not match " +
                                              std::to_string(channels) + " channels");
  }

  const Tensor packed = qkv.forward(x, Activation::Identity, counter);
  const std::size_t batch = x.dim(0);
  const std::size_t height = x.dim(2);
  const std::size_t width = x.dim(3);
  const std::size_t positions = height * width;
  const std::size_t stride = 2 * shape.key_dim + shape.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.key_dim));

  auto at = [&](std::size_t n, std::size_t ch, std::size_t pos) {
    return packed(n, ch, pos / width, pos % width);
  };

  Tensor mixed({batch, channels, height, width});
  std::vector<double> attn(positions * positions);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t head = 0; head < shape.heads; ++head) {
      const std::size_t q0 = head * stride;
      const std::size_t k0 = q0 + shape.key_dim;
      const std::size_t v0 = k0 + shape.key_dim;
      for (std::size_t i = 0; i < positions; ++i) {
        double* row = attn.data() + i * positions;
        double row_max = -INFINITY;
        for (std::size_t j = 0; j < positions; ++j) {
          double dot = 0.0;
          for (std::size_t d = 0; d < shape.key_dim; ++d) dot += at(n, q0 + d, i) * at(n, k0 + d, j);
          row[j] = dot * scale;
          row_max = std::max(row_max, row[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < positions; ++j) {
          row[j] = std::exp(row[j] - row_max);
          total += row[j];
        }
        for (std::size_t j = 0; j < positions; ++j) row[j] /= total;
      }
      for (std::size_t d = 0; d < shape.head_dim; ++d) {
        for (std::size_t i = 0; i < positions; ++i) {
          const double* row = attn.data() + i * positions;
          double acc = 0.0;
          for (std::size_t j = 0; j < positions; ++j) acc += at(n, v0 + d, j) * row[j];
          mixed(n, head * shape.head_dim + d, i / width, i % width) = acc;
        }
      }
      if (attention_maps) attention_maps->push_back(attn);
    }
  }
  if (counter) {
    counter->macs += u64(batch) * shape.heads * positions * positions *
                     (shape.key_dim + shape.head_dim);
  }
  return proj.forward(mixed, Activation::Identity, counter);
}

Tensor forward_block(const Tensor& x, const BlockSpec& spec, const BlockWeights& weights,
                     MacCounter* counter) {
  spec.validate();
  if (x.rank() != 4 || x.dim(1) != spec.c || x.dim(2) != spec.h || x.dim(3) != spec.w) {
    throw Error(ErrorCode::ShapeMismatch, "input " + shape_string(x.shape()) +
                                              " does not match block input " +
                                              shape_string(spec.input_shape(x.rank() ? x.dim(0) : 1)));
  }
  const LayerSet layers(spec, weights, counter);
  switch (spec.kind) {
    case BlockKind::StdDownsample:
    case BlockKind::Pointwise:
      return layers.run("conv", x);
    case BlockKind::ScdDownsample:
      return layers.run("dw", layers.run("pw", x), false);
    case BlockKind::ClsHeadStandard: {
      Tensor y = layers.run("conv1", x);
      y = layers.run("conv2", y);
      return layers.run("pred", y, false);
    }
    case BlockKind::ClsHeadLight: {
      Tensor y = layers.run("dw1", x);
      y = layers.run("pw1", y);
      y = layers.run("dw2", y);
      y = layers.run("pw2", y);
      return layers.run("pred", y, false);
    }
    case BlockKind::Irb:
    case BlockKind::IrbDw: {
      Tensor y = layers.run("expand", x);
      y = layers.run("dw", y);
      y = layers.run("project", y, false);
      if (spec.kind == BlockKind::IrbDw) y = layers.run("dw_out", y);
      return add(x, y);
    }
    case BlockKind::Cib:
    case BlockKind::LkCib:
      return cib_forward(x, spec, layers);
    case BlockKind::Psa:
      return psa_forward(x, spec, layers);
  }
  throw Error(ErrorCode::InvariantViolation, "unhandled block kind");
}

std::pair<BlockSpec, BlockWeights> reparameterize_lk_cib(const BlockSpec& spec,
                                                        const BlockWeights& weights) {
  if (spec.kind != BlockKind::LkCib) {
    throw Error(ErrorCode::ShapeMismatch, "only lk_cib blocks carry a parallel branch");
  }
  if (spec.reparameterized) return {spec, weights};
  if (spec.large_kernel != 7) {
    throw Error(ErrorCode::ShapeMismatch, "branch fusion is defined for 7x7 kernels");
  }
  const auto large = weights.find("dw2");
  const auto small = weights.find("dw2_3x3");
  if (large == weights.end() || small == weights.end()) {
    throw Error(ErrorCode::MissingWeight, "lk_cib needs both 'dw2' and 'dw2_3x3'");
  }
  auto [fused, bias] = reparam_fuse_lk(large->second.weight, large->second.bias,
                                       small->second.weight, small->second.bias);
  BlockSpec out_spec = spec;
  out_spec.reparameterized = true;
  BlockWeights out = weights;
  out.erase("dw2_3x3");
  out["dw2"] = ConvLayer{large->second.spec, std::move(fused), std::move(bias)};
  return {out_spec, std::move(out)};
}

CostReport count_cost(const BlockSpec& spec) {
  CostReport report;
  std::size_t h = spec.h;
  std::size_t w = spec.w;
  for (const auto& layer : block_layers(spec)) {
    // Only the downsample kinds change resolution and they do it in their
    // final layer, so every layer reads the block input resolution.
    const std::uint64_t out_h = layer.spec.out_extent(h);
    const std::uint64_t out_w = layer.spec.out_extent(w);
    const std::uint64_t window = u64(layer.spec.c_in / layer.spec.groups) * layer.spec.kernel *
                                 layer.spec.kernel;
    report.macs += out_h * out_w * layer.spec.c_out * window;
    report.params += layer.spec.weight_count();
    if (layer.spec.stride != 1) {
      h = static_cast<std::size_t>(out_h);
      w = static_cast<std::size_t>(out_w);
    }
  }
  if (spec.kind == BlockKind::Psa) {
    const AttentionShape attn = psa_attention_shape(spec.c / 2);
    const std::uint64_t positions = u64(spec.h) * spec.w;
    report.macs += u64(spec.n_psa) * attn.heads * positions * positions *
                   (attn.key_dim + attn.head_dim);
  }

  const std::uint64_t hh = spec.h;
  const std::uint64_t ww = spec.w;
  const std::uint64_t cc = spec.c;
  if (spec.kind == BlockKind::StdDownsample) {
    report.formula_macs = 9 * hh * ww * cc * cc / 2;
    report.formula_params = 18 * cc * cc;
  } else if (spec.kind == BlockKind::ScdDownsample) {
    report.formula_macs = 2 * hh * ww * cc * cc + 9 * hh * ww * cc / 2;
    report.formula_params = 2 * cc * cc + 18 * cc;
  }
  return report;
}

}  // namespace detlab

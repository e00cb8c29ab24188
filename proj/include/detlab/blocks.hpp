#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detlab/tensor.hpp"

namespace detlab {

enum class BlockKind {
  StdDownsample,
  ScdDownsample,
  ClsHeadStandard,
  ClsHeadLight,
  Cib,
  Irb,
  IrbDw,
  Psa,
  LkCib,
  Pointwise,
};

std::string_view to_string(BlockKind kind);
std::optional<BlockKind> parse_block_kind(std::string_view name);

/// Symbolic description of one building block at a given input resolution.
///
/// Layouts (every conv carries a folded-BN bias; "act" is `activation`):
///  - std_downsample: 3x3/s2 conv C -> 2C, act.
///  - scd_downsample: 1x1 conv C -> 2C, act; 3x3/s2 depthwise on 2C.
///  - cls_head_standard: 3x3 C -> h, act; 3x3 h -> h, act; 1x1 h -> classes.
///  - cls_head_light: [3x3 dw on C, act; 1x1 C -> h, act]; [3x3 dw on h, act;
///    1x1 h -> h, act]; 1x1 h -> classes.
///  - irb: 1x1 C -> 2C, act; 3x3 dw, act; 1x1 2C -> C; residual.
///  - irb_dw: irb body followed by 3x3 dw on C, act; residual.
///  - cib: 3x3 dw on C; 1x1 C -> 2C; 3x3 dw on 2C; 1x1 2C -> C; 3x3 dw on C;
///    each followed by act; residual.
///  - lk_cib: cib with the middle depthwise widened to `large_kernel`. When not
///    reparameterized a parallel 3x3 depthwise branch is summed before act.
///  - pointwise: 1x1 conv C -> hidden (default C), act.
///  - psa: 1x1 C -> C, act; split into halves; the second half runs n_psa
///    rounds of x += attn(x); x += ffn(x); concat; 1x1 C -> C, act.
struct BlockSpec {
  BlockKind kind = BlockKind::Cib;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;
  std::size_t num_classes = 80;
  /// Head width; defaults to max(C, min(num_classes, 100)).
  std::optional<std::size_t> hidden;
  std::size_t n_psa = 1;
  std::size_t large_kernel = 7;
  bool reparameterized = true;
  Activation activation = Activation::SiLU;

  void validate() const;
  std::size_t head_width() const;
  Shape input_shape(std::size_t batch = 1) const { return {batch, c, h, w}; }
  Shape output_shape(std::size_t batch = 1) const;
};

/// Sizing of the multi-head attention inside PSA for an attended half of
/// `channels` channels: heads = max(1, channels / 64) (reduced until it
/// divides `channels`), value width per head = channels / heads, query/key
/// width per head = max(1, value width / 2).
struct AttentionShape {
  std::size_t heads = 1;
  std::size_t key_dim = 1;
  std::size_t head_dim = 1;

  std::size_t qkv_channels() const { return heads * (2 * key_dim + head_dim); }
};

AttentionShape psa_attention_shape(std::size_t channels);

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;
  std::vector<double> bias;

  Tensor forward(const Tensor& x, Activation act, MacCounter* counter = nullptr) const;
};

using BlockWeights = std::map<std::string, ConvLayer>;

struct LayerPlan {
  std::string name;
  ConvSpec spec;
};

/// Convolutions of a block in execution order, with their names in
/// BlockWeights.
std::vector<LayerPlan> block_layers(const BlockSpec& spec);

/// Random weights (uniform, fan-in scaled) and biases for every layer.
BlockWeights make_block_weights(const BlockSpec& spec, std::uint64_t seed);

Tensor forward_block(const Tensor& x, const BlockSpec& spec, const BlockWeights& weights,
                     MacCounter* counter = nullptr);

/// One multi-head self-attention layer over an NCHW tensor, positions
/// flattened to H*W. Optionally returns the softmax maps, one per
/// (batch, head), each N x N row-major.
Tensor attention_forward(const Tensor& x, const ConvLayer& qkv, const ConvLayer& proj,
                         MacCounter* counter = nullptr,
                         std::vector<std::vector<double>>* attention_maps = nullptr);

/// Folds the parallel 3x3 branch of an lk_cib block into its large kernel,
/// returning the inference-form spec and weights.
std::pair<BlockSpec, BlockWeights> reparameterize_lk_cib(const BlockSpec& spec,
                                                        const BlockWeights& weights);

/// Exact counts. MACs count multiply-accumulates of every convolution
/// (padded taps included) and the two attention matmuls; biases,
/// activations, softmax and residual adds are excluded. Parameters count
/// convolution weights only. FLOPs, when wanted, are 2 * macs.
struct CostReport {
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  std::optional<std::uint64_t> formula_macs;
  std::optional<std::uint64_t> formula_params;
};

/// Counts from the layer plan. Downsample kinds also carry the closed forms
/// 9/2*HWC^2 and 18C^2 (standard) or 2HWC^2 + 9/2*HWC and 2C^2 + 18C
/// (decoupled).
CostReport count_cost(const BlockSpec& spec);

}  // namespace detlab

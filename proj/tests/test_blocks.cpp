#include <doctest.h>

#include <numeric>

#include "detlab/blocks.hpp"
#include "detlab/error.hpp"
#include "detlab/random.hpp"

using namespace detlab;

namespace {

Tensor random_input(const BlockSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(spec.input_shape());
  for (double& v : x.data()) v = rng.uniform(-1, 1);
  return x;
}

BlockSpec spec(BlockKind kind, std::size_t h, std::size_t w, std::size_t c) {
  BlockSpec s;
  s.kind = kind;
  s.h = h;
  s.w = w;
  s.c = c;
  return s;
}

constexpr BlockKind kAllKinds[] = {BlockKind::StdDownsample, BlockKind::ScdDownsample, BlockKind::ClsHeadStandard,
                                   BlockKind::ClsHeadLight,  BlockKind::Cib,           BlockKind::Irb,
                                   BlockKind::IrbDw,         BlockKind::Psa,           BlockKind::LkCib,
                                   BlockKind::Pointwise};

}  // namespace

TEST_CASE("kind names round-trip") {
  for (const auto k : kAllKinds) CHECK(parse_block_kind(to_string(k)) == k);
  CHECK_FALSE(parse_block_kind("bogus").has_value());
}

TEST_CASE("output shapes") {
  const BlockSpec psa = spec(BlockKind::Psa, 8, 8, 64);
  CHECK(forward_block(random_input(psa, 1), psa, make_block_weights(psa, 2)).shape() == Shape{1, 64, 8, 8});
  const BlockSpec scd = spec(BlockKind::ScdDownsample, 64, 64, 32);
  CHECK(forward_block(random_input(scd, 1), scd, make_block_weights(scd, 2)).shape() == Shape{1, 64, 32, 32});
}

TEST_CASE("every kind's forward agrees with its declared shape and cost") {
  for (const auto kind : kAllKinds) {
    for (const auto [h, w, c] : {std::tuple{4, 6, 8}, std::tuple{2, 2, 2}, std::tuple{6, 4, 16}}) {
      BlockSpec s = spec(kind, h, w, c);
      s.num_classes = 5;
      for (const bool reparam : {true, false}) {
        s.reparameterized = reparam;
        MacCounter counter;
        const Tensor y = forward_block(random_input(s, 3), s, make_block_weights(s, 4), &counter);
        CHECK(y.shape() == s.output_shape());
        CHECK(y.all_finite());
        CHECK(counter.macs == count_cost(s).macs);
      }
    }
  }
}

TEST_CASE("downsample cost worked examples") {
  const CostReport std_ds = count_cost(spec(BlockKind::StdDownsample, 64, 64, 32));
  CHECK(std_ds.macs == 18874368);
  CHECK(std_ds.params == 18432);
  CHECK(std_ds.formula_macs == 18874368u);
  CHECK(std_ds.formula_params == 18432u);
  const CostReport scd = count_cost(spec(BlockKind::ScdDownsample, 64, 64, 32));
  CHECK(scd.macs == 8978432);
  CHECK(scd.params == 2624);
  CHECK(scd.formula_macs == 8978432u);
  CHECK(scd.formula_params == 2624u);
  CHECK_FALSE(count_cost(spec(BlockKind::Cib, 8, 8, 8)).formula_macs.has_value());
}

TEST_CASE("single-pixel pointwise cost") {
  BlockSpec s = spec(BlockKind::Pointwise, 1, 1, 12);
  s.hidden = 7;
  const CostReport r = count_cost(s);
  CHECK(r.macs == 12 * 7);
  CHECK(r.params == 12 * 7);
  MacCounter counter;
  forward_block(random_input(s, 1), s, make_block_weights(s, 1), &counter);
  CHECK(counter.macs == 12 * 7);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(spec(BlockKind::StdDownsample, 7, 8, 4).validate(), Error);
  try {
    spec(BlockKind::Psa, 4, 4, 7).validate();
    FAIL("expected OddChannels");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OddChannels);
  }
  BlockSpec lk = spec(BlockKind::LkCib, 4, 4, 4);
  lk.large_kernel = 6;
  CHECK_THROWS_AS(lk.validate(), Error);
  CHECK_THROWS_AS(spec(BlockKind::Cib, 0, 4, 4).validate(), Error);
}

TEST_CASE("forward rejects missing or mismatched weights") {
  const BlockSpec s = spec(BlockKind::Cib, 4, 4, 4);
  BlockWeights w = make_block_weights(s, 1);
  w.erase("pw1");
  try {
    forward_block(random_input(s, 1), s, w);
    FAIL("expected MissingWeight");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingWeight);
  }
  CHECK_THROWS_AS(forward_block(Tensor({1, 5, 4, 4}), s, make_block_weights(s, 1)), Error);
}

TEST_CASE("lk_cib reparameterization preserves the block function") {
  Rng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    BlockSpec s = spec(BlockKind::LkCib, 1 + rng.index(12), 1 + rng.index(12), 1 + rng.index(8));
    s.reparameterized = false;
    const BlockWeights w = make_block_weights(s, trial);
    const Tensor x = random_input(s, trial + 100);
    const auto [fused_spec, fused_w] = reparameterize_lk_cib(s, w);
    CHECK(fused_spec.reparameterized);
    CHECK_FALSE(fused_w.count("dw2_3x3"));
    CHECK(max_abs_diff(forward_block(x, s, w), forward_block(x, fused_spec, fused_w)) < 1e-9);
    CHECK(count_cost(fused_spec).macs < count_cost(s).macs);
  }
}

TEST_CASE("psa attention sizing") {
  const AttentionShape a = psa_attention_shape(32);
  CHECK(a.heads == 1);
  CHECK(a.head_dim == 32);
  CHECK(a.key_dim == 16);
  const AttentionShape b = psa_attention_shape(256);
  CHECK(b.heads == 4);
  CHECK(b.head_dim == 64);
  CHECK(psa_attention_shape(192).heads == 3);
  CHECK(psa_attention_shape(3).key_dim == 1);
}

TEST_CASE("zero queries and keys give uniform attention over values") {
  const std::size_t ch = 8, h = 3, w = 4;
  const AttentionShape shape = psa_attention_shape(ch);
  Rng rng(12);
  Tensor x({1, ch, h, w});
  for (double& v : x.data()) v = rng.uniform(-1, 1);

  // q and k rows zero; v rows pick input channels one to one
  ConvLayer qkv{{ch, shape.qkv_channels(), 1, 1, 0, 1}, Tensor({shape.qkv_channels(), ch, 1, 1}), {}};
  const std::size_t stride = 2 * shape.key_dim + shape.head_dim;
  for (std::size_t head = 0; head < shape.heads; ++head)
    for (std::size_t d = 0; d < shape.head_dim; ++d)
      qkv.weight(head * stride + 2 * shape.key_dim + d, head * shape.head_dim + d, 0, 0) = 1.0;
  ConvLayer proj{{ch, ch, 1, 1, 0, 1}, Tensor({ch, ch, 1, 1}), {}};
  for (std::size_t c = 0; c < ch; ++c) proj.weight(c, c, 0, 0) = 1.0;

  std::vector<std::vector<double>> maps;
  const Tensor y = attention_forward(x, qkv, proj, nullptr, &maps);
  for (std::size_t c = 0; c < ch; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) mean += x(0, c, i, j);
    mean /= static_cast<double>(h * w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) CHECK(y(0, c, i, j) == doctest::Approx(mean).epsilon(1e-12));
  }
  for (const auto& m : maps)
    for (const double p : m) CHECK(p == doctest::Approx(1.0 / (h * w)).epsilon(1e-15));
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(13);
  for (const std::size_t ch : {4, 16, 130}) {
    const BlockSpec s = spec(BlockKind::Psa, 3, 5, 2 * ch);
    const BlockWeights w = make_block_weights(s, ch);
    Tensor x({2, ch, 3, 5});
    for (double& v : x.data()) v = rng.uniform(-4, 4);
    std::vector<std::vector<double>> maps;
    const Tensor y = attention_forward(x, w.at("attn0.qkv"), w.at("attn0.proj"), nullptr, &maps);
    CHECK(y.all_finite());
    CHECK(maps.size() == 2 * psa_attention_shape(ch).heads);
    for (const auto& m : maps) {
      for (std::size_t i = 0; i < 15; ++i) {
        const double total = std::accumulate(m.begin() + i * 15, m.begin() + (i + 1) * 15, 0.0);
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("standard classification head costs over twice the lightweight one") {
  BlockSpec standard = spec(BlockKind::ClsHeadStandard, 20, 20, 128);
  BlockSpec light = spec(BlockKind::ClsHeadLight, 20, 20, 128);
  const auto ps = count_cost(standard).params, pl = count_cost(light).params;
  CHECK(static_cast<double>(ps) / static_cast<double>(pl) > 2.0);
  CHECK(count_cost(standard).macs > 2 * count_cost(light).macs);
}

TEST_CASE("forwards are deterministic") {
  const BlockSpec s = spec(BlockKind::Psa, 4, 4, 16);
  const Tensor x = random_input(s, 5);
  CHECK(forward_block(x, s, make_block_weights(s, 6)) == forward_block(x, s, make_block_weights(s, 6)));
}

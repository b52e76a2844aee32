#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "topobda/decoder.hpp"
#include "topobda/scene.hpp"

using namespace topobda;

namespace {

FeatureGrid random_grid(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t c) {
  Rng rng = make_rng(seed, 99);
  std::vector<double> data(h * w * c);
  for (double& v : data) v = normal(rng, 0, 1);
  return FeatureGrid(h, w, c, data);
}

DecoderConfig small_config(std::size_t layers = 3, std::size_t R = 0) {
  DecoderConfig cfg = DecoderConfig::desk();
  cfg.n_layers = layers;
  cfg.one_to_many_R = R;
  cfg.seed = 5;
  return cfg;
}

void expect_shapes(const QueryState& s, const DecoderConfig& cfg, const FeatureGrid& g) {
  const std::size_t Q = cfg.total_queries();
  EXPECT_EQ(s.n_queries, Q);
  EXPECT_EQ(s.embeddings.size(), Q * cfg.d_model);
  EXPECT_EQ(s.ctrl_norm.size(), Q * cfg.n_ctrl() * 3);
  EXPECT_EQ(s.pre_mask.size(), Q * g.height() * g.width());
  EXPECT_EQ(s.class_logits.size(), Q * cfg.n_classes);
  EXPECT_EQ(s.mask_embedding.size(), Q * g.channels());
  for (double c : s.ctrl_norm) {
    EXPECT_GT(c, 0.0);
    EXPECT_LT(c, 1.0);
  }
}

}  // namespace

TEST(Config, Validation) {
  DecoderConfig cfg = DecoderConfig::desk();
  EXPECT_NO_THROW(cfg.validate());
  cfg.d_model = 30;  // not divisible by 4 control points
  EXPECT_THROW(cfg.validate(), ShapeError);
  EXPECT_NO_THROW(DecoderConfig::paper_scale().validate());
}

TEST(InitLayer, ZeroHeadsGiveHalf) {
  const FeatureGrid g = random_grid(1, 8, 8, 6);
  DecoderParams p = DecoderParams::random(small_config(), 6);
  p.heads[0].ctrl = Mlp2::zeros(32, 32, 12);
  p.heads[0].mask = Mlp2::zeros(32, 32, 6);
  const QueryState s = init_layer(p, g);
  for (double c : s.ctrl_norm) EXPECT_EQ(c, 0.5);
  for (double m : s.pre_mask) EXPECT_EQ(m, 0.0);
  for (double v : s.mask_probability(0)) EXPECT_EQ(v, 0.5);
}

TEST(InitLayer, RandomControlPointsInsideUnitInterval) {
  const FeatureGrid g = random_grid(2, 8, 8, 6);
  const DecoderConfig cfg = small_config();
  const QueryState s = init_layer(DecoderParams::random(cfg, 6), g);
  expect_shapes(s, cfg, g);
}

TEST(InitLayer, NonFiniteHeadOutputRaisesWithLayerIndex) {
  const FeatureGrid g = random_grid(3, 8, 8, 6);
  DecoderParams p = DecoderParams::random(small_config(), 6);
  p.heads[0].cls.output.bias[0] = std::numeric_limits<double>::infinity();
  try {
    init_layer(p, g);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 0u);
  }
}

TEST(PositionalEmbedding, DeterministicAndZeroPattern) {
  const std::vector<double> zeros(2 * 4 * 2, 0.0);
  const auto enc = sine_encoding(zeros, 16);
  for (std::size_t i = 0; i < enc.size(); ++i) EXPECT_EQ(enc[i], i % 2 == 0 ? 0.0 : 1.0);

  Rng rng = make_rng(4);
  const Linear proj = Linear::random(4 * 2 * 16, 32, rng);
  std::vector<double> refs(2 * 4 * 2);
  for (std::size_t i = 0; i < 8; ++i) refs[i] = refs[i + 8] = uniform(rng, 0, 1);
  const Matrix pe = positional_embedding(refs, 2, 4, 16, proj);
  for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(pe(0, c), pe(1, c));
}

TEST(Refinement, InverseSigmoidRoundTrip) {
  for (int i = 1; i < 1000; ++i) {
    const double c = static_cast<double>(i) / 1000.0;
    EXPECT_NEAR(sigmoid(inverse_sigmoid(c)), c, 1e-9);
    EXPECT_NEAR(refine_coordinate(c, 0.0), c, 1e-12);
  }
}

TEST(DecoderLayer, ZeroRefinementKeepsControlPoints) {
  const FeatureGrid g = random_grid(5, 8, 8, 6);
  DecoderParams p = DecoderParams::random(small_config(2), 6);
  p.heads[1].ctrl = Mlp2::zeros(32, 32, 12);
  p.heads[1].mask = Mlp2::zeros(32, 32, 6);
  const QueryState s0 = init_layer(p, g);
  const QueryState s1 = decoder_layer(s0, g, p, 1);
  for (std::size_t i = 0; i < s0.ctrl_norm.size(); ++i) EXPECT_NEAR(s1.ctrl_norm[i], s0.ctrl_norm[i], 1e-12);
  EXPECT_EQ(s1.pre_mask, s0.pre_mask);
}

TEST(DecoderLayer, BadLayerIndexThrows) {
  const FeatureGrid g = random_grid(6, 8, 8, 6);
  const DecoderParams p = DecoderParams::random(small_config(2), 6);
  const QueryState s0 = init_layer(p, g);
  EXPECT_THROW(decoder_layer(s0, g, p, 0), ShapeError);
  EXPECT_THROW(decoder_layer(s0, g, p, 3), ShapeError);
}

TEST(OneToManyMask, Blocks) {
  const Matrix m0 = one_to_many_mask(3, 0);
  ASSERT_EQ(m0.rows(), 3u);
  for (double v : m0.data()) EXPECT_EQ(v, 0.0);

  const Matrix m = one_to_many_mask(2, 1);
  ASSERT_EQ(m.rows(), 4u);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m(i, j), ((i < 2) != (j < 2)) ? -inf : 0.0);
}

TEST(RunDecoder, OneLayerIsComposition) {
  const FeatureGrid g = random_grid(7, 8, 8, 6);
  const DecoderParams p = DecoderParams::random(small_config(1), 6);
  const auto states = run_decoder(p, g);
  ASSERT_EQ(states.size(), 2u);
  const QueryState manual = decoder_layer(init_layer(p, g), g, p, 1);
  EXPECT_EQ(states[1].embeddings, manual.embeddings);
  EXPECT_EQ(states[1].ctrl_norm, manual.ctrl_norm);
  EXPECT_EQ(states[1].pre_mask, manual.pre_mask);
}

TEST(RunDecoder, Deterministic) {
  const FeatureGrid g = random_grid(8, 8, 8, 6);
  const DecoderConfig cfg = small_config(2, 1);
  const auto a = run_decoder(DecoderParams::random(cfg, 6), g);
  const auto b = run_decoder(DecoderParams::random(cfg, 6), g);
  for (std::size_t l = 0; l < a.size(); ++l) {
    EXPECT_EQ(a[l].embeddings, b[l].embeddings);
    EXPECT_EQ(a[l].ctrl_norm, b[l].ctrl_norm);
    EXPECT_EQ(a[l].pre_mask, b[l].pre_mask);
    EXPECT_EQ(a[l].class_logits, b[l].class_logits);
  }
}

TEST(RunDecoder, DeskShapes) {
  const FeatureGrid g = random_grid(9, 16, 16, 32);
  const DecoderConfig cfg = small_config(3, 2);
  const auto states = run_decoder(DecoderParams::random(cfg, 32), g);
  ASSERT_EQ(states.size(), 4u);
  for (const QueryState& s : states) expect_shapes(s, cfg, g);
}

TEST(RunDecoder, PreMaskTelescopes) {
  const FeatureGrid g = random_grid(10, 12, 10, 8);
  const auto states = run_decoder(DecoderParams::random(small_config(3, 1), 8), g);
  std::vector<double> sum(states[0].pre_mask.size(), 0.0);
  for (const QueryState& s : states) {
    const auto c = mask_contribution(g, s.mask_embedding, s.n_queries);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += c[i];
    for (std::size_t i = 0; i < sum.size(); ++i) ASSERT_NEAR(s.pre_mask[i], sum[i], 1e-12);
  }
}

TEST(RunDecoder, OneToOneSliceUnaffectedByAuxiliaryQueries) {
  const FeatureGrid g = random_grid(11, 10, 10, 8);
  const DecoderConfig base = small_config(3, 0);
  DecoderConfig aux = base;
  aux.one_to_many_R = 3;
  const auto a = run_decoder(DecoderParams::random(base, 8), g);
  const auto b = run_decoder(DecoderParams::random(aux, 8), g);
  const std::size_t Q = base.n_queries, d = base.d_model, cells = 100;
  for (std::size_t l = 0; l < a.size(); ++l) {
    EXPECT_TRUE(std::equal(a[l].embeddings.begin(), a[l].embeddings.end(), b[l].embeddings.begin()));
    EXPECT_TRUE(std::equal(a[l].ctrl_norm.begin(), a[l].ctrl_norm.end(), b[l].ctrl_norm.begin()));
    EXPECT_TRUE(std::equal(a[l].pre_mask.begin(), a[l].pre_mask.end(), b[l].pre_mask.begin()));
    EXPECT_TRUE(std::equal(a[l].class_logits.begin(), a[l].class_logits.end(), b[l].class_logits.begin()));
    EXPECT_EQ(a[l].embeddings.size(), Q * d);
    EXPECT_EQ(b[l].pre_mask.size(), 4 * Q * cells);
  }
}

TEST(RunDecoder, TruncationEquivalence) {
  const FeatureGrid g = random_grid(12, 8, 8, 6);
  const auto two = run_decoder(DecoderParams::random(small_config(2), 6), g);
  const auto three = run_decoder(DecoderParams::random(small_config(3), 6), g);
  for (std::size_t l = 0; l < two.size(); ++l) EXPECT_EQ(two[l].embeddings, three[l].embeddings);
}

TEST(RunDecoder, PaperScaleShapes) {
  DecoderConfig cfg = DecoderConfig::paper_scale();
  cfg.n_layers = 1;
  const GridSpec spec = GridSpec::paper_scale();
  const FeatureGrid g = random_grid(13, spec.height, spec.width, 16);
  const auto states = run_decoder(DecoderParams::random(cfg, 16), g);
  ASSERT_EQ(states.size(), 2u);
  for (const QueryState& s : states) expect_shapes(s, cfg, g);
}

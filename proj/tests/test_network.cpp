#include "oracles.hpp"
#include "test_util.hpp"

using namespace simkd;
using testutil::rand_tensor;

namespace {

NetworkSpec linear_net(std::size_t d, bool bias) {
  NetworkSpec s;
  s.input = {d};
  s.encoder = {Dense{d, d, bias}, Dense{d, d, bias}};
  s.classifier = Dense{d, d, true};
  return s;
}

}  // namespace

TEST(Build, SameSeedSameModel) {
  const NetworkSpec spec = desk_cnn(2, 3, {2, 4, 4});
  const Model a = build(spec, Rng(5)), b = build(spec, Rng(5));
  EXPECT_TRUE(testutil::bitwise_equal(a.params, b.params));
  EXPECT_TRUE(testutil::bitwise_equal(a.buffers, b.buffers));
}

TEST(Build, RejectsInconsistentSpecs) {
  NetworkSpec s;
  s.input = {3};
  s.encoder = {Dense{3, 4, true}, Dense{5, 2, true}};
  s.classifier = Dense{2, 2, true};
  EXPECT_THROW(build(s, Rng(0)), ConfigError);
  NetworkSpec bad = linear_net(3, true);
  bad.classifier = Dense{4, 2, true};
  EXPECT_THROW(build(bad, Rng(0)), ConfigError);
  NetworkSpec blocks = linear_net(3, true);
  blocks.block_ends = {1};
  EXPECT_THROW(build(blocks, Rng(0)), ConfigError);
  blocks.block_ends = {2, 1};
  EXPECT_THROW(build(blocks, Rng(0)), ConfigError);
}

TEST(Forward, IdentityWeightsPassInputThrough) {
  Model m = build(linear_net(4, true), Rng(1));
  for (const char* w : {"enc.0.weight", "enc.1.weight", "cls.0.weight"}) m.params.set(w, Tensor::identity(4));
  Rng rng(2);
  const Tensor x = rand_tensor({3, 4}, rng);
  EXPECT_EQ(forward(m, x).logits, x);
}

TEST(Forward, ZeroInputBiasFreeGivesZeroLogits) {
  NetworkSpec s = linear_net(4, false);
  Model m = build(s, Rng(1));
  m.params.set("cls.0.bias", Tensor({4}));
  EXPECT_EQ(forward(m, Tensor({2, 4})).logits, Tensor({2, 4}));
}

TEST(Forward, LogitsAreClassifierOfFeatures) {
  Model m = build(desk_cnn(2, 5, {3, 4, 4}), Rng(3));
  m.params.set("cls.0.bias", Tensor::vector({0.1, -0.2, 0.3, 0.0, 0.5}));
  Rng rng(4);
  const auto r = forward(m, rand_tensor({6, 3, 4, 4}, rng));
  ASSERT_EQ(r.features.shape(), (Shape{6, 8}));
  const auto want = oracle::matmul(r.features.values(), transpose(m.params.at("cls.0.weight")).values(), 6, 8, 5);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_NEAR(r.logits[i * 5 + j], want[i * 5 + j] + m.params.at("cls.0.bias")[j], 1e-12);
}

TEST(Forward, WrongBatchShapeIsDimensionError) {
  Model m = build(desk_cnn(2, 5, {3, 4, 4}), Rng(3));
  EXPECT_THROW(forward(m, Tensor({2, 3, 4, 5})), DimensionError);
}

TEST(Backward, ExactlyOneSource) {
  Model m = build(linear_net(3, true), Rng(1));
  const auto r = forward(m, Tensor({2, 3}, 1.0));
  EXPECT_THROW(backward(m, r.cache, GradSource{}), UsageError);
  EXPECT_THROW(backward(m, r.cache, GradSource{Tensor({2, 3}), Tensor({2, 3})}), UsageError);
  const auto at_features = backward(m, r.cache, GradSource::at_features(Tensor({2, 3}, 1.0)));
  EXPECT_FALSE(at_features.count("cls.0.weight"));
  EXPECT_TRUE(at_features.count("enc.0.weight"));
}

TEST(Backward, SmallCnnMatchesFiniteDifferences) {
  const auto res = detail::run_network_suite(20, Rng(31));
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(ParamCount, EncoderClassifierPartition) {
  for (std::size_t w : {1, 2, 4, 16}) {
    const NetworkSpec s = desk_cnn(w, 10, {3, 8, 8});
    const Model m = build(s, Rng(0));
    EXPECT_EQ(param_count(s.encoder) + param_count(LayerSpec{s.classifier}), param_count(s));
    EXPECT_EQ(m.params.element_count(), param_count(s));
  }
  EXPECT_EQ(param_count(desk_cnn(16, 10, {3, 8, 8})), 3u * 16 * 9 + 32 + 16 * 32 * 9 + 64 + 32 * 64 * 9 + 128 + 650);
}

TEST(SplitReuse, ClassifierOnly) {
  const Model t = build(desk_cnn(4, 3, {2, 8, 8}), Rng(1));
  const auto split = split_reuse(t, desk_cnn(2, 3, {2, 8, 8}), 0);
  EXPECT_TRUE(split.tail.layers.layers.empty());
  EXPECT_EQ(param_count(split.tail), param_count(LayerSpec{t.spec.classifier}));
  EXPECT_TRUE(testutil::bitwise_equal(split.tail.params.at("cls.0.weight"), t.params.at("cls.0.weight")));
}

TEST(SplitReuse, AllBlocksReproducesTeacher) {
  const NetworkSpec spec = desk_cnn(4, 3, {2, 8, 8});
  Model t = build(spec, Rng(1));
  Rng rng(2);
  forward(t, rand_tensor({8, 2, 8, 8}, rng));  // non-trivial running stats
  t.mode = Mode::Eval;
  const auto split = split_reuse(t, spec, 3);
  EXPECT_TRUE(split.student.layers.empty());
  const Tensor x = rand_tensor({4, 2, 8, 8}, rng);
  EXPECT_TRUE(testutil::bitwise_equal(split.tail.logits(x), predict(t, x).second));
}

TEST(SplitReuse, PartitionOfTeacherParameters) {
  const NetworkSpec spec = desk_cnn(4, 3, {2, 8, 8});
  const Model t = build(spec, Rng(1));
  for (std::size_t k = 0; k <= 3; ++k) {
    const auto split = split_reuse(t, spec, k);
    const std::vector<LayerSpec> prefix(spec.encoder.begin(),
                                        spec.encoder.begin() + static_cast<long>(split.tail.teacher_cut));
    EXPECT_EQ(param_count(split.tail) + param_count(prefix), param_count(spec)) << k;
  }
}

TEST(SplitReuse, OutOfRangeIsConfigError) {
  const Model t = build(desk_cnn(4, 3, {2, 8, 8}), Rng(1));
  EXPECT_THROW(split_reuse(t, desk_cnn(2, 3, {2, 8, 8}), 4), ConfigError);
  EXPECT_THROW(split_reuse(t, desk_cnn(2, 4, {2, 8, 8}), 0), ConfigError);
}

TEST(Zoo, DeskCnnShape) {
  const NetworkSpec s = desk_cnn(16, 10, {3, 8, 8});
  EXPECT_EQ(s.feature_dim(), 64u);
  EXPECT_EQ(s.block_ends.size(), 3u);
  EXPECT_EQ(s.block_ends.back(), s.encoder.size());
  const NetworkSpec m = mlp(12, {8, 6}, 4);
  EXPECT_EQ(param_count(m), 12u * 8 + 8 + 8 * 6 + 6 + 6 * 4 + 4);
}

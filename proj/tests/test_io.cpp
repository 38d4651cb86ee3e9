#include "oracles.hpp"
#include "test_util.hpp"

using namespace simkd;
using testutil::rand_tensor;

namespace {

SyntheticOptions small_gen(double difficulty, std::uint64_t seed) {
  SyntheticOptions o;
  o.num_classes = 5;
  o.per_class = 40;
  o.test_per_class = 20;
  o.height = 4;
  o.width = 4;
  o.channels = 2;
  o.difficulty = difficulty;
  o.seed = seed;
  return o;
}

std::vector<std::vector<double>> as_vectors(const Dataset& d) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto* p = d.pixels.data() + i * d.sample_size();
    out.emplace_back(p, p + d.sample_size());
  }
  return out;
}

std::vector<int> as_labels(const Dataset& d) { return {d.labels.begin(), d.labels.end()}; }

}  // namespace

TEST(DatasetFile, RoundTrip) {
  const auto [train, test] = gen_synthetic(small_gen(0.5, 1));
  const auto path = testutil::temp_path("round.skdd").string();
  write_dataset(train, path);
  EXPECT_EQ(read_dataset(path), train);
  EXPECT_EQ(decode_dataset(encode_dataset(test)), test);
}

TEST(DatasetFile, TruncationAndBitFlipsAreDetected) {
  const auto bytes = encode_dataset(gen_synthetic(small_gen(0.5, 1)).first);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<unsigned char> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(decode_dataset(part), CorruptionError) << cut;
  }
  for (std::size_t pos : {std::size_t{0}, std::size_t{9}, bytes.size() / 3, bytes.size() - 3}) {
    auto flipped = bytes;
    flipped[pos] ^= 0x10;
    EXPECT_THROW(decode_dataset(flipped), CorruptionError) << pos;
  }
  EXPECT_THROW(read_dataset(testutil::temp_path("does_not_exist.skdd").string()), InputError);
}

TEST(DatasetFile, InvalidDatasetsAreRejectedOnWrite) {
  Dataset d = gen_synthetic(small_gen(0.5, 1)).first;
  d.labels[0] = 9;
  EXPECT_THROW(encode_dataset(d), InputError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Model m = build(desk_cnn(2, 3, {2, 4, 4}), Rng(3));
  Rng rng(4);
  forward(m, rand_tensor({5, 2, 4, 4}, rng));
  const auto path = testutil::temp_path("model.skdc").string();
  write_checkpoint(m, path);
  const Model back = read_model(m.spec, path);
  EXPECT_TRUE(testutil::bitwise_equal(back.params, m.params));
  EXPECT_TRUE(testutil::bitwise_equal(back.buffers, m.buffers));

  TensorMap odd;
  odd["x"] = Tensor::vector({-0.0, 1e-310, 1.0 / 3.0});
  const TensorMap got = decode_checkpoint(encode_checkpoint(odd));
  EXPECT_TRUE(testutil::bitwise_equal(got.at("x"), odd.at("x")));
}

TEST(Checkpoint, CorruptionAndMismatchAreDetected) {
  const Model m = build(desk_cnn(2, 3, {2, 4, 4}), Rng(3));
  TensorMap t;
  collect(t, m.params, m.buffers);
  auto bytes = encode_checkpoint(t);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 1;
  EXPECT_THROW(decode_checkpoint(flipped), CorruptionError);
  EXPECT_THROW(decode_checkpoint({bytes.begin(), bytes.end() - 1}), CorruptionError);

  const auto path = testutil::temp_path("mismatch.skdc").string();
  write_checkpoint(t, path);
  EXPECT_THROW(read_model(desk_cnn(4, 3, {2, 4, 4}), path), CorruptionError);
  // restore is all-or-nothing
  Model other = build(desk_cnn(2, 3, {2, 4, 4}), Rng(9));
  const ParamStore before = other.params;
  TensorMap partial = t;
  partial.erase("cls.0.bias");
  EXPECT_THROW(restore(partial, other.params, other.buffers), CorruptionError);
  EXPECT_TRUE(testutil::bitwise_equal(other.params, before));
}

TEST(Synthetic, DeterministicAndBalanced) {
  const auto a = gen_synthetic(small_gen(0.4, 11));
  const auto b = gen_synthetic(small_gen(0.4, 11));
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, gen_synthetic(small_gen(0.4, 12)).first);
  std::vector<std::size_t> counts(5);
  for (auto l : a.first.labels) ++counts[l];
  for (auto c : counts) EXPECT_EQ(c, 40u);
  EXPECT_EQ(a.second.size(), 100u);
  EXPECT_THROW(gen_synthetic(small_gen(0.0, 1)), ConfigError);
  EXPECT_THROW(gen_synthetic(small_gen(1.5, 1)), ConfigError);
}

TEST(Synthetic, DifficultyControlsSeparability) {
  // k-NN on raw pixels: near chance for vanishing signal, well above for strong signal
  auto knn = [](double difficulty) {
    double total = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto [train, test] = gen_synthetic(small_gen(difficulty, seed));
      total += oracle::knn_accuracy(as_vectors(train), as_labels(train), as_vectors(test), as_labels(test), 5, 5);
    }
    return total / 3.0;
  };
  const double weak = knn(1e-3), strong = knn(1.0);
  EXPECT_LT(weak, 20.0 + 15.0);
  EXPECT_GT(strong, 60.0);
  EXPECT_GT(strong, weak);
}

TEST(Synthetic, DefaultDifficultyIsNotLinearlySeparable) {
  SyntheticOptions o;
  o.seed = 7;
  const auto [train, test] = gen_synthetic(o);
  const double train_acc =
      oracle::linear_probe_accuracy(as_vectors(train), as_labels(train), as_vectors(train), as_labels(train), 10);
  const double test_acc =
      oracle::linear_probe_accuracy(as_vectors(train), as_labels(train), as_vectors(test), as_labels(test), 10);
  EXPECT_LT(train_acc, 100.0);
  EXPECT_LT(test_acc, 100.0);
  EXPECT_GT(test_acc, 10.0);
  std::printf("linear probe: train %.2f%%, test %.2f%%\n", train_acc, test_acc);
}

TEST(Normalization, MatchesTwoPassOracle) {
  const auto train = gen_synthetic(small_gen(0.5, 1)).first;
  const Normalization n = compute_normalization(train);
  ASSERT_EQ(n.mean.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < train.size(); ++i)
      for (std::size_t p = 0; p < 16; ++p) xs.push_back(train.pixels[(i * 2 + c) * 16 + p] / 255.0);
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size()));
    EXPECT_NEAR(n.mean[c], m, 1e-12);
    EXPECT_NEAR(n.std[c], sd, 1e-12);
    const std::vector<std::size_t> idx = {0, 1, 2};
    const Tensor x = to_tensor(train, idx, n);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t p = 0; p < 16; ++p)
        EXPECT_NEAR(x[(i * 2 + c) * 16 + p], (train.pixels[(i * 2 + c) * 16 + p] / 255.0 - m) / sd, 1e-9);
  }
}

TEST(Augment, IdentityWhenDisabled) {
  Rng rng(5);
  const Tensor x = rand_tensor({3, 2, 4, 4}, rng);
  Rng arng(6);
  AugmentRecord rec;
  const Tensor y = augment(x, {0.0, 0}, arng, &rec);
  EXPECT_TRUE(testutil::bitwise_equal(x, y));
  for (bool f : rec.flipped) EXPECT_FALSE(f);
}

TEST(Augment, FlipIsAnInvolutionAndOffsetsStayInRange) {
  Rng rng(5);
  const Tensor x = rand_tensor({4, 2, 3, 5}, rng);
  const std::vector<bool> all(4, true);
  EXPECT_TRUE(testutil::bitwise_equal(hflip(hflip(x, all), all), x));
  EXPECT_EQ(hflip(x, all)[4], x[0]);  // first row reversed
  Rng arng(7);
  for (int trial = 0; trial < 20; ++trial) {
    AugmentRecord rec;
    const Tensor y = augment(x, {0.5, 2}, arng, &rec);
    EXPECT_EQ(y.shape(), x.shape());
    for (auto [dy, dx] : rec.offsets) {
      EXPECT_LE(dy, 4u);
      EXPECT_LE(dx, 4u);
    }
  }
  // centered crop without flips reproduces the input
  Rng crng(8);
  AugmentRecord rec;
  const Tensor y = augment(x, {0.0, 1}, crng, &rec);
  for (std::size_t b = 0; b < 4; ++b) {
    if (rec.offsets[b] == std::pair<std::size_t, std::size_t>{1, 1}) {
      EXPECT_TRUE(testutil::bitwise_equal(y.slice_rows(b, b + 1), x.slice_rows(b, b + 1)));
    }
  }
}

TEST(Replay, SavedTeacherReproducesItsAccuracy) {
  const TrainingData data = testutil::tiny_data();
  auto cfg = testutil::short_config(Method::Teacher, 3);
  auto res = train_model(desk_cnn(2, 4, {2, 4, 4}), data, cfg);
  const EvalMetrics before = evaluate(res.model, data.test, data.norm);
  const auto path = testutil::temp_path("replay.skdc").string();
  write_checkpoint(res.model, path);
  const Model back = read_model(res.model.spec, path);
  const EvalMetrics after = evaluate(back, data.test, data.norm);
  EXPECT_EQ(before.top1, after.top1);
  EXPECT_EQ(before.nll, after.nll);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lyra/vae.hpp"
#include "oracles.hpp"
#include "vae_gradcheck.hpp"

using namespace lyra;

namespace {

Vocabulary toy_vocab() {
  return build_vocabulary({make_line("a b c d", 0), make_line("e f g", 1)}, 1);
}

ArtistEmbeddingMatrix embeddings_for(ConditioningMode mode, std::size_t artists, std::size_t dim,
                                     std::uint64_t seed) {
  if (mode == ConditioningMode::OneHot) return ArtistEmbeddingMatrix::one_hot(artists);
  Rng rng(seed);
  auto m = ArtistEmbeddingMatrix::random(artists, dim, rng);
  if (required_source(mode) == EmbeddingSource::Audio) m.source = EmbeddingSource::Audio;
  return m;
}

VaeConfig tiny_config(ConditioningMode mode, std::size_t vocab_size) {
  VaeConfig c;
  c.vocab_size = vocab_size;
  c.num_artists = 2;
  c.word_emb_dim = 6;
  c.encoder_hidden = 5;
  c.latent_dim = 4;
  c.decoder_hidden = 7;
  c.artist_emb_dim = mode == ConditioningMode::OneHot ? 2 : 3;
  c.mode = mode;
  return c;
}

VaeModel tiny_model(ConditioningMode mode, std::uint64_t seed = 1) {
  const Vocabulary v = toy_vocab();
  VaeConfig c = tiny_config(mode, v.size());
  Rng rng(seed);
  return VaeModel(c, embeddings_for(mode, 2, c.artist_emb_dim, seed + 100), rng);
}

EncodedLine encoded(const std::string& text, int artist) {
  return encode_line(make_line(text, artist), toy_vocab());
}

std::vector<double> snapshot(const Tensor& t) { return t.values(); }

}  // namespace

TEST(Modes, NamesRoundTrip) {
  for (auto m : all_modes()) EXPECT_EQ(parse_mode(mode_name(m)), m);
  EXPECT_EQ(mode_name(ConditioningMode::AudioFrozen), "audioNT");
  EXPECT_THROW(parse_mode("audio"), std::invalid_argument);
}

TEST(Encoder, OutputDimensions) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen);
  Posterior p = m.encode({encoded("a b c", 0), encoded("e f", 1), encoded("g", 0)});
  EXPECT_EQ(p.mu.shape(), (Shape{3, 4}));
  EXPECT_EQ(p.logvar.shape(), (Shape{3, 4}));
}

TEST(Encoder, ZeroParametersGiveStandardNormalPosterior) {
  VaeModel m = tiny_model(ConditioningMode::RandomTrainable);
  for (auto& [name, t] : m.parameters()) std::fill(t.data().begin(), t.data().end(), 0.0);
  Posterior p = m.encode({encoded("a b c d", 0), encoded("f", 1)});
  for (double v : p.mu.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.logvar.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(kl_divergence(p.mu, p.logvar).item(), 0.0);
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen, 3);
  Rng rng(4);
  Tensor w1 = Tensor::randn({1, 4}, 1.0, rng), w2 = Tensor::randn({1, 4}, 1.0, rng);
  const std::vector<EncodedLine> batch{encoded("a b c d", 0)};
  std::vector<Tensor> params;
  for (auto& [name, t] : m.parameters())
    if (name.starts_with("encoder") || name.starts_with("posterior") || name == "word_embedding")
      params.push_back(t);
  auto f = [&] {
    Posterior p = m.encode(batch);
    return add(sum(mul(p.mu, w1)), sum(mul(p.logvar, w2)));
  };
  EXPECT_LT(grad_check(f, params), 1e-4);
}

TEST(Encoder, EmptyLineThrows) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen);
  EncodedLine empty;
  empty.ids = {Vocabulary::kBos, Vocabulary::kEos};
  EXPECT_THROW(m.encode({empty}), std::invalid_argument);
}

TEST(Reparameterize, DefinitionCases) {
  Tensor mu = Tensor::from({1, 3}, {0.5, -1, 2});
  Tensor logvar = Tensor::from({1, 3}, {0.3, -2, 1});
  EXPECT_EQ(reparameterize(mu, logvar, Tensor::zeros({1, 3})).values(), mu.values());
  Tensor e = Tensor::from({1, 3}, {0.1, 0.2, -0.3});
  Tensor z = reparameterize(mu, Tensor::zeros({1, 3}), e);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(z.values()[i], mu.values()[i] + e.values()[i]);
  Tensor z2 = reparameterize(mu, logvar, e);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(z2.values()[i], mu.values()[i] + std::exp(0.5 * logvar.values()[i]) * e.values()[i], 1e-15);
}

TEST(Reparameterize, MonteCarloMoments) {
  const std::size_t n = 100000;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal;
  std::vector<double> eps(n);
  for (auto& v : eps) v = normal(rng);
  Tensor z = reparameterize(Tensor::from({n, 1}, std::vector<double>(n, 1.0)), Tensor::zeros({n, 1}),
                            Tensor::from({n, 1}, eps));
  double mean = 0, var = 0;
  for (double v : z.values()) mean += v;
  mean /= n;
  for (double v : z.values()) var += (v - mean) * (v - mean);
  var /= n - 1;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Kl, ClosedFormCases) {
  EXPECT_EQ(kl_divergence(std::vector<double>{0, 0}, std::vector<double>{0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(kl_divergence(std::vector<double>(4, 1.0), std::vector<double>(4, 0.0)), 2.0);
  const double mc = oracle::kl_monte_carlo(std::vector<double>(4, 1.0), std::vector<double>(4, 0.0), 1000000, 3);
  EXPECT_NEAR(mc, 2.0, 0.02);
}

TEST(Kl, NonNegativeAndTensorFormAgrees) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0, 2);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> mu(3), lv(3);
    for (auto& v : mu) v = normal(rng);
    for (auto& v : lv) v = normal(rng);
    const double kl = kl_divergence(mu, lv);
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl_divergence(Tensor::from({1, 3}, mu), Tensor::from({1, 3}, lv)).item(), kl, 1e-12);
  }
}

TEST(Kl, MatchesMonteCarloOnRandomPosteriors) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> mu_d(-1.5, 1.5), lv_d(-1.0, 1.0);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> mu(3), lv(3);
    for (auto& v : mu) v = mu_d(rng);
    for (auto& v : lv) v = lv_d(rng);
    const double exact = kl_divergence(mu, lv);
    EXPECT_NEAR(oracle::kl_monte_carlo(mu, lv, 200000, 40 + t), exact, 0.02 * exact + 0.01);
  }
}

TEST(KlWeight, LinearRamp) {
  AnnealSchedule s;
  EXPECT_EQ(kl_weight(0, s), 0.0);
  EXPECT_EQ(kl_weight(1500, s), 0.5);
  EXPECT_EQ(kl_weight(3000, s), 1.0);
  EXPECT_EQ(kl_weight(100000, s), 1.0);
  double prev = 0;
  for (std::int64_t step = 0; step <= 4000; ++step) {
    const double w = kl_weight(step, s);
    EXPECT_GE(w, prev);
    EXPECT_LE(w, 1.0);
    prev = w;
  }
}

TEST(WordDropout, Extremes) {
  Rng rng(1);
  const std::vector<int> ids{Vocabulary::kBos, 4, 5, 6, 7};
  EXPECT_EQ(word_dropout(ids, 0.0, rng), ids);
  EXPECT_EQ(word_dropout(ids, 1.0, rng),
            (std::vector<int>{Vocabulary::kBos, Vocabulary::kUnk, Vocabulary::kUnk, Vocabulary::kUnk,
                              Vocabulary::kUnk}));
  EXPECT_THROW(word_dropout(ids, 1.5, rng), std::invalid_argument);
}

TEST(WordDropout, HalfRateOverTenThousandTokens) {
  Rng rng(2);
  std::vector<int> ids{Vocabulary::kBos};
  for (int i = 0; i < 10000; ++i) ids.push_back(4 + i % 7);
  auto out = word_dropout(ids, 0.5, rng);
  EXPECT_EQ(out[0], Vocabulary::kBos);
  std::size_t replaced = 0;
  for (std::size_t i = 1; i < out.size(); ++i) replaced += out[i] == Vocabulary::kUnk;
  EXPECT_NEAR(replaced / 10000.0, 0.5, 0.02);
}

TEST(Decoder, LogitShapeAndArtistSensitivity) {
  VaeModel m = tiny_model(ConditioningMode::RandomFrozen);
  Rng rng(3);
  Tensor z = Tensor::randn({1, 4}, 1.0, rng);
  const std::vector<int> inputs{Vocabulary::kBos, 4, 5, 6};
  Tensor l0 = m.decode_teacher_forced(z, 0, inputs);
  Tensor l1 = m.decode_teacher_forced(z, 1, inputs);
  EXPECT_EQ(l0.shape(), (Shape{4, toy_vocab().size()}));
  EXPECT_NE(l0.values(), l1.values());
  EXPECT_THROW(m.decode_teacher_forced(z, 2, inputs), std::out_of_range);
}

TEST(Decoder, OneHotStepInputWidth) {
  VaeModel m = tiny_model(ConditioningMode::OneHot);
  for (auto& [name, t] : m.parameters()) {
    if (name == "decoder.weight") EXPECT_EQ(t.shape()[0], 6u + 2u + 7u);
    if (name == "artist_embedding") {
      EXPECT_EQ(t.shape(), (Shape{2, 2}));
      EXPECT_FALSE(t.requires_grad());
    }
  }
}

TEST(Conditioning, SourceMustMatchMode) {
  const Vocabulary v = toy_vocab();
  Rng rng(1);
  VaeConfig c = tiny_config(ConditioningMode::AudioTrainable, v.size());
  try {
    VaeModel(c, embeddings_for(ConditioningMode::RandomFrozen, 2, 3, 1), rng);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_EQ(std::string(e.what()), "audio embeddings required");
  }
  c = tiny_config(ConditioningMode::RandomTrainable, v.size());
  EXPECT_THROW(VaeModel(c, embeddings_for(ConditioningMode::AudioFrozen, 2, 3, 1), rng), std::invalid_argument);
  EXPECT_THROW(VaeModel(c, embeddings_for(ConditioningMode::RandomFrozen, 3, 3, 1), rng), std::invalid_argument);
}

class FullLossGradient : public ::testing::TestWithParam<ConditioningMode> {};

TEST_P(FullLossGradient, MatchesFiniteDifferences) {
  EXPECT_LT(gradcheck::vae_loss_error(GetParam()), 1e-4) << mode_name(GetParam());
}

TEST(Parameters, FrozenModesExcludeTheArtistTable) {
  for (auto mode : all_modes()) {
    VaeModel m = tiny_model(mode);
    std::size_t trainable = 0;
    for (auto& [name, t] : m.parameters()) {
      if (name == "artist_embedding") EXPECT_EQ(t.requires_grad(), !is_frozen(mode)) << mode_name(mode);
      trainable += t.requires_grad();
    }
    EXPECT_EQ(m.trainable_parameters().size(), trainable);
  }
}

INSTANTIATE_TEST_SUITE_P(AllModes, FullLossGradient, ::testing::ValuesIn(all_modes()),
                         [](const auto& info) { return mode_name(info.param); });

TEST(Training, StepZeroTotalEqualsReconstruction) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen);
  Adam adam(m.trainable_parameters());
  Rng rng(1);
  StepStats s = training_step({encoded("a b c", 0), encoded("e f g", 1)}, m, adam, 0, rng);
  EXPECT_EQ(s.kl_weight, 0.0);
  EXPECT_EQ(s.total, s.recon);
  EXPECT_GT(s.kl, 0.0);
}

TEST(Training, FrozenModesNeverMoveTheEmbeddingTable) {
  const std::vector<EncodedLine> lines{encoded("a b c", 0), encoded("e f g", 1), encoded("d a", 0)};
  for (auto mode : all_modes()) {
    VaeModel m = tiny_model(mode);
    const auto before = snapshot(m.artist_embeddings());
    const auto words_before = snapshot(m.word_embeddings());
    VaeTrainOptions o;
    o.steps = 100;
    o.batch_size = 2;
    o.lr = 1e-2;
    train_vae(m, lines, o);
    if (is_frozen(mode))
      EXPECT_EQ(snapshot(m.artist_embeddings()), before) << mode_name(mode);
    else
      EXPECT_NE(snapshot(m.artist_embeddings()), before) << mode_name(mode);
    EXPECT_NE(snapshot(m.word_embeddings()), words_before);
  }
}

TEST(Training, SameSeedIsBitIdentical) {
  const std::vector<EncodedLine> lines{encoded("a b c", 0), encoded("e f g", 1), encoded("d a", 0)};
  auto run = [&] {
    VaeModel m = tiny_model(ConditioningMode::AudioTrainable, 5);
    VaeTrainOptions o;
    o.steps = 30;
    o.batch_size = 2;
    o.seed = 9;
    train_vae(m, lines, o);
    std::vector<std::vector<double>> out;
    for (auto& [name, t] : m.parameters()) out.push_back(t.values());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, HistoryRecordsEveryStep) {
  VaeModel m = tiny_model(ConditioningMode::OneHot);
  VaeTrainOptions o;
  o.steps = 12;
  o.batch_size = 2;
  auto r = train_vae(m, {encoded("a b", 0), encoded("e", 1)}, o);
  ASSERT_EQ(r.history.size(), 12u);
  EXPECT_EQ(r.history[0].kl_weight, 0.0);
  EXPECT_GT(r.history[11].kl_weight, 0.0);
}

TEST(Generation, ArgmaxIsDeterministicForFixedLatent) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen);
  Rng zr(2);
  Tensor z = Tensor::randn({3, 4}, 1.0, zr);
  Rng a(1), b(99);
  EXPECT_EQ(decode_from_latent(m, z, 0, 0.0, 20, a), decode_from_latent(m, z, 0, 0.0, 20, b));
}

TEST(Generation, OutputsAreCleanAndBounded) {
  VaeModel m = tiny_model(ConditioningMode::RandomTrainable);
  const Vocabulary v = toy_vocab();
  for (double temperature : {0.0, 0.5, 1.0, 2.0}) {
    GenerateOptions o;
    o.count = 50;
    o.temperature = temperature;
    o.max_len = 5;
    o.seed = 3;
    for (const auto& ids : sample_ids(m, 1, o)) {
      EXPECT_LE(ids.size(), 5u);
      for (int id : ids) EXPECT_GE(id, Vocabulary::kNumSpecials);
    }
    for (const auto& line : generate(m, v, 1, o)) {
      EXPECT_EQ(line.find('<'), std::string::npos) << line;
      EXPECT_EQ(line, normalize_line(line));
    }
  }
}

TEST(Generation, SeedControlsOutputAndErrorsAreReported) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen);
  const Vocabulary v = toy_vocab();
  GenerateOptions o;
  o.count = 10;
  o.seed = 4;
  EXPECT_EQ(generate(m, v, 0, o), generate(m, v, 0, o));
  GenerateOptions other = o;
  other.seed = 5;
  EXPECT_NE(generate(m, v, 0, o), generate(m, v, 0, other));
  EXPECT_THROW(generate(m, v, 2, o), std::out_of_range);
  o.temperature = -1;
  EXPECT_THROW(generate(m, v, 0, o), std::invalid_argument);
}

TEST(WordVectors, LoadsKnownTokensOnly) {
  VaeModel m = tiny_model(ConditioningMode::AudioFrozen);
  const Vocabulary v = toy_vocab();
  const auto path = std::filesystem::temp_directory_path() / "lyra_vectors.txt";
  std::ofstream(path) << "a 1 2 3 4 5 6\nzzz 1 1 1 1 1 1\nc 0.5 0.5 0.5 0.5 0.5 0.5\n";
  EXPECT_EQ(load_word_embeddings(path, v, m), 2u);
  const auto row = [&](int id) {
    return std::vector<double>(m.word_embeddings().values().begin() + id * 6,
                               m.word_embeddings().values().begin() + id * 6 + 6);
  };
  EXPECT_EQ(row(v.id("a")), (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(row(v.id("c")), std::vector<double>(6, 0.5));
  std::ofstream(path) << "a 1 2\n";
  EXPECT_THROW(load_word_embeddings(path, v, m), std::runtime_error);
}

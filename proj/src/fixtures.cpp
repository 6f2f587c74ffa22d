#include "lyra/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace lyra {

namespace {

constexpr const char* kOnsets[] = {"bdfgh", "klmnp", "rstvw", "cjqxz"};
constexpr const char* kVowels = "aeiou";

}  // namespace

std::vector<std::string> fixture_vocabulary(std::size_t artist, std::size_t size,
                                            std::uint64_t seed) {
  if (artist >= std::size(kOnsets)) throw std::invalid_argument("fixture supports at most 4 artists");
  const std::string onsets = kOnsets[artist];
  std::vector<std::string> syllables;
  for (char c : onsets)
    for (const char* v = kVowels; *v; ++v) syllables.push_back(std::string{c, *v});
  std::vector<std::string> words;
  for (const auto& a : syllables)
    for (const auto& b : syllables) words.push_back(a + b);
  if (size > words.size()) throw std::invalid_argument("fixture vocabulary too large");
  std::mt19937_64 rng(seed + 1000 * artist);
  std::shuffle(words.begin(), words.end(), rng);
  words.resize(size);
  return words;
}

Corpus make_text_fixture(const TextFixtureOptions& o) {
  if (o.artists < 2) throw std::invalid_argument("fixture needs at least two artists");
  if (o.min_len == 0 || o.min_len > o.max_len) throw std::invalid_argument("bad fixture line lengths");
  Corpus corpus;
  for (std::size_t a = 0; a < o.artists; ++a) {
    const std::string name = "artist" + std::string(1, static_cast<char>('a' + a));
    corpus.artists.push_back(ArtistId{static_cast<int>(a), name, "synthetic", name});

    const auto words = fixture_vocabulary(a, o.vocab_per_artist, o.seed);
    std::mt19937_64 rng(o.seed * 7919 + a);
    std::vector<std::vector<std::size_t>> next(words.size());
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    for (auto& succ : next)
      for (std::size_t k = 0; k < o.successors; ++k) succ.push_back(pick(rng));
    std::uniform_int_distribution<std::size_t> length(o.min_len, o.max_len);
    std::uniform_int_distribution<std::size_t> branch(0, o.successors - 1);

    for (std::size_t i = 0; i < o.lines_per_artist; ++i) {
      std::size_t w = pick(rng);
      std::string text = words[w];
      const std::size_t n = length(rng);
      for (std::size_t k = 1; k < n; ++k) {
        w = next[w][branch(rng)];
        text += ' ' + words[w];
      }
      corpus.lines.push_back(make_line(text, static_cast<int>(a)));
    }
  }
  return corpus;
}

std::vector<double> fixture_song(std::size_t artist, std::size_t song,
                                 const AudioFixtureOptions& o) {
  std::mt19937_64 rng(o.seed * 104729 + artist * 1009 + song);
  std::uniform_real_distribution<double> jitter(0.97, 1.03);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double base = 220.0 * static_cast<double>(artist + 1) *
                      std::pow(1.5, static_cast<double>(artist)) * jitter(rng);
  const auto n = static_cast<std::size_t>(static_cast<double>(o.clips_per_song) *
                                          kClipSeconds * o.sample_rate);
  std::vector<double> samples(n);
  const double sr = o.sample_rate;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    double v = 0.0;
    for (int h = 1; h <= 3; ++h) {
      if (base * h < sr / 2) v += std::sin(2 * std::numbers::pi * base * h * t) / h;
    }
    samples[i] = std::clamp(0.4 * v + noise(rng), -1.0, 1.0);
  }
  return samples;
}

MelParams fixture_mel_params() {
  MelParams p;
  p.n_fft = 1024;
  p.hop = 1024;
  p.n_mels = 64;
  return p;
}

void write_audio_fixture(const Corpus& corpus, const std::filesystem::path& root,
                         const AudioFixtureOptions& o) {
  for (const auto& artist : corpus.artists) {
    const auto dir = root / "artists" / artist.directory / "audio";
    std::filesystem::create_directories(dir);
    for (std::size_t s = 0; s < o.songs_per_artist; ++s) {
      const auto bytes = encode_wav(fixture_song(artist.index, s, o), o.sample_rate);
      char name[32];
      std::snprintf(name, sizeof name, "song%02zu.wav", s);
      std::ofstream out(dir / name, std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
      if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    }
  }
}

RunConfig fixture_run_config() {
  RunConfig c;
  c.audio = fixture_mel_params();
  c.spectro.channels = {8, 16};
  c.spectro.head = {64, 32, 16};
  c.spectro_train.epochs = 15;
  c.spectro_train.batch_size = 8;
  c.vae.word_emb_dim = 32;
  c.vae.encoder_hidden = 32;
  c.vae.latent_dim = 16;
  c.vae.decoder_hidden = 64;
  c.vae.artist_emb_dim = 16;
  c.vae.min_count = 1;
  c.vae.steps = 3000;
  c.vae.batch_size = 32;
  c.vae.lr = 3e-3;
  c.evaluation.text_cnn.feature_maps = 16;
  c.evaluation.text_cnn.emb_dim = 32;
  c.evaluation.style.epochs = 5;
  c.evaluation.lines_per_artist = 100;
  return c;
}

std::filesystem::path write_fixture(const std::filesystem::path& root,
                                    const TextFixtureOptions& text,
                                    const AudioFixtureOptions& audio) {
  const Corpus corpus = make_text_fixture(text);
  write_corpus(corpus, root / "corpus");
  write_audio_fixture(corpus, root / "corpus", audio);
  RunConfig config = fixture_run_config();
  config.corpus_dir = "corpus";
  config.output_dir = "runs";
  const auto path = root / "config.json";
  save_run_config(config, path);
  return path;
}

}  // namespace lyra

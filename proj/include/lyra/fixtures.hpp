#pragma once

// Synthetic data sets with known structure, used by the test suites and by
// `lyra make-fixture` for trying the pipeline end to end.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lyra/audio.hpp"
#include "lyra/config.hpp"
#include "lyra/corpus.hpp"

namespace lyra {

struct TextFixtureOptions {
  std::size_t artists = 2;          // at most 4
  std::size_t vocab_per_artist = 30;
  std::size_t lines_per_artist = 200;
  std::size_t min_len = 4;
  std::size_t max_len = 8;
  std::size_t successors = 3;  // Markov out-degree per word
  std::uint64_t seed = 7;
};

// Each artist draws from its own alphabetic vocabulary (disjoint across
// artists) and writes lines by walking a fixed sparse Markov chain.
Corpus make_text_fixture(const TextFixtureOptions& options);
std::vector<std::string> fixture_vocabulary(std::size_t artist, std::size_t size,
                                            std::uint64_t seed);

struct AudioFixtureOptions {
  std::size_t songs_per_artist = 10;
  std::size_t clips_per_song = 3;
  int sample_rate = 8000;
  std::uint64_t seed = 11;
};

// Artist a's songs are harmonic tones near 220·(a+1)·1.5^a Hz with per-song
// pitch jitter and additive noise.
std::vector<double> fixture_song(std::size_t artist, std::size_t song,
                                 const AudioFixtureOptions& options);
MelParams fixture_mel_params();
// Writes artists/<dir>/audio/song<NN>.wav for every artist in `corpus`.
void write_audio_fixture(const Corpus& corpus, const std::filesystem::path& root,
                         const AudioFixtureOptions& options);

// Small-model configuration sized for the fixture data.
RunConfig fixture_run_config();

// Corpus, audio and config.json under `root`; returns the config path.
std::filesystem::path write_fixture(const std::filesystem::path& root,
                                    const TextFixtureOptions& text = {},
                                    const AudioFixtureOptions& audio = {});

}  // namespace lyra

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lyra/corpus.hpp"

namespace lyra {

// Row-major dense matrix for DSP results.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct PcmAudio {
  std::vector<double> samples;  // mono, [-1, 1)
  int sample_rate = 0;
};

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string song_id;
  int artist = 0;
  int clip_index = 0;
};

struct MelParams {
  int n_fft = 2048;
  int hop = 512;
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means sample_rate / 2
  double floor_db = -80.0;
};

struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;
  double fmin = 0.0;
  double fmax = 0.0;
  std::vector<double> weights;  // n_mels × n_bins

  double weight(int mel, int bin) const { return weights[mel * n_bins + bin]; }
};

struct Spectrogram {
  Grid values;  // n_mels × n_frames, dB relative to the clip maximum
  std::string song_id;
  int artist = 0;
  int clip_index = 0;
  int sample_rate = 0;
  MelParams params;

  std::size_t n_mels() const { return values.rows; }
  std::size_t n_frames() const { return values.cols; }
};

struct SpectrogramSplit {
  std::vector<Spectrogram> train;
  std::vector<Spectrogram> valid;
  std::vector<Spectrogram> test;
};

inline constexpr double kClipSeconds = 10.0;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

PcmAudio decode_wav(std::span<const std::uint8_t> bytes);
PcmAudio read_wav(const std::filesystem::path& path);
// 16-bit PCM RIFF/WAVE; `channels` interleaved when > 1.
std::vector<std::uint8_t> encode_wav(std::span<const double> samples,
                                     int sample_rate, int channels = 1);

std::vector<AudioClip> segment_clips(std::span<const double> samples,
                                     int sample_rate, const std::string& song_id,
                                     int artist = 0);

// Periodic Hann window of length n.
std::vector<double> hann_window(int n);
// frames × (n_fft/2 + 1) squared magnitudes of Hann-windowed frames.
Grid stft_power(std::span<const double> samples, int n_fft, int hop);

MelFilterbank mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin,
                             double fmax);
// n_mels × frames linear mel power.
Grid mel_power(const AudioClip& clip, const MelParams& params);
Spectrogram mel_spectrogram(const AudioClip& clip, const MelParams& params);
std::size_t expected_frames(std::size_t samples, int n_fft, int hop);

SpectrogramSplit grouped_split(const std::vector<Spectrogram>& spectrograms,
                               SplitFractions fractions, std::uint64_t seed);

// Every `artists/<dir>/audio/*.wav` under root, clipped and transformed.
// Files are visited in sorted order; the SongId is the path relative to root.
std::vector<Spectrogram> load_audio_dataset(const std::filesystem::path& root,
                                            const std::vector<ArtistId>& artists,
                                            const MelParams& params);

}  // namespace lyra

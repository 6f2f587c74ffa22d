#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "lyra/audio.hpp"
#include "oracles.hpp"

using namespace lyra;

namespace {

std::vector<std::uint8_t> wav_bytes(const std::vector<std::int16_t>& pcm, int channels,
                                    int sample_rate = 8000) {
  auto put16 = [](std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back(v >> 8);
  };
  auto put32 = [](std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
  };
  std::vector<std::uint8_t> b{'R', 'I', 'F', 'F'};
  const std::uint32_t data_len = static_cast<std::uint32_t>(pcm.size() * 2);
  put32(b, 36 + data_len);
  for (char c : std::string("WAVEfmt ")) b.push_back(c);
  put32(b, 16);
  put16(b, 1);
  put16(b, channels);
  put32(b, sample_rate);
  put32(b, sample_rate * channels * 2);
  put16(b, channels * 2);
  put16(b, 16);
  for (char c : std::string("data")) b.push_back(c);
  put32(b, data_len);
  for (auto s : pcm) put16(b, static_cast<std::uint16_t>(s));
  return b;
}

std::vector<double> sine(double hz, int sr, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * std::numbers::pi * hz * i / sr);
  return x;
}

AudioClip clip_of(std::vector<double> samples, int sr) {
  AudioClip c;
  c.samples = std::move(samples);
  c.sample_rate = sr;
  c.song_id = "song";
  return c;
}

}  // namespace

TEST(Wav, ZeroPayloadDecodesToZeros) {
  PcmAudio a = decode_wav(wav_bytes(std::vector<std::int16_t>(10, 0), 1));
  ASSERT_EQ(a.samples.size(), 10u);
  for (double v : a.samples) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.sample_rate, 8000);
}

TEST(Wav, SampleScaling) {
  PcmAudio a = decode_wav(wav_bytes({16384, -32768}, 1));
  EXPECT_DOUBLE_EQ(a.samples[0], 0.5);
  EXPECT_DOUBLE_EQ(a.samples[1], -1.0);
}

TEST(Wav, StereoIsAveraged) {
  const auto l = static_cast<std::int16_t>(0.4 * 32768), r = static_cast<std::int16_t>(0.2 * 32768);
  PcmAudio a = decode_wav(wav_bytes({l, r}, 2));
  ASSERT_EQ(a.samples.size(), 1u);
  EXPECT_NEAR(a.samples[0], 0.3, 1e-4);
}

TEST(Wav, EncodeDecodeRoundTrip) {
  std::vector<double> x{0.0, 0.5, -0.25, 0.999};
  PcmAudio a = decode_wav(encode_wav(x, 16000));
  EXPECT_EQ(a.sample_rate, 16000);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a.samples[i], x[i], 1.0 / 32768);
}

TEST(Wav, RejectsNonPcm) {
  auto bytes = wav_bytes({1, 2}, 1);
  bytes[20] = 3;  // IEEE float format tag
  EXPECT_THROW(decode_wav(bytes), std::runtime_error);
  EXPECT_THROW(decode_wav(std::vector<std::uint8_t>{'R', 'I', 'F'}), std::runtime_error);
}

TEST(Segment, ClipCounts) {
  const int sr = 100;
  EXPECT_EQ(segment_clips(std::vector<double>(35 * sr), sr, "s").size(), 3u);
  auto one = segment_clips(std::vector<double>(10 * sr), sr, "s");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].samples.size(), static_cast<std::size_t>(10 * sr));
  EXPECT_TRUE(segment_clips(std::vector<double>(990), sr, "s").empty());
}

TEST(Segment, ClipsShareSongId) {
  auto clips = segment_clips(std::vector<double>(2000), 100, "artists/x/audio/a.wav", 1);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(clips[i].song_id, "artists/x/audio/a.wav");
    EXPECT_EQ(clips[i].clip_index, static_cast<int>(i));
    EXPECT_EQ(clips[i].artist, 1);
  }
}

TEST(Stft, ZeroSignalGivesZeroPower) {
  Grid p = stft_power(std::vector<double>(4096, 0.0), 1024, 512);
  for (double v : p.values) EXPECT_EQ(v, 0.0);
}

TEST(Stft, MatchesDirectDftOnRandomFrames) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int n_fft : {64, 256, 1024}) {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> frame(n_fft);
      for (auto& v : frame) v = normal(rng);
      Grid p = stft_power(frame, n_fft, n_fft);
      ASSERT_EQ(p.rows, 1u);
      const auto ref = oracle::dft_power(frame);
      double scale = 0;
      for (double v : ref) scale = std::max(scale, v);
      for (std::size_t k = 0; k < ref.size(); ++k)
        EXPECT_LE(std::abs(p.at(0, k) - ref[k]), 1e-6 * scale) << n_fft << " bin " << k;
    }
  }
}

TEST(Stft, SinePeaksAtExpectedBin) {
  const int sr = 22050, n = 2048;
  Grid p = stft_power(sine(440, sr, sr), n, 512);
  const std::size_t expected = static_cast<std::size_t>(std::lround(440.0 * n / sr));
  EXPECT_EQ(expected, 41u);
  for (std::size_t f = 0; f < p.rows; ++f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.cols; ++k)
      if (p.at(f, k) > p.at(f, best)) best = k;
    EXPECT_EQ(best, expected) << "frame " << f;
  }
}

TEST(Stft, ParsevalOnWindowedFrame) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  const int n = 512;
  std::vector<double> frame(n);
  for (auto& v : frame) v = normal(rng);
  Grid p = stft_power(frame, n, n);
  const auto w = hann_window(n);
  double energy = 0;
  for (int t = 0; t < n; ++t) energy += (w[t] * frame[t]) * (w[t] * frame[t]);
  // one-sided spectrum: interior bins count twice
  double total = p.at(0, 0) + p.at(0, n / 2);
  for (int k = 1; k < n / 2; ++k) total += 2 * p.at(0, k);
  EXPECT_NEAR(total / n, energy, 1e-6 * energy);
}

TEST(Stft, FrameCountFormula) {
  EXPECT_EQ(expected_frames(22050 * 10, 2048, 512), 1 + (22050u * 10 - 2048) / 512);
  Grid p = stft_power(std::vector<double>(5000, 0.1), 1024, 300);
  EXPECT_EQ(p.rows, expected_frames(5000, 1024, 300));
  EXPECT_THROW(stft_power(std::vector<double>(100), 1024, 512), std::invalid_argument);
}

TEST(Mel, ScaleAnchors) {
  EXPECT_EQ(hz_to_mel(0), 0.0);
  EXPECT_NEAR(hz_to_mel(700), 2595 * std::log10(2.0), 1e-9);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
}

TEST(Mel, FilterbankCoversRangeWithTriangles) {
  const int sr = 22050, n_fft = 2048;
  MelFilterbank fb = mel_filterbank(128, n_fft, sr, 0, sr / 2.0);
  ASSERT_EQ(fb.n_mels, 128);
  for (int k = 0; k < fb.n_bins; ++k) {
    const double hz = static_cast<double>(k) * sr / n_fft;
    if (hz <= fb.fmin || hz >= fb.fmax) continue;
    double total = 0;
    for (int m = 0; m < fb.n_mels; ++m) total += fb.weight(m, k);
    EXPECT_GT(total, 0.0) << "bin " << k;
  }
  for (int m = 0; m < fb.n_mels; ++m) {
    // nonnegative, nonzero, one contiguous rise-then-fall band
    int first = -1, last = -1, peak = 0;
    for (int k = 0; k < fb.n_bins; ++k) {
      EXPECT_GE(fb.weight(m, k), 0.0);
      if (fb.weight(m, k) > 0) {
        if (first < 0) first = k;
        last = k;
        if (fb.weight(m, k) > fb.weight(m, peak)) peak = k;
      }
    }
    ASSERT_GE(first, 0) << "empty band " << m;
    for (int k = first; k <= last; ++k) EXPECT_GT(fb.weight(m, k), 0.0);
    for (int k = first + 1; k <= peak; ++k) EXPECT_GE(fb.weight(m, k), fb.weight(m, k - 1));
    for (int k = peak + 1; k <= last; ++k) EXPECT_LE(fb.weight(m, k), fb.weight(m, k - 1));
  }
}

TEST(Mel, InvalidRangeThrows) {
  EXPECT_THROW(mel_filterbank(40, 1024, 8000, 3000, 2000), std::invalid_argument);
  EXPECT_THROW(mel_filterbank(40, 1024, 8000, 0, 5000), std::invalid_argument);
  EXPECT_THROW(mel_filterbank(1, 1024, 8000, 0, 4000), std::invalid_argument);
}

TEST(MelSpectrogram, SilenceIsFloor) {
  const int sr = 8000;
  Spectrogram s = mel_spectrogram(clip_of(std::vector<double>(10 * sr, 0.0), sr), {});
  for (double v : s.values.values) EXPECT_EQ(v, -80.0);
}

TEST(MelSpectrogram, RangeShapeAndMaximum) {
  const int sr = 8000;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0, 0.3);
  std::vector<double> x(10 * sr);
  for (auto& v : x) v = normal(rng);
  MelParams p;
  p.n_fft = 1024;
  p.hop = 256;
  p.n_mels = 40;
  Spectrogram s = mel_spectrogram(clip_of(x, sr), p);
  EXPECT_EQ(s.n_mels(), 40u);
  EXPECT_EQ(s.n_frames(), expected_frames(x.size(), 1024, 256));
  double mx = -1e9;
  for (double v : s.values.values) {
    EXPECT_GE(v, -80.0);
    EXPECT_LE(v, 0.0);
    mx = std::max(mx, v);
  }
  EXPECT_EQ(mx, 0.0);
}

TEST(MelSpectrogram, SineConcentratesNearItsBand) {
  const int sr = 22050;
  AudioClip clip = clip_of(sine(440, sr, 10 * sr), sr);
  MelParams p;
  Grid power = mel_power(clip, p);
  MelFilterbank fb = mel_filterbank(p.n_mels, p.n_fft, sr, 0, sr / 2.0);
  const int bin440 = static_cast<int>(std::lround(440.0 * p.n_fft / sr));
  int band = 0;
  for (int m = 1; m < fb.n_mels; ++m)
    if (fb.weight(m, bin440) > fb.weight(band, bin440)) band = m;
  double near = 0, total = 0;
  for (std::size_t m = 0; m < power.rows; ++m)
    for (std::size_t f = 0; f < power.cols; ++f) {
      total += power.at(m, f);
      if (std::abs(static_cast<int>(m) - band) <= 2) near += power.at(m, f);
    }
  EXPECT_GE(near / total, 0.9);
}

namespace {

std::vector<Spectrogram> fake_specs(int artists, int songs, int clips_per_song) {
  std::vector<Spectrogram> out;
  for (int a = 0; a < artists; ++a)
    for (int s = 0; s < songs; ++s)
      for (int c = 0; c < clips_per_song + (s % 3 == 0 ? 1 : 0); ++c) {
        Spectrogram sp;
        sp.artist = a;
        sp.song_id = "a" + std::to_string(a) + "/s" + std::to_string(s);
        sp.clip_index = c;
        out.push_back(sp);
      }
  return out;
}

}  // namespace

TEST(GroupedSplit, TenSongsOfFiveClips) {
  std::vector<Spectrogram> specs;
  for (int s = 0; s < 10; ++s)
    for (int c = 0; c < 5; ++c) {
      Spectrogram sp;
      sp.song_id = "s" + std::to_string(s);
      sp.clip_index = c;
      specs.push_back(sp);
    }
  SpectrogramSplit split = grouped_split(specs, {}, 1);
  EXPECT_EQ(split.train.size(), 40u);
  EXPECT_EQ(split.valid.size(), 5u);
  EXPECT_EQ(split.test.size(), 5u);
}

TEST(GroupedSplit, NoSongCrossesPartitionsAndSeedIsDeterministic) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto specs = fake_specs(3, 7 + static_cast<int>(seed % 5), 2);
    SpectrogramSplit a = grouped_split(specs, {}, seed);
    std::map<std::string, int> where;
    int part = 0;
    for (const auto* p : {&a.train, &a.valid, &a.test}) {
      for (const auto& s : *p) {
        auto [it, inserted] = where.emplace(s.song_id, part);
        EXPECT_TRUE(inserted || it->second == part) << s.song_id;
      }
      ++part;
    }
    EXPECT_EQ(a.train.size() + a.valid.size() + a.test.size(), specs.size());
    SpectrogramSplit b = grouped_split(specs, {}, seed);
    ASSERT_EQ(a.test.size(), b.test.size());
    for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].song_id, b.test[i].song_id);
  }
}

TEST(GroupedSplit, TooFewSongsThrows) {
  try {
    grouped_split(fake_specs(1, 2, 3), {}, 1);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("cannot group-split"), std::string::npos);
  }
}

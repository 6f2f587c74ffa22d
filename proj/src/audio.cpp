#include "lyra/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace lyra {

namespace {

std::mutex g_fftw_planner;

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 |
         std::uint32_t(b[at + 2]) << 16 | std::uint32_t(b[at + 3]) << 24;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint16_t(b[at] | b[at + 1] << 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + at);
}

[[noreturn]] void unsupported(const std::string& why) {
  throw std::runtime_error("unsupported wav: " + why);
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

PcmAudio decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    unsupported("missing RIFF/WAVE header");
  }
  int channels = 0, bits = 0, sample_rate = 0;
  bool have_fmt = false;
  std::span<const std::uint8_t> payload;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) unsupported("truncated chunk");
    if (tag_is(bytes, pos, "fmt ")) {
      if (len < 16) unsupported("short fmt chunk");
      if (read_u16(bytes, body) != 1) unsupported("not PCM");
      channels = read_u16(bytes, body + 2);
      sample_rate = static_cast<int>(read_u32(bytes, body + 4));
      bits = read_u16(bytes, body + 14);
      have_fmt = true;
    } else if (tag_is(bytes, pos, "data")) {
      payload = bytes.subspan(body, len);
      have_data = true;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt || !have_data) unsupported("missing fmt or data chunk");
  if (bits != 16) unsupported("only 16-bit samples are supported");
  if (channels != 1 && channels != 2) unsupported("only mono or stereo");
  if (sample_rate <= 0) unsupported("invalid sample rate");

  const std::size_t frame_bytes = 2 * static_cast<std::size_t>(channels);
  const std::size_t frames = payload.size() / frame_bytes;
  PcmAudio audio;
  audio.sample_rate = sample_rate;
  audio.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (int ch = 0; ch < channels; ++ch) {
      const auto raw = static_cast<std::int16_t>(
          read_u16(payload, f * frame_bytes + 2 * static_cast<std::size_t>(ch)));
      acc += raw / 32768.0;
    }
    audio.samples[f] = acc / channels;
  }
  return audio;
}

PcmAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav(std::span<const double> samples,
                                     int sample_rate, int channels) {
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * 2));
  put_u16(out, static_cast<std::uint16_t>(channels * 2));
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_len);
  for (double s : samples) {
    const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put_u16(out, static_cast<std::uint16_t>(
                     static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
  }
  return out;
}

std::vector<AudioClip> segment_clips(std::span<const double> samples,
                                     int sample_rate, const std::string& song_id,
                                     int artist) {
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  const auto clip_len =
      static_cast<std::size_t>(std::llround(kClipSeconds * sample_rate));
  std::vector<AudioClip> clips;
  for (std::size_t start = 0; start + clip_len <= samples.size(); start += clip_len) {
    AudioClip clip;
    clip.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(start),
                        samples.begin() + static_cast<std::ptrdiff_t>(start + clip_len));
    clip.sample_rate = sample_rate;
    clip.song_id = song_id;
    clip.artist = artist;
    clip.clip_index = static_cast<int>(clips.size());
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

std::size_t expected_frames(std::size_t samples, int n_fft, int hop) {
  if (samples < static_cast<std::size_t>(n_fft)) return 0;
  return 1 + (samples - n_fft) / hop;
}

Grid stft_power(std::span<const double> samples, int n_fft, int hop) {
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) {
    throw std::invalid_argument("n_fft must be a power of two");
  }
  if (hop < 1) throw std::invalid_argument("hop must be positive");
  if (samples.size() < static_cast<std::size_t>(n_fft)) {
    throw std::invalid_argument("signal too short");
  }
  const auto window = hann_window(n_fft);
  const int bins = n_fft / 2 + 1;
  Grid out;
  out.rows = expected_frames(samples.size(), n_fft, hop);
  out.cols = bins;
  out.values.resize(out.rows * out.cols);

  std::vector<double> frame(n_fft);
  std::vector<fftw_complex> spectrum(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(g_fftw_planner);
    plan = fftw_plan_dft_r2c_1d(n_fft, frame.data(), spectrum.data(),
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  for (std::size_t f = 0; f < out.rows; ++f) {
    const double* src = samples.data() + f * hop;
    for (int i = 0; i < n_fft; ++i) frame[i] = src[i] * window[i];
    fftw_execute_dft_r2c(plan, frame.data(), spectrum.data());
    for (int k = 0; k < bins; ++k) {
      out.values[f * bins + k] =
          spectrum[k][0] * spectrum[k][0] + spectrum[k][1] * spectrum[k][1];
    }
  }
  {
    std::lock_guard lock(g_fftw_planner);
    fftw_destroy_plan(plan);
  }
  return out;
}

MelFilterbank mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin,
                             double fmax) {
  if (n_mels < 2) throw std::invalid_argument("n_mels must be >= 2");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw std::invalid_argument("invalid mel frequency range [" +
                                std::to_string(fmin) + ", " +
                                std::to_string(fmax) + "]");
  }
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = n_fft / 2 + 1;
  fb.fmin = fmin;
  fb.fmax = fmax;
  fb.weights.assign(static_cast<std::size_t>(n_mels) * fb.n_bins, 0.0);

  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    bool any = false;
    for (int k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double w =
          std::max(0.0, std::min((f - left) / (centre - left),
                                 (right - f) / (right - centre)));
      fb.weights[static_cast<std::size_t>(m) * fb.n_bins + k] = w;
      any = any || w > 0.0;
    }
    if (!any) {
      throw std::invalid_argument("mel band " + std::to_string(m) +
                                  " covers no FFT bin; reduce n_mels or raise n_fft");
    }
  }
  return fb;
}

Grid mel_power(const AudioClip& clip, const MelParams& params) {
  const double fmax = params.fmax > 0.0 ? params.fmax : clip.sample_rate / 2.0;
  const auto power = stft_power(clip.samples, params.n_fft, params.hop);
  const auto fb = mel_filterbank(params.n_mels, params.n_fft, clip.sample_rate,
                                 params.fmin, fmax);
  Grid mel;
  mel.rows = static_cast<std::size_t>(params.n_mels);
  mel.cols = power.rows;
  mel.values.assign(mel.rows * mel.cols, 0.0);
  for (std::size_t m = 0; m < mel.rows; ++m) {
    const double* w = fb.weights.data() + m * fb.n_bins;
    for (std::size_t t = 0; t < power.rows; ++t) {
      const double* p = power.values.data() + t * power.cols;
      double acc = 0.0;
      for (int k = 0; k < fb.n_bins; ++k) acc += w[k] * p[k];
      mel.values[m * mel.cols + t] = acc;
    }
  }
  return mel;
}

Spectrogram mel_spectrogram(const AudioClip& clip, const MelParams& params) {
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("clip has non-finite samples");
  }
  Spectrogram spec;
  spec.values = mel_power(clip, params);
  spec.song_id = clip.song_id;
  spec.artist = clip.artist;
  spec.clip_index = clip.clip_index;
  spec.sample_rate = clip.sample_rate;
  spec.params = params;
  if (spec.params.fmax <= 0.0) spec.params.fmax = clip.sample_rate / 2.0;

  const double peak =
      *std::max_element(spec.values.values.begin(), spec.values.values.end());
  for (auto& v : spec.values.values) {
    if (peak <= 0.0 || v <= 0.0) {
      v = params.floor_db;
    } else {
      v = std::max(params.floor_db, 10.0 * std::log10(v / peak));
    }
  }
  return spec;
}

SpectrogramSplit grouped_split(const std::vector<Spectrogram>& spectrograms,
                               SplitFractions fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.valid + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
  const double targets[3] = {fractions.train, fractions.valid, fractions.test};

  // artist -> song -> clip count (std::map keeps song order independent of input order)
  std::map<int, std::map<std::string, std::size_t>> songs;
  for (const auto& s : spectrograms) ++songs[s.artist][s.song_id];

  std::map<std::string, int> part_of;
  std::mt19937_64 rng(seed);
  for (const auto& [artist, song_clips] : songs) {
    if (song_clips.size() < 3) {
      throw std::invalid_argument("cannot group-split: artist " +
                                  std::to_string(artist) + " has only " +
                                  std::to_string(song_clips.size()) + " songs");
    }
    std::vector<std::pair<std::string, std::size_t>> order(song_clips.begin(),
                                                           song_clips.end());
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t clips_total = 0;
    for (const auto& [song, n] : order) clips_total += n;

    // Greedy: each song goes to the partition furthest below its clip target,
    // while reserving enough songs to leave no partition empty.
    double assigned[3] = {0, 0, 0};
    int songs_in[3] = {0, 0, 0};
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t remaining = order.size() - i;
      int empty = 0;
      for (int p = 0; p < 3; ++p) empty += songs_in[p] == 0;
      int best = -1;
      double best_deficit = 0.0;
      for (int p = 0; p < 3; ++p) {
        if (remaining <= static_cast<std::size_t>(empty) && songs_in[p] != 0) continue;
        const double deficit = targets[p] * clips_total - assigned[p];
        if (best < 0 || deficit > best_deficit) {
          best = p;
          best_deficit = deficit;
        }
      }
      part_of[order[i].first] = best;
      assigned[best] += static_cast<double>(order[i].second);
      ++songs_in[best];
    }
  }

  SpectrogramSplit split;
  for (const auto& s : spectrograms) {
    const int p = part_of.at(s.song_id);
    (p == 0 ? split.train : p == 1 ? split.valid : split.test).push_back(s);
  }
  return split;
}

std::vector<Spectrogram> load_audio_dataset(const std::filesystem::path& root,
                                            const std::vector<ArtistId>& artists,
                                            const MelParams& params) {
  std::vector<Spectrogram> out;
  for (const auto& artist : artists) {
    const auto dir = root / "artists" / artist.directory / "audio";
    if (!std::filesystem::is_directory(dir)) continue;
    std::set<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".wav")
        files.insert(entry.path());
    for (const auto& file : files) {
      const auto audio = read_wav(file);
      const auto song_id = std::filesystem::relative(file, root).generic_string();
      for (const auto& clip :
           segment_clips(audio.samples, audio.sample_rate, song_id, artist.index)) {
        out.push_back(mel_spectrogram(clip, params));
      }
    }
  }
  return out;
}

}  // namespace lyra

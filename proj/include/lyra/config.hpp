#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "lyra/audio.hpp"
#include "lyra/evaluation.hpp"
#include "lyra/spectro_embed.hpp"
#include "lyra/vae.hpp"

namespace lyra {

struct VaeSection {
  std::size_t word_emb_dim = 300;
  std::size_t encoder_hidden = 100;
  std::size_t latent_dim = 64;
  std::size_t decoder_hidden = 256;
  std::size_t artist_emb_dim = 50;
  double word_dropout = 0.5;
  std::int64_t kl_anneal_steps = 3000;
  std::size_t max_decode_len = 20;
  std::size_t max_line_len = 20;
  int min_count = 2;
  std::int64_t steps = 10000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::string word_vectors;  // optional "token v1 … vd" text file
};

struct EvaluationSection {
  TextCnnConfig text_cnn;
  StyleTrainOptions style;
  double discount = 0.75;
  std::size_t lines_per_artist = 1000;
  double temperature = 1.0;
};

// One experiment: data locations and every hyperparameter, as a JSON file.
// Empty paths fall back to the data root ($LYRA_DATA_DIR, else "data"):
// corpus and audio under <root>/corpus, outputs under <root>/runs.
struct RunConfig {
  std::string corpus_dir;
  std::string audio_dir;
  std::string output_dir;
  ConditioningMode mode = ConditioningMode::AudioFrozen;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t runs = 5;
  std::uint64_t split_seed = 1;

  MelParams audio;
  SpectroCnnConfig spectro;
  SpectroTrainOptions spectro_train;
  VaeSection vae;
  EvaluationSection evaluation;

  std::filesystem::path corpus_path() const;
  std::filesystem::path audio_path() const;
  std::filesystem::path output_path() const;
  void validate() const;
};

std::filesystem::path data_root();

nlohmann::json to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
// Relative paths in the file resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

// Git-style blob hash (SHA-1 of "blob <len>\0" + canonical JSON) of the
// config with output_dir cleared.
std::string config_hash(const RunConfig& config);

}  // namespace lyra

#pragma once

// End-to-end stages. Every stage reads a RunConfig and writes under its
// output directory:
//
//   spectrograms.ckpt             prep-audio: mel spectrogram cache
//   spectro/model.ckpt            train-spectro: classifier weights
//   spectro/report.json                          accuracies and losses
//   artist_embeddings.tsv                        audio-derived artist rows
//   vae/<mode>/seed-<s>.ckpt      train-vae: one checkpoint per seed
//   eval/<mode>/report.json       evaluate: aggregated EvalReport + per-run
//   eval/<mode>/nll.tsv                      mean NLL matrix
//   eval/<mode>/seed-<s>/<artist>.txt        generated lines
//   manifests/<stage>.json        seeds, config hash, outputs, timestamps

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "lyra/checkpoint.hpp"
#include "lyra/config.hpp"
#include "lyra/evaluation.hpp"

namespace lyra {

struct RunManifest {
  std::string stage;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  nlohmann::json config;
  nlohmann::json outputs = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  std::string started;
  std::string finished;
};

nlohmann::json to_json(const RunManifest& manifest);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

// Artist manifest and train/valid/test split shared by all text stages.
struct TextData {
  Corpus corpus;
  CorpusSplit split;
};
TextData load_text_data(const RunConfig& config);

void save_spectrogram_cache(const std::vector<Spectrogram>& specs,
                            const std::filesystem::path& path);
std::vector<Spectrogram> load_spectrogram_cache(const std::filesystem::path& path);

std::size_t prep_audio(const RunConfig& config);
SpectroTrainResult train_spectro(const RunConfig& config);

// Artist rows for `mode`; audio modes read artist_embeddings.tsv.
ArtistEmbeddingMatrix artist_matrix_for(const RunConfig& config, ConditioningMode mode,
                                        const std::vector<ArtistId>& artists,
                                        std::uint64_t seed);
VaeCheckpoint train_vae_run(const RunConfig& config, ConditioningMode mode,
                            std::uint64_t seed, const TextData& data);
std::vector<std::filesystem::path> train_vae_stage(const RunConfig& config,
                                                   ConditioningMode mode);

std::filesystem::path vae_checkpoint_path(const RunConfig& config, ConditioningMode mode,
                                          std::uint64_t seed);

struct EvaluationResult {
  EvalReport aggregate;
  std::vector<EvalReport> runs;
};

// Shared resources for scoring generated lines against a corpus split.
struct EvaluationContext {
  TextData data;
  StyleTrainResult style;
  std::vector<KneserNeyModel> language_models;  // one per artist
  std::vector<std::string> training_lines;
};
EvaluationContext make_evaluation_context(const RunConfig& config);
EvalReport evaluate_checkpoint(const RunConfig& config, const EvaluationContext& context,
                               const VaeCheckpoint& checkpoint,
                               std::vector<std::vector<std::string>>* generated = nullptr);
EvaluationResult evaluate_stage(const RunConfig& config, ConditioningMode mode);

}  // namespace lyra

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lyra/audio.hpp"
#include "lyra/corpus.hpp"
#include "lyra/nn.hpp"
#include "lyra/tensor.hpp"

namespace lyra {

struct SpectroCnnConfig {
  // One 3×3 valid conv + relu + 2×2 max-pool block per entry.
  std::vector<int> channels{8, 16, 32, 64};
  // Fully-connected head; the last entry is the embedding width.
  std::vector<int> head{512, 128, 50};
  double dropout = 0.3;
  int classes = 7;
  int input_height = 0;  // mel bands
  int input_width = 0;   // frames

  int embedding_dim() const { return head.empty() ? 0 : head.back(); }
  // Flattened feature count after the conv blocks; throws if the input
  // shrinks to nothing.
  std::size_t flattened_size() const;
  void validate() const;
};

enum class EmbeddingSource { Audio, Random, OneHot };

std::string to_string(EmbeddingSource source);
EmbeddingSource embedding_source_from_string(const std::string& text);

struct ArtistEmbeddingMatrix {
  std::size_t artists = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // artists × dim
  EmbeddingSource source = EmbeddingSource::Random;

  std::span<const double> row(std::size_t artist) const {
    return {values.data() + artist * dim, dim};
  }
  static ArtistEmbeddingMatrix one_hot(std::size_t artists);
  static ArtistEmbeddingMatrix random(std::size_t artists, std::size_t dim,
                                      Rng& rng);
};

// Artist name followed by `dim` tab-separated decimals per row.
void write_embedding_tsv(const ArtistEmbeddingMatrix& matrix,
                         const std::vector<ArtistId>& artists,
                         const std::filesystem::path& path);
// Rows are matched to `artists` by name; every artist must be present.
ArtistEmbeddingMatrix read_embedding_tsv(const std::filesystem::path& path,
                                         const std::vector<ArtistId>& artists);

// dB spectrogram rescaled to [0, 1] as a [1 × mels × frames] tensor.
Tensor spectrogram_input(const Spectrogram& spec);

class SpectroCnn {
 public:
  struct Output {
    Tensor logits;       // batch × classes
    Tensor penultimate;  // batch × embedding_dim, post-activation
  };

  SpectroCnn() = default;
  SpectroCnn(SpectroCnnConfig config, Rng& rng);

  // Dropout is applied only when `rng` is non-null.
  Output forward(const std::vector<Tensor>& inputs, Rng* rng = nullptr) const;
  Output forward(const std::vector<const Spectrogram*>& batch,
                 Rng* rng = nullptr) const;
  int predict(const Spectrogram& spec) const;

  const SpectroCnnConfig& config() const { return config_; }
  NamedTensors parameters() const;

 private:
  SpectroCnnConfig config_;
  std::vector<Tensor> conv_weights_;
  std::vector<Tensor> conv_biases_;
  std::vector<Linear> head_;
  Linear output_;
};

struct SpectroTrainOptions {
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct SpectroTrainResult {
  SpectroCnn model;
  double initial_loss = 0.0;            // inference mode, training split
  std::vector<double> epoch_losses;     // running mean over each epoch's batches
  std::vector<double> train_losses;     // inference mode, after each epoch
  std::vector<double> valid_accuracies;
  int best_epoch = 0;
  double test_accuracy = 0.0;
};

double spectro_accuracy(const SpectroCnn& model,
                        const std::vector<Spectrogram>& data);
double spectro_mean_loss(const SpectroCnn& model,
                         const std::vector<Spectrogram>& data);

// Trains from scratch, keeping the parameters of the epoch with the best
// validation accuracy; the test split is scored once at the end.
SpectroTrainResult train_spectro_classifier(const SpectrogramSplit& data,
                                            SpectroCnnConfig config,
                                            const SpectroTrainOptions& options);

// Row a is the mean penultimate vector over artist a's clips.
ArtistEmbeddingMatrix extract_artist_embeddings(
    const SpectroCnn& model, const std::vector<Spectrogram>& train,
    std::size_t num_artists);

}  // namespace lyra

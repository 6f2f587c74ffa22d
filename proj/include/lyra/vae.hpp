#pragma once

// Artist-conditioned sentence VAE.
//
// Encoder: bidirectional LSTM over a line's content tokens; its final
// forward and backward hidden states are concatenated and mapped linearly to
// the mean and log-variance of a diagonal Gaussian posterior. A latent sample
// initialises the decoder LSTM state, and the artist's embedding row is
// concatenated to the word embedding at every decoder step.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lyra/corpus.hpp"
#include "lyra/nn.hpp"
#include "lyra/optim.hpp"
#include "lyra/spectro_embed.hpp"
#include "lyra/tensor.hpp"

namespace lyra {

enum class ConditioningMode {
  OneHot,
  RandomTrainable,
  RandomFrozen,
  AudioTrainable,
  AudioFrozen,
};

// "onehot", "randT", "randNT", "audioT", "audioNT"
std::string mode_name(ConditioningMode mode);
ConditioningMode parse_mode(const std::string& name);
const std::vector<ConditioningMode>& all_modes();
bool is_frozen(ConditioningMode mode);
EmbeddingSource required_source(ConditioningMode mode);

struct AnnealSchedule {
  std::int64_t total_steps = 3000;
};

// Linear ramp min(step / total_steps, 1).
double kl_weight(std::int64_t step, const AnnealSchedule& schedule);

struct VaeConfig {
  std::size_t vocab_size = 0;
  std::size_t num_artists = 0;
  std::size_t word_emb_dim = 300;
  std::size_t encoder_hidden = 100;
  std::size_t latent_dim = 64;
  std::size_t decoder_hidden = 256;
  std::size_t artist_emb_dim = 50;  // K for one-hot conditioning
  double word_dropout = 0.5;
  std::int64_t kl_anneal_steps = 3000;
  std::size_t max_decode_len = 20;
  ConditioningMode mode = ConditioningMode::AudioFrozen;

  void validate() const;
};

struct Posterior {
  Tensor mu;      // batch × latent
  Tensor logvar;  // batch × latent
};

// Decoder inputs and targets for a batch, padded to a common length.
struct DecoderBatch {
  std::size_t steps = 0;
  std::vector<std::vector<int>> inputs;   // [step][line]: BOS w1 … wn, PAD after
  std::vector<std::vector<int>> targets;  // [step][line]: w1 … wn EOS, ignore after
  std::size_t target_tokens = 0;
};

class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(VaeConfig config, const ArtistEmbeddingMatrix& artists, Rng& rng);

  const VaeConfig& config() const { return config_; }

  Posterior encode(const std::vector<EncodedLine>& batch) const;
  // Latent rows → decoder initial (h0, c0).
  LstmState initial_state(const Tensor& z) const;
  // Per-step logits [batch × V] under teacher forcing.
  std::vector<Tensor> decode_teacher_forced(const Tensor& z,
                                            const std::vector<int>& artists,
                                            const DecoderBatch& batch) const;
  // Single-line form: logits [T × V].
  Tensor decode_teacher_forced(const Tensor& z, int artist,
                               const std::vector<int>& inputs) const;
  Tensor artist_rows(const std::vector<int>& artists) const;
  Tensor decoder_step_logits(const Tensor& input_ids_embedded,
                             const Tensor& artist_rows, LstmState& state) const;

  NamedTensors parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  const Tensor& artist_embeddings() const { return artist_table_; }
  Tensor& word_embeddings() { return word_embedding_; }
  const Tensor& word_embeddings() const { return word_embedding_; }
  EmbeddingSource artist_source() const { return artist_source_; }

  // Rounds every parameter to the nearest 32-bit float, the precision
  // checkpoints store.
  void round_to_float();

 private:
  void check_artist(int artist) const;

  VaeConfig config_;
  EmbeddingSource artist_source_ = EmbeddingSource::Random;
  Tensor word_embedding_;
  LstmCell encoder_fwd_;
  LstmCell encoder_bwd_;
  Linear posterior_mu_;
  Linear posterior_logvar_;
  Linear latent_to_state_;
  LstmCell decoder_;
  Linear output_;
  Tensor artist_table_;
};

// z = mu + exp(logvar / 2) ⊙ eps
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps);
// ½ Σ (mu² + exp(logvar) − 1 − logvar) over every entry.
Tensor kl_divergence(const Tensor& mu, const Tensor& logvar);
double kl_divergence(std::span<const double> mu, std::span<const double> logvar);

// Replaces each non-BOS token by UNK with probability p.
std::vector<int> word_dropout(const std::vector<int>& ids, double p, Rng& rng);

DecoderBatch make_decoder_batch(const std::vector<EncodedLine>& lines,
                                const std::vector<std::vector<int>>& inputs);

struct VaeLoss {
  Tensor total;
  double recon = 0.0;  // summed over tokens, averaged over lines
  double kl = 0.0;     // averaged over lines
  std::size_t target_tokens = 0;
};

// Deterministic negative ELBO given fixed noise and decoder inputs.
VaeLoss vae_loss(const VaeModel& model, const std::vector<EncodedLine>& batch,
                 const std::vector<double>& eps,
                 const std::vector<std::vector<int>>& decoder_inputs,
                 double kl_coefficient);

struct StepStats {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double kl_weight = 0.0;
};

StepStats training_step(const std::vector<EncodedLine>& batch, VaeModel& model,
                        Adam& optimizer, std::int64_t step, Rng& rng);

// Per-token reconstruction NLL with z = mu and no word dropout.
double reconstruction_nll_per_token(const VaeModel& model,
                                    const std::vector<EncodedLine>& lines);

struct VaeTrainOptions {
  std::int64_t steps = 10000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct VaeTrainResult {
  std::vector<StepStats> history;
};

class VaeTrainer {
 public:
  VaeTrainer(VaeModel& model, std::vector<EncodedLine> lines,
             const VaeTrainOptions& options);
  StepStats step();
  std::int64_t steps_taken() const { return step_; }

 private:
  VaeModel& model_;
  std::vector<EncodedLine> lines_;
  VaeTrainOptions options_;
  Adam adam_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t step_ = 0;
};

VaeTrainResult train_vae(VaeModel& model, const std::vector<EncodedLine>& lines,
                         const VaeTrainOptions& options);

struct GenerateOptions {
  std::size_t count = 1;
  double temperature = 1.0;
  std::size_t max_len = 20;
  std::uint64_t seed = 0;
};

// Decodes the given latent rows token by token; temperature 0 is argmax.
std::vector<std::vector<int>> decode_from_latent(const VaeModel& model,
                                                 const Tensor& z, int artist,
                                                 double temperature,
                                                 std::size_t max_len, Rng& rng);
// Samples z ~ N(0, I) per line and decodes; returns content ids.
std::vector<std::vector<int>> sample_ids(const VaeModel& model, int artist,
                                         const GenerateOptions& options);
std::vector<std::string> generate(const VaeModel& model, const Vocabulary& vocab,
                                  int artist, const GenerateOptions& options);

// Loads "token v1 … vd" rows into the word embedding table for tokens that are
// in `vocab`; returns how many rows were set.
std::size_t load_word_embeddings(const std::filesystem::path& path,
                                 const Vocabulary& vocab, VaeModel& model);

}  // namespace lyra

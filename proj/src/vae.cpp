#include "lyra/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace lyra {

std::string mode_name(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::OneHot: return "onehot";
    case ConditioningMode::RandomTrainable: return "randT";
    case ConditioningMode::RandomFrozen: return "randNT";
    case ConditioningMode::AudioTrainable: return "audioT";
    case ConditioningMode::AudioFrozen: return "audioNT";
  }
  return "audioNT";
}

ConditioningMode parse_mode(const std::string& name) {
  for (auto mode : all_modes())
    if (mode_name(mode) == name) return mode;
  throw std::invalid_argument("unknown conditioning mode: " + name +
                              " (expected onehot|randT|randNT|audioT|audioNT)");
}

const std::vector<ConditioningMode>& all_modes() {
  static const std::vector<ConditioningMode> modes = {
      ConditioningMode::OneHot, ConditioningMode::RandomTrainable,
      ConditioningMode::RandomFrozen, ConditioningMode::AudioTrainable,
      ConditioningMode::AudioFrozen};
  return modes;
}

bool is_frozen(ConditioningMode mode) {
  return mode == ConditioningMode::OneHot ||
         mode == ConditioningMode::RandomFrozen ||
         mode == ConditioningMode::AudioFrozen;
}

EmbeddingSource required_source(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::OneHot: return EmbeddingSource::OneHot;
    case ConditioningMode::RandomTrainable:
    case ConditioningMode::RandomFrozen: return EmbeddingSource::Random;
    default: return EmbeddingSource::Audio;
  }
}

double kl_weight(std::int64_t step, const AnnealSchedule& schedule) {
  if (step <= 0) return 0.0;
  if (step >= schedule.total_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(schedule.total_steps);
}

void VaeConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecials))
    throw std::invalid_argument("vocabulary has no content tokens");
  if (num_artists < 1) throw std::invalid_argument("no artists");
  if (word_emb_dim < 1 || encoder_hidden < 1 || latent_dim < 1 ||
      decoder_hidden < 1 || artist_emb_dim < 1 || max_decode_len < 1)
    throw std::invalid_argument("VAE dimensions must be >= 1");
  if (word_dropout < 0.0 || word_dropout > 1.0)
    throw std::invalid_argument("word_dropout must be in [0,1]");
  if (kl_anneal_steps < 1) throw std::invalid_argument("kl_anneal_steps must be >= 1");
  if (mode == ConditioningMode::OneHot && artist_emb_dim != num_artists)
    throw std::invalid_argument("one-hot conditioning needs artist_emb_dim == K");
}

VaeModel::VaeModel(VaeConfig config, const ArtistEmbeddingMatrix& artists,
                   Rng& rng)
    : config_(config) {
  config_.validate();
  if (artists.source != required_source(config_.mode)) {
    if (required_source(config_.mode) == EmbeddingSource::Audio)
      throw std::invalid_argument("audio embeddings required");
    throw std::invalid_argument("mode " + mode_name(config_.mode) +
                                " cannot use " + to_string(artists.source) +
                                " artist embeddings");
  }
  if (artists.artists != config_.num_artists || artists.dim != config_.artist_emb_dim) {
    throw std::invalid_argument(
        "artist embedding matrix is " + std::to_string(artists.artists) + "x" +
        std::to_string(artists.dim) + ", config expects " +
        std::to_string(config_.num_artists) + "x" +
        std::to_string(config_.artist_emb_dim));
  }
  artist_source_ = artists.source;

  const auto e = config_.word_emb_dim, h = config_.encoder_hidden;
  const auto l = config_.latent_dim, d = config_.decoder_hidden;
  word_embedding_ = Tensor::uniform({config_.vocab_size, e}, 0.1, rng, true);
  encoder_fwd_ = LstmCell(e, h, rng);
  encoder_bwd_ = LstmCell(e, h, rng);
  posterior_mu_ = Linear(2 * h, l, rng);
  posterior_logvar_ = Linear(2 * h, l, rng);
  latent_to_state_ = Linear(l, 2 * d, rng);
  decoder_ = LstmCell(e + config_.artist_emb_dim, d, rng);
  output_ = Linear(d, config_.vocab_size, rng);
  artist_table_ = Tensor::from({artists.artists, artists.dim}, artists.values,
                               !is_frozen(config_.mode));
}

void VaeModel::check_artist(int artist) const {
  if (artist < 0 || static_cast<std::size_t>(artist) >= config_.num_artists) {
    throw std::out_of_range("invalid artist " + std::to_string(artist));
  }
}

Posterior VaeModel::encode(const std::vector<EncodedLine>& batch) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::size_t longest = 0;
  for (const auto& line : batch) {
    if (line.length == 0) throw std::invalid_argument("empty line");
    longest = std::max(longest, line.length);
  }
  const std::size_t b = batch.size();
  std::vector<std::vector<int>> ids(longest, std::vector<int>(b, Vocabulary::kPad));
  std::vector<std::vector<double>> live(longest, std::vector<double>(b, 0.0));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < batch[i].length; ++t) {
      ids[t][i] = batch[i].ids[t + 1];
      live[t][i] = 1.0;
    }

  std::vector<Tensor> embedded;
  embedded.reserve(longest);
  for (std::size_t t = 0; t < longest; ++t)
    embedded.push_back(embedding_lookup(word_embedding_, ids[t]));

  auto run = [&](const LstmCell& cell, bool reverse) {
    LstmState state = cell.zero_state(b);
    for (std::size_t k = 0; k < longest; ++k) {
      const std::size_t t = reverse ? longest - 1 - k : k;
      LstmState next = cell.step(embedded[t], state);
      state.h = row_blend(live[t], next.h, state.h);
      state.c = row_blend(live[t], next.c, state.c);
    }
    return state.h;
  };
  Tensor summary = concat({run(encoder_fwd_, false), run(encoder_bwd_, true)});
  return {posterior_mu_(summary), posterior_logvar_(summary)};
}

LstmState VaeModel::initial_state(const Tensor& z) const {
  Tensor both = latent_to_state_(z);
  const auto d = config_.decoder_hidden;
  return {slice_cols(both, 0, d), slice_cols(both, d, 2 * d)};
}

Tensor VaeModel::artist_rows(const std::vector<int>& artists) const {
  for (int a : artists) check_artist(a);
  return embedding_lookup(artist_table_, artists);
}

Tensor VaeModel::decoder_step_logits(const Tensor& embedded,
                                     const Tensor& artist_rows,
                                     LstmState& state) const {
  state = decoder_.step(concat({embedded, artist_rows}), state);
  return output_(state.h);
}

std::vector<Tensor> VaeModel::decode_teacher_forced(
    const Tensor& z, const std::vector<int>& artists,
    const DecoderBatch& batch) const {
  if (z.rows() != artists.size()) {
    throw std::invalid_argument("latent rows do not match artist count");
  }
  Tensor conditioning = artist_rows(artists);
  LstmState state = initial_state(z);
  std::vector<Tensor> logits;
  logits.reserve(batch.steps);
  for (std::size_t t = 0; t < batch.steps; ++t) {
    logits.push_back(decoder_step_logits(
        embedding_lookup(word_embedding_, batch.inputs[t]), conditioning, state));
  }
  return logits;
}

Tensor VaeModel::decode_teacher_forced(const Tensor& z, int artist,
                                       const std::vector<int>& inputs) const {
  DecoderBatch batch;
  batch.steps = inputs.size();
  for (int id : inputs) batch.inputs.push_back({id});
  return concat_rows(decode_teacher_forced(z, {artist}, batch));
}

NamedTensors VaeModel::parameters() const {
  NamedTensors out;
  out.emplace_back("word_embedding", word_embedding_);
  encoder_fwd_.collect("encoder_fwd", out);
  encoder_bwd_.collect("encoder_bwd", out);
  posterior_mu_.collect("posterior_mu", out);
  posterior_logvar_.collect("posterior_logvar", out);
  latent_to_state_.collect("latent_to_state", out);
  decoder_.collect("decoder", out);
  output_.collect("output", out);
  out.emplace_back("artist_embedding", artist_table_);
  return out;
}

std::vector<Tensor> VaeModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

void VaeModel::round_to_float() {
  for (auto& [name, t] : parameters())
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  return add(mu, mul(exp(scale(logvar, 0.5)), eps));
}

Tensor kl_divergence(const Tensor& mu, const Tensor& logvar) {
  Tensor terms = add(mul(mu, mu), sub(exp(logvar), logvar));
  const double entries = static_cast<double>(mu.size());
  return scale(sub(sum(terms), Tensor::scalar(entries)), 0.5);
}

double kl_divergence(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw std::invalid_argument("kl: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    acc += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * acc;
}

std::vector<int> word_dropout(const std::vector<int>& ids, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("word dropout p must be in [0,1]");
  std::vector<int> out(ids);
  if (p == 0.0) return out;
  std::bernoulli_distribution drop(p);
  for (auto& id : out)
    if (id != Vocabulary::kBos && drop(rng)) id = Vocabulary::kUnk;
  return out;
}

DecoderBatch make_decoder_batch(const std::vector<EncodedLine>& lines,
                                const std::vector<std::vector<int>>& inputs) {
  if (inputs.size() != lines.size()) {
    throw std::invalid_argument("decoder inputs do not match batch size");
  }
  DecoderBatch batch;
  for (const auto& line : lines) batch.steps = std::max(batch.steps, line.ids.size() - 1);
  const std::size_t b = lines.size();
  batch.inputs.assign(batch.steps, std::vector<int>(b, Vocabulary::kPad));
  batch.targets.assign(batch.steps, std::vector<int>(b, kIgnoreLabel));
  for (std::size_t i = 0; i < b; ++i) {
    const auto& ids = lines[i].ids;
    if (inputs[i].size() != ids.size() - 1) {
      throw std::invalid_argument("decoder input length mismatch");
    }
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      batch.inputs[t][i] = inputs[i][t];
      batch.targets[t][i] = ids[t + 1];
      ++batch.target_tokens;
    }
  }
  return batch;
}

namespace {

std::vector<std::vector<int>> teacher_inputs(const std::vector<EncodedLine>& lines) {
  std::vector<std::vector<int>> out;
  for (const auto& line : lines) out.emplace_back(line.ids.begin(), line.ids.end() - 1);
  return out;
}

std::vector<int> artists_of(const std::vector<EncodedLine>& lines) {
  std::vector<int> out;
  for (const auto& line : lines) out.push_back(line.artist);
  return out;
}

}  // namespace

VaeLoss vae_loss(const VaeModel& model, const std::vector<EncodedLine>& batch,
                 const std::vector<double>& eps,
                 const std::vector<std::vector<int>>& decoder_inputs,
                 double kl_coefficient) {
  const std::size_t b = batch.size();
  const auto latent = model.config().latent_dim;
  if (eps.size() != b * latent) throw std::invalid_argument("noise size mismatch");

  Posterior post = model.encode(batch);
  Tensor z = reparameterize(post.mu, post.logvar, Tensor::from({b, latent}, eps));
  DecoderBatch dec = make_decoder_batch(batch, decoder_inputs);
  auto logits = model.decode_teacher_forced(z, artists_of(batch), dec);

  std::vector<Tensor> per_step;
  per_step.reserve(dec.steps);
  for (std::size_t t = 0; t < dec.steps; ++t)
    per_step.push_back(softmax_cross_entropy(logits[t], dec.targets[t],
                                             static_cast<double>(b)));
  Tensor recon = per_step.front();
  for (std::size_t t = 1; t < per_step.size(); ++t) recon = add(recon, per_step[t]);
  Tensor kl = scale(kl_divergence(post.mu, post.logvar), 1.0 / static_cast<double>(b));

  VaeLoss out;
  out.total = add(recon, scale(kl, kl_coefficient));
  out.recon = recon.item();
  out.kl = kl.item();
  out.target_tokens = dec.target_tokens;
  return out;
}

StepStats training_step(const std::vector<EncodedLine>& batch, VaeModel& model,
                        Adam& optimizer, std::int64_t step, Rng& rng) {
  if (step < 0) throw std::invalid_argument("step must be >= 0");
  const auto& cfg = model.config();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(batch.size() * cfg.latent_dim);
  for (auto& e : eps) e = normal(rng);
  std::vector<std::vector<int>> inputs;
  for (auto& seq : teacher_inputs(batch))
    inputs.push_back(word_dropout(seq, cfg.word_dropout, rng));

  const double weight = kl_weight(step, AnnealSchedule{cfg.kl_anneal_steps});
  VaeLoss loss = vae_loss(model, batch, eps, inputs, weight);
  backward(loss.total);
  optimizer.step();
  return {loss.recon, loss.kl, loss.total.item(), weight};
}

double reconstruction_nll_per_token(const VaeModel& model,
                                    const std::vector<EncodedLine>& lines) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < lines.size(); start += kChunk) {
    std::vector<EncodedLine> chunk(
        lines.begin() + static_cast<std::ptrdiff_t>(start),
        lines.begin() + static_cast<std::ptrdiff_t>(std::min(lines.size(), start + kChunk)));
    Posterior post = model.encode(chunk);
    DecoderBatch dec = make_decoder_batch(chunk, teacher_inputs(chunk));
    auto logits = model.decode_teacher_forced(post.mu, artists_of(chunk), dec);
    for (std::size_t t = 0; t < dec.steps; ++t)
      total += softmax_cross_entropy(logits[t], dec.targets[t], 1.0).item();
    tokens += dec.target_tokens;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

VaeTrainer::VaeTrainer(VaeModel& model, std::vector<EncodedLine> lines,
                       const VaeTrainOptions& options)
    : model_(model),
      lines_(std::move(lines)),
      options_(options),
      adam_(model.trainable_parameters(), AdamOptions{.lr = options.lr}),
      rng_(options.seed) {
  if (lines_.empty()) throw std::invalid_argument("no training lines");
  order_.resize(lines_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

StepStats VaeTrainer::step() {
  std::vector<EncodedLine> batch;
  const std::size_t size = std::min(options_.batch_size, lines_.size());
  while (batch.size() < size) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(lines_[order_[cursor_++]]);
  }
  return training_step(batch, model_, adam_, step_++, rng_);
}

VaeTrainResult train_vae(VaeModel& model, const std::vector<EncodedLine>& lines,
                         const VaeTrainOptions& options) {
  VaeTrainer trainer(model, lines, options);
  VaeTrainResult result;
  result.history.reserve(static_cast<std::size_t>(options.steps));
  for (std::int64_t s = 0; s < options.steps; ++s) result.history.push_back(trainer.step());
  return result;
}

std::vector<std::vector<int>> decode_from_latent(const VaeModel& model,
                                                 const Tensor& z, int artist,
                                                 double temperature,
                                                 std::size_t max_len, Rng& rng) {
  if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
  NoGradGuard no_grad;
  const std::size_t n = z.rows();
  const std::size_t vocab = model.config().vocab_size;
  Tensor conditioning = model.artist_rows(std::vector<int>(n, artist));
  LstmState state = model.initial_state(z);

  std::vector<std::vector<int>> lines(n);
  std::vector<bool> done(n, false);
  std::vector<int> previous(n, Vocabulary::kBos);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> probs(vocab);

  for (std::size_t t = 0; t <= max_len; ++t) {
    Tensor logits = model.decoder_step_logits(
        embedding_lookup(model.word_embeddings(), previous), conditioning, state);
    bool all_done = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (done[i]) continue;
      const double* row = logits.data().data() + i * vocab;
      int chosen = Vocabulary::kEos;
      if (t < max_len) {
        // PAD, UNK and BOS are never emitted.
        auto allowed = [](std::size_t k) {
          return k == static_cast<std::size_t>(Vocabulary::kEos) ||
                 k >= static_cast<std::size_t>(Vocabulary::kNumSpecials);
        };
        if (temperature == 0.0) {
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t k = 0; k < vocab; ++k)
            if (allowed(k) && row[k] > best) {
              best = row[k];
              chosen = static_cast<int>(k);
            }
        } else {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t k = 0; k < vocab; ++k)
            if (allowed(k)) mx = std::max(mx, row[k] / temperature);
          double z_sum = 0.0;
          for (std::size_t k = 0; k < vocab; ++k) {
            probs[k] = allowed(k) ? std::exp(row[k] / temperature - mx) : 0.0;
            z_sum += probs[k];
          }
          double u = unit(rng) * z_sum;
          for (std::size_t k = 0; k < vocab; ++k) {
            if (probs[k] == 0.0) continue;
            chosen = static_cast<int>(k);
            u -= probs[k];
            if (u < 0.0) break;
          }
        }
      }
      if (chosen == Vocabulary::kEos) {
        done[i] = true;
      } else {
        lines[i].push_back(chosen);
        previous[i] = chosen;
        all_done = false;
      }
    }
    if (all_done) break;
  }
  return lines;
}

std::vector<std::vector<int>> sample_ids(const VaeModel& model, int artist,
                                         const GenerateOptions& options) {
  if (options.count < 1) throw std::invalid_argument("count must be >= 1");
  if (artist < 0 || static_cast<std::size_t>(artist) >= model.config().num_artists)
    throw std::out_of_range("invalid artist " + std::to_string(artist));
  Rng rng(options.seed);
  const auto latent = model.config().latent_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(options.count * latent);
  for (auto& v : z) v = normal(rng);
  return decode_from_latent(model, Tensor::from({options.count, latent}, std::move(z)),
                            artist, options.temperature, options.max_len, rng);
}

std::vector<std::string> generate(const VaeModel& model, const Vocabulary& vocab,
                                  int artist, const GenerateOptions& options) {
  std::vector<std::string> out;
  for (const auto& ids : sample_ids(model, artist, options))
    out.push_back(decode_ids(ids, vocab));
  return out;
}

std::size_t load_word_embeddings(const std::filesystem::path& path,
                                 const Vocabulary& vocab, VaeModel& model) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings " + path.string());
  const auto dim = model.config().word_emb_dim;
  auto table = model.word_embeddings().data();
  std::size_t loaded = 0;
  for (std::string line; std::getline(in, line);) {
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token) || !vocab.contains(token)) continue;
    std::vector<double> row;
    for (double v; fields >> v;) row.push_back(v);
    if (row.size() != dim) {
      throw std::runtime_error("embedding for '" + token + "' has " +
                               std::to_string(row.size()) + " values, expected " +
                               std::to_string(dim));
    }
    std::copy(row.begin(), row.end(),
              table.begin() + static_cast<std::ptrdiff_t>(vocab.id(token) * dim));
    ++loaded;
  }
  return loaded;
}

}  // namespace lyra

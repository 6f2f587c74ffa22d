#include "lyra/spectro_embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lyra/optim.hpp"

namespace lyra {

std::size_t SpectroCnnConfig::flattened_size() const {
  long h = input_height, w = input_width;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    h = (h - 2) / 2;
    w = (w - 2) / 2;
    if (h < 1 || w < 1) {
      throw std::invalid_argument(
          "spectrogram " + std::to_string(input_height) + "x" +
          std::to_string(input_width) + " is too small for " +
          std::to_string(channels.size()) + " conv blocks");
    }
  }
  const long c = channels.empty() ? 1 : channels.back();
  return static_cast<std::size_t>(c * h * w);
}

void SpectroCnnConfig::validate() const {
  if (head.empty()) throw std::invalid_argument("spectro head must be nonempty");
  for (int v : channels)
    if (v < 1) throw std::invalid_argument("channel counts must be positive");
  for (int v : head)
    if (v < 1) throw std::invalid_argument("head sizes must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("dropout must be in [0,1)");
  if (classes < 2) throw std::invalid_argument("need at least two classes");
  flattened_size();
}

std::string to_string(EmbeddingSource source) {
  switch (source) {
    case EmbeddingSource::Audio: return "audio";
    case EmbeddingSource::Random: return "random";
    case EmbeddingSource::OneHot: return "onehot";
  }
  return "random";
}

EmbeddingSource embedding_source_from_string(const std::string& text) {
  if (text == "audio") return EmbeddingSource::Audio;
  if (text == "random") return EmbeddingSource::Random;
  if (text == "onehot") return EmbeddingSource::OneHot;
  throw std::invalid_argument("unknown embedding source: " + text);
}

ArtistEmbeddingMatrix ArtistEmbeddingMatrix::one_hot(std::size_t artists) {
  ArtistEmbeddingMatrix m;
  m.artists = m.dim = artists;
  m.values.assign(artists * artists, 0.0);
  for (std::size_t i = 0; i < artists; ++i) m.values[i * artists + i] = 1.0;
  m.source = EmbeddingSource::OneHot;
  return m;
}

ArtistEmbeddingMatrix ArtistEmbeddingMatrix::random(std::size_t artists,
                                                    std::size_t dim, Rng& rng) {
  ArtistEmbeddingMatrix m;
  m.artists = artists;
  m.dim = dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  m.values.resize(artists * dim);
  for (auto& v : m.values) v = normal(rng);
  m.source = EmbeddingSource::Random;
  return m;
}

void write_embedding_tsv(const ArtistEmbeddingMatrix& matrix,
                         const std::vector<ArtistId>& artists,
                         const std::filesystem::path& path) {
  if (artists.size() != matrix.artists) {
    throw std::invalid_argument("embedding rows do not match artist count");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t a = 0; a < matrix.artists; ++a) {
    out << artists[a].name;
    for (double v : matrix.row(a)) out << '\t' << v;
    out << '\n';
  }
}

ArtistEmbeddingMatrix read_embedding_tsv(const std::filesystem::path& path,
                                         const std::vector<ArtistId>& artists) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("audio embeddings required: cannot open " + path.string());
  std::map<std::string, std::vector<double>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name;
    std::getline(fields, name, '\t');
    std::vector<double> values;
    for (std::string cell; std::getline(fields, cell, '\t');)
      values.push_back(std::stod(cell));
    rows[name] = std::move(values);
  }
  ArtistEmbeddingMatrix m;
  m.artists = artists.size();
  m.source = EmbeddingSource::Audio;
  for (const auto& artist : artists) {
    auto it = rows.find(artist.name);
    if (it == rows.end()) {
      throw std::runtime_error("embedding file lacks artist " + artist.name);
    }
    if (m.dim == 0) m.dim = it->second.size();
    if (it->second.size() != m.dim || m.dim == 0) {
      throw std::runtime_error("ragged embedding file " + path.string());
    }
    m.values.insert(m.values.end(), it->second.begin(), it->second.end());
  }
  return m;
}

Tensor spectrogram_input(const Spectrogram& spec) {
  const double floor_db = spec.params.floor_db;
  std::vector<double> v(spec.values.values.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = (spec.values.values[i] - floor_db) / -floor_db;
  return Tensor::from({1, spec.n_mels(), spec.n_frames()}, std::move(v));
}

SpectroCnn::SpectroCnn(SpectroCnnConfig config, Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  std::size_t in_ch = 1;
  for (int out_ch : config_.channels) {
    const double bound = std::sqrt(6.0 / double(in_ch * 9));
    conv_weights_.push_back(Tensor::uniform(
        {static_cast<std::size_t>(out_ch), in_ch, 3, 3}, bound, rng, true));
    conv_biases_.push_back(Tensor::zeros({static_cast<std::size_t>(out_ch)}, true));
    if (conv_weights_.size() == 1) {
      // inputs live in [0,1]; start the first block as if they were centred
      const auto w = conv_weights_.back().data();
      auto b = conv_biases_.back().data();
      for (std::size_t o = 0; o < b.size(); ++o) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 9; ++k) sum += w[o * 9 + k];
        b[o] = -0.5 * sum;
      }
    }
    in_ch = static_cast<std::size_t>(out_ch);
  }
  std::size_t width = config_.flattened_size();
  for (int h : config_.head) {
    head_.emplace_back(width, static_cast<std::size_t>(h), rng);
    width = static_cast<std::size_t>(h);
  }
  output_ = Linear(width, static_cast<std::size_t>(config_.classes), rng);
}

SpectroCnn::Output SpectroCnn::forward(const std::vector<Tensor>& inputs,
                                       Rng* rng) const {
  if (inputs.empty()) throw std::invalid_argument("empty batch");
  std::vector<Tensor> flat;
  flat.reserve(inputs.size());
  for (const auto& x0 : inputs) {
    if (x0.shape() != Shape{1, std::size_t(config_.input_height),
                            std::size_t(config_.input_width)}) {
      throw std::invalid_argument(
          "spectrogram shape " + shape_string(x0.shape()) +
          " does not match classifier input [1x" +
          std::to_string(config_.input_height) + "x" +
          std::to_string(config_.input_width) + "]");
    }
    Tensor x = x0;
    for (std::size_t b = 0; b < conv_weights_.size(); ++b)
      x = max_pool2d(relu(conv2d(x, conv_weights_[b], conv_biases_[b])));
    flat.push_back(reshape(x, {1, x.size()}));
  }
  Tensor h = concat_rows(flat);
  Tensor penultimate;
  for (std::size_t i = 0; i < head_.size(); ++i) {
    h = relu(head_[i](h));
    if (i + 1 == head_.size()) penultimate = h;
    if (rng && config_.dropout > 0.0)
      h = dropout(h, make_dropout_mask(h.size(), config_.dropout, *rng));
  }
  return {output_(h), penultimate};
}

SpectroCnn::Output SpectroCnn::forward(
    const std::vector<const Spectrogram*>& batch, Rng* rng) const {
  std::vector<Tensor> inputs;
  inputs.reserve(batch.size());
  for (const auto* s : batch) inputs.push_back(spectrogram_input(*s));
  return forward(inputs, rng);
}

int SpectroCnn::predict(const Spectrogram& spec) const {
  NoGradGuard no_grad;
  const auto out = forward(std::vector<const Spectrogram*>{&spec});
  const auto logits = out.logits.data();
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                          logits.begin());
}

NamedTensors SpectroCnn::parameters() const {
  NamedTensors out;
  for (std::size_t b = 0; b < conv_weights_.size(); ++b) {
    out.emplace_back("conv" + std::to_string(b) + ".weight", conv_weights_[b]);
    out.emplace_back("conv" + std::to_string(b) + ".bias", conv_biases_[b]);
  }
  for (std::size_t i = 0; i < head_.size(); ++i)
    head_[i].collect("fc" + std::to_string(i), out);
  output_.collect("out", out);
  return out;
}

double spectro_accuracy(const SpectroCnn& model,
                        const std::vector<Spectrogram>& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) correct += model.predict(s) == s.artist;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double spectro_mean_loss(const SpectroCnn& model,
                         const std::vector<Spectrogram>& data) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& s : data) {
    const auto out = model.forward(std::vector<const Spectrogram*>{&s});
    const int label = s.artist;
    total += softmax_cross_entropy(out.logits, std::span<const int>(&label, 1)).item();
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

SpectroTrainResult train_spectro_classifier(const SpectrogramSplit& data,
                                            SpectroCnnConfig config,
                                            const SpectroTrainOptions& options) {
  if (data.train.empty()) throw std::invalid_argument("empty training split");
  std::set<int> present;
  for (const auto& s : data.train) {
    if (s.artist < 0 || s.artist >= config.classes) {
      throw std::invalid_argument("spectrogram artist " + std::to_string(s.artist) +
                                  " outside classifier classes");
    }
    present.insert(s.artist);
  }
  for (int a = 0; a < config.classes; ++a) {
    if (!present.count(a)) {
      throw std::invalid_argument("artist " + std::to_string(a) +
                                  " absent from the training split");
    }
  }
  if (config.input_height == 0) {
    config.input_height = static_cast<int>(data.train.front().n_mels());
    config.input_width = static_cast<int>(data.train.front().n_frames());
  }

  Rng rng(options.seed);
  SpectroTrainResult result;
  result.model = SpectroCnn(config, rng);
  std::vector<Tensor> params;
  for (auto& [name, t] : result.model.parameters()) params.push_back(t);
  Adam adam(params, AdamOptions{.lr = options.lr});

  result.initial_loss = spectro_mean_loss(result.model, data.train);

  std::vector<std::vector<double>> best;
  double best_valid = -1.0;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<const Spectrogram*> items;
      std::vector<int> labels;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        items.push_back(&data.train[order[k]]);
        labels.push_back(data.train[order[k]].artist);
      }
      const auto out = result.model.forward(items, &rng);
      Tensor loss = softmax_cross_entropy(out.logits, labels);
      backward(loss);
      adam.step();
      epoch_loss += loss.item();
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    result.train_losses.push_back(spectro_mean_loss(result.model, data.train));

    const auto& held = data.valid.empty() ? data.train : data.valid;
    const double valid_acc = spectro_accuracy(result.model, held);
    result.valid_accuracies.push_back(valid_acc);
    if (valid_acc > best_valid) {
      best_valid = valid_acc;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.values());
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) {
    std::copy(best[i].begin(), best[i].end(), params[i].data().begin());
  }
  result.test_accuracy = spectro_accuracy(result.model, data.test);
  return result;
}

ArtistEmbeddingMatrix extract_artist_embeddings(
    const SpectroCnn& model, const std::vector<Spectrogram>& train,
    std::size_t num_artists) {
  const auto dim = static_cast<std::size_t>(model.config().embedding_dim());
  ArtistEmbeddingMatrix m;
  m.artists = num_artists;
  m.dim = dim;
  m.source = EmbeddingSource::Audio;
  m.values.assign(num_artists * dim, 0.0);
  std::vector<std::size_t> counts(num_artists, 0);

  NoGradGuard no_grad;
  for (const auto& s : train) {
    if (s.artist < 0 || static_cast<std::size_t>(s.artist) >= num_artists) {
      throw std::invalid_argument("spectrogram artist outside embedding table");
    }
    const auto out = model.forward(std::vector<const Spectrogram*>{&s});
    const auto v = out.penultimate.data();
    for (std::size_t d = 0; d < dim; ++d) m.values[s.artist * dim + d] += v[d];
    ++counts[s.artist];
  }
  for (std::size_t a = 0; a < num_artists; ++a) {
    if (counts[a] == 0) {
      throw std::invalid_argument("artist " + std::to_string(a) +
                                  " has no training clips");
    }
    for (std::size_t d = 0; d < dim; ++d)
      m.values[a * dim + d] /= static_cast<double>(counts[a]);
  }
  return m;
}

}  // namespace lyra

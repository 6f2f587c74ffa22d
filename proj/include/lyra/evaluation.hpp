#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "lyra/corpus.hpp"
#include "lyra/ngram.hpp"
#include "lyra/nn.hpp"
#include "lyra/spectro_embed.hpp"
#include "lyra/tensor.hpp"

namespace lyra {

// Convolutional sentence classifier: parallel convolutions of several widths
// over the word-embedding sequence, max-over-time pooling, dropout, softmax.
struct TextCnnConfig {
  std::vector<int> widths{3, 4, 5};
  int feature_maps = 100;
  double dropout = 0.5;
  int classes = 7;
  int emb_dim = 300;
  std::size_t vocab_size = 0;

  int max_width() const;
  void validate() const;
};

class TextCnn {
 public:
  TextCnn() = default;
  TextCnn(TextCnnConfig config, Rng& rng);

  // batch × classes; dropout only when `rng` is non-null.
  Tensor logits(const std::vector<std::vector<int>>& batch, Rng* rng = nullptr) const;
  int predict(const std::vector<int>& ids) const;

  const TextCnnConfig& config() const { return config_; }
  NamedTensors parameters() const;

 private:
  TextCnnConfig config_;
  Tensor embedding_;
  std::vector<Tensor> filters_;
  std::vector<Tensor> filter_biases_;
  Linear output_;
};

struct StyleClassifier {
  TextCnn model;
  Vocabulary vocab;

  // Token ids right-padded with PAD up to the widest filter.
  std::vector<int> ids(const TokenLine& tokens) const;
  int predict(const std::string& line) const;
};

struct StyleTrainOptions {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  int min_count = 1;
  std::uint64_t seed = 1;
};

struct StyleTrainResult {
  StyleClassifier classifier;
  double test_accuracy = 0.0;
  double majority_baseline = 0.0;
  double best_valid_accuracy = 0.0;
};

StyleTrainResult train_style_classifier(const std::vector<Line>& lines,
                                        std::size_t num_artists,
                                        TextCnnConfig config,
                                        const StyleTrainOptions& options);

// Fraction of lines whose predicted artist equals the intended one.
double style_accuracy(const std::function<int(const std::string&)>& classify,
                      const std::vector<std::string>& lines,
                      const std::vector<int>& intended, std::size_t num_artists);

double majority_baseline(const std::vector<int>& labels);

// Distinct normalised lines over all lines.
double uniqueness(const std::vector<std::string>& lines);
// Fraction of generated lines whose normalised form occurs in `training`.
double verbatim_copy_rate(const std::vector<std::string>& generated,
                          const std::vector<std::string>& training);

struct CosineTable {
  std::size_t size = 0;
  std::vector<double> values;  // size × size
  std::size_t top_i = 0;
  std::size_t top_j = 0;
  double top_value = 0.0;

  double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

CosineTable embedding_cosine_table(const ArtistEmbeddingMatrix& matrix);
// Recomputes the top off-diagonal pair of an existing table.
void update_top_pair(CosineTable& table);

double cohens_kappa(const std::vector<int>& first, const std::vector<int>& second);

struct EvalReport {
  std::string mode;
  std::vector<std::string> artists;
  std::vector<std::uint64_t> seeds;
  std::size_t runs = 1;
  double style_accuracy = 0.0;
  NllMatrix nll;
  double diag_argmin = 0.0;  // mean over runs of the per-run count
  double uniqueness = 0.0;
  double verbatim_copy_rate = 0.0;
  CosineTable cosine;
  double classifier_test_accuracy = 0.0;
  double classifier_majority_baseline = 0.0;
};

// Entrywise arithmetic means; seeds are concatenated.
EvalReport aggregate_runs(const std::vector<EvalReport>& reports);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct AnnotationSheet {
  std::string artist;
  std::vector<std::string> lines;   // shuffled, model identity hidden
  std::vector<std::string> models;  // row → model, the sealed key
};

AnnotationSheet export_annotation_sheet(
    const std::map<std::string, std::vector<std::string>>& per_model,
    const std::string& artist, std::size_t n, std::uint64_t seed);
// Writes <stem>.txt (one line per row) and <stem>.key.tsv (row, model).
void write_annotation_sheet(const AnnotationSheet& sheet,
                            const std::filesystem::path& stem);

}  // namespace lyra

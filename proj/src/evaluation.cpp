#include "lyra/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "lyra/optim.hpp"

namespace lyra {

int TextCnnConfig::max_width() const {
  return widths.empty() ? 0 : *std::max_element(widths.begin(), widths.end());
}

void TextCnnConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("text CNN needs filter widths");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("filter widths must be positive");
  if (feature_maps < 1 || emb_dim < 1) throw std::invalid_argument("text CNN sizes must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0,1)");
  if (classes < 2) throw std::invalid_argument("need at least two classes");
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecials))
    throw std::invalid_argument("text CNN vocabulary is empty");
}

TextCnn::TextCnn(TextCnnConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const auto e = static_cast<std::size_t>(config_.emb_dim);
  const auto f = static_cast<std::size_t>(config_.feature_maps);
  embedding_ = Tensor::uniform({config_.vocab_size, e}, 0.1, rng, true);
  for (int w : config_.widths) {
    const auto width = static_cast<std::size_t>(w);
    filters_.push_back(Tensor::uniform({f, 1, width, e},
                                       std::sqrt(6.0 / double(width * e + f)), rng,
                                       true));
    filter_biases_.push_back(Tensor::zeros({f}, true));
  }
  output_ = Linear(f * config_.widths.size(), static_cast<std::size_t>(config_.classes), rng);
}

Tensor TextCnn::logits(const std::vector<std::vector<int>>& batch, Rng* rng) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto e = static_cast<std::size_t>(config_.emb_dim);
  std::vector<Tensor> features;
  features.reserve(batch.size());
  for (const auto& ids : batch) {
    if (ids.size() < static_cast<std::size_t>(config_.max_width())) {
      throw std::invalid_argument("line shorter than the widest filter; pad it first");
    }
    Tensor x = reshape(embedding_lookup(embedding_, ids), {1, ids.size(), e});
    std::vector<Tensor> pooled;
    for (std::size_t k = 0; k < filters_.size(); ++k) {
      Tensor maps = relu(conv2d(x, filters_[k], filter_biases_[k]));
      Tensor flat = reshape(maps, {maps.dim(0), maps.dim(1) * maps.dim(2)});
      pooled.push_back(reshape(row_max(flat), {1, maps.dim(0)}));
    }
    features.push_back(concat(pooled));
  }
  Tensor h = concat_rows(features);
  if (rng && config_.dropout > 0.0)
    h = dropout(h, make_dropout_mask(h.size(), config_.dropout, *rng));
  return output_(h);
}

int TextCnn::predict(const std::vector<int>& ids) const {
  NoGradGuard no_grad;
  Tensor out = logits({ids});
  auto v = out.data();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

NamedTensors TextCnn::parameters() const {
  NamedTensors out;
  out.emplace_back("embedding", embedding_);
  for (std::size_t k = 0; k < filters_.size(); ++k) {
    out.emplace_back("filter" + std::to_string(k) + ".weight", filters_[k]);
    out.emplace_back("filter" + std::to_string(k) + ".bias", filter_biases_[k]);
  }
  output_.collect("out", out);
  return out;
}

std::vector<int> StyleClassifier::ids(const TokenLine& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(vocab.id(t));
  while (out.size() < static_cast<std::size_t>(model.config().max_width()))
    out.push_back(Vocabulary::kPad);
  return out;
}

int StyleClassifier::predict(const std::string& line) const {
  return model.predict(ids(tokenize_line(line)));
}

namespace {

double classifier_accuracy(const StyleClassifier& c, const std::vector<Line>& lines) {
  if (lines.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& l : lines) correct += c.model.predict(c.ids(l.tokens)) == l.artist;
  return static_cast<double>(correct) / static_cast<double>(lines.size());
}

// x0 + Σ(xi − x0)/n: exact when every value is equal.
double stable_mean(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x - xs[0];
  return xs[0] + acc / static_cast<double>(xs.size());
}

}  // namespace

StyleTrainResult train_style_classifier(const std::vector<Line>& lines,
                                        std::size_t num_artists,
                                        TextCnnConfig config,
                                        const StyleTrainOptions& options) {
  CorpusSplit split = split_corpus(lines, SplitFractions{}, options.seed);
  std::vector<std::size_t> per_class(num_artists, 0);
  for (const auto& l : split.train) {
    if (l.artist < 0 || static_cast<std::size_t>(l.artist) >= num_artists) {
      throw std::invalid_argument("line labelled with unknown artist");
    }
    ++per_class[l.artist];
  }
  for (std::size_t a = 0; a < num_artists; ++a) {
    if (per_class[a] == 0) {
      throw std::invalid_argument("artist " + std::to_string(a) +
                                  " has zero training lines");
    }
  }

  StyleTrainResult result;
  result.classifier.vocab = build_vocabulary(split.train, options.min_count);
  config.classes = static_cast<int>(num_artists);
  config.vocab_size = result.classifier.vocab.size();
  Rng rng(options.seed);
  result.classifier.model = TextCnn(config, rng);

  std::vector<Tensor> params;
  for (auto& [name, t] : result.classifier.model.parameters()) params.push_back(t);
  Adam adam(params, AdamOptions{.lr = options.lr});

  std::vector<std::vector<int>> encoded;
  for (const auto& l : split.train) encoded.push_back(result.classifier.ids(l.tokens));
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));

  std::vector<std::vector<double>> best;
  double best_valid = -1.0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<std::vector<int>> items;
      std::vector<int> labels;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        items.push_back(encoded[order[k]]);
        labels.push_back(split.train[order[k]].artist);
      }
      backward(softmax_cross_entropy(result.classifier.model.logits(items, &rng), labels));
      adam.step();
    }
    const double valid = classifier_accuracy(result.classifier, split.valid);
    if (valid > best_valid) {
      best_valid = valid;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.values());
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i)
    std::copy(best[i].begin(), best[i].end(), params[i].data().begin());

  result.best_valid_accuracy = best_valid;
  result.test_accuracy = classifier_accuracy(result.classifier, split.test);
  std::vector<int> test_labels;
  for (const auto& l : split.test) test_labels.push_back(l.artist);
  result.majority_baseline = majority_baseline(test_labels);
  return result;
}

double style_accuracy(const std::function<int(const std::string&)>& classify,
                      const std::vector<std::string>& lines,
                      const std::vector<int>& intended, std::size_t num_artists) {
  if (lines.size() != intended.size()) {
    throw std::invalid_argument("style_accuracy: one label per line required");
  }
  if (lines.empty()) throw std::invalid_argument("style_accuracy: no lines");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (intended[i] < 0 || static_cast<std::size_t>(intended[i]) >= num_artists) {
      throw std::invalid_argument("unknown artist label " + std::to_string(intended[i]));
    }
    correct += classify(lines[i]) == intended[i];
  }
  return static_cast<double>(correct) / static_cast<double>(lines.size());
}

double majority_baseline(const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  std::size_t top = 0;
  for (const auto& [label, n] : counts) top = std::max(top, n);
  return static_cast<double>(top) / static_cast<double>(labels.size());
}

double uniqueness(const std::vector<std::string>& lines) {
  if (lines.empty()) throw std::invalid_argument("uniqueness: empty line list");
  std::unordered_set<std::string> distinct;
  for (const auto& l : lines) distinct.insert(normalize_line(l));
  return static_cast<double>(distinct.size()) / static_cast<double>(lines.size());
}

double verbatim_copy_rate(const std::vector<std::string>& generated,
                          const std::vector<std::string>& training) {
  if (generated.empty() || training.empty()) {
    throw std::invalid_argument("verbatim_copy_rate: empty input");
  }
  std::unordered_set<std::string> seen;
  for (const auto& l : training) seen.insert(normalize_line(l));
  std::size_t copies = 0;
  for (const auto& l : generated) copies += seen.count(normalize_line(l));
  return static_cast<double>(copies) / static_cast<double>(generated.size());
}

void update_top_pair(CosineTable& table) {
  table.top_value = -2.0;
  for (std::size_t i = 0; i < table.size; ++i)
    for (std::size_t j = i + 1; j < table.size; ++j)
      if (table.at(i, j) > table.top_value) {
        table.top_value = table.at(i, j);
        table.top_i = i;
        table.top_j = j;
      }
  if (table.size < 2) table.top_value = 0.0;
}

CosineTable embedding_cosine_table(const ArtistEmbeddingMatrix& matrix) {
  CosineTable table;
  table.size = matrix.artists;
  table.values.assign(table.size * table.size, 0.0);
  std::vector<double> norms(table.size);
  for (std::size_t i = 0; i < table.size; ++i) {
    double sq = 0.0;
    for (double v : matrix.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
    if (norms[i] == 0.0) {
      throw std::invalid_argument("artist " + std::to_string(i) +
                                  " has a zero-norm embedding");
    }
  }
  for (std::size_t i = 0; i < table.size; ++i) {
    table.values[i * table.size + i] = 1.0;
    for (std::size_t j = i + 1; j < table.size; ++j) {
      const auto a = matrix.row(i), b = matrix.row(j);
      double dot = 0.0;
      for (std::size_t d = 0; d < matrix.dim; ++d) dot += a[d] * b[d];
      const double c = dot / (norms[i] * norms[j]);
      table.values[i * table.size + j] = table.values[j * table.size + i] = c;
    }
  }
  update_top_pair(table);
  return table;
}

double cohens_kappa(const std::vector<int>& first, const std::vector<int>& second) {
  if (first.size() != second.size()) {
    throw std::invalid_argument("cohens_kappa: annotation lengths differ");
  }
  if (first.empty()) throw std::invalid_argument("cohens_kappa: no annotations");
  const double n = static_cast<double>(first.size());
  double agree = 0.0, pos1 = 0.0, pos2 = 0.0;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const bool a = first[i] != 0, b = second[i] != 0;
    agree += a == b;
    pos1 += a;
    pos2 += b;
  }
  const double p_o = agree / n;
  const double p_e = (pos1 / n) * (pos2 / n) + (1.0 - pos1 / n) * (1.0 - pos2 / n);
  if (p_e == 1.0) return 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

EvalReport aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_runs: no reports");
  const auto& first = reports.front();
  for (const auto& r : reports) {
    if (r.artists != first.artists || r.mode != first.mode ||
        r.nll.rows != first.nll.rows || r.nll.cols != first.nll.cols ||
        r.cosine.size != first.cosine.size) {
      throw std::invalid_argument("aggregate_runs: report schema mismatch");
    }
  }
  auto mean_of = [&](auto field) {
    std::vector<double> xs;
    for (const auto& r : reports) xs.push_back(field(r));
    return stable_mean(xs);
  };

  EvalReport out;
  out.mode = first.mode;
  out.artists = first.artists;
  out.runs = 0;
  for (const auto& r : reports) {
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    out.runs += r.runs;
  }
  out.style_accuracy = mean_of([](const EvalReport& r) { return r.style_accuracy; });
  out.diag_argmin = mean_of([](const EvalReport& r) { return r.diag_argmin; });
  out.uniqueness = mean_of([](const EvalReport& r) { return r.uniqueness; });
  out.verbatim_copy_rate =
      mean_of([](const EvalReport& r) { return r.verbatim_copy_rate; });
  out.classifier_test_accuracy =
      mean_of([](const EvalReport& r) { return r.classifier_test_accuracy; });
  out.classifier_majority_baseline =
      mean_of([](const EvalReport& r) { return r.classifier_majority_baseline; });

  out.nll = first.nll;
  for (std::size_t i = 0; i < out.nll.values.size(); ++i)
    out.nll.values[i] = mean_of([i](const EvalReport& r) { return r.nll.values[i]; });
  out.cosine = first.cosine;
  for (std::size_t i = 0; i < out.cosine.values.size(); ++i)
    out.cosine.values[i] =
        mean_of([i](const EvalReport& r) { return r.cosine.values[i]; });
  update_top_pair(out.cosine);
  return out;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json nll = nlohmann::json::array();
  for (std::size_t i = 0; i < r.nll.rows; ++i) {
    std::vector<double> row(r.nll.values.begin() + i * r.nll.cols,
                            r.nll.values.begin() + (i + 1) * r.nll.cols);
    nll.push_back(row);
  }
  nlohmann::json cos = nlohmann::json::array();
  for (std::size_t i = 0; i < r.cosine.size; ++i) {
    std::vector<double> row(r.cosine.values.begin() + i * r.cosine.size,
                            r.cosine.values.begin() + (i + 1) * r.cosine.size);
    cos.push_back(row);
  }
  NllMatrix mean_matrix = r.nll;
  return {
      {"mode", r.mode},
      {"artists", r.artists},
      {"seeds", r.seeds},
      {"runs", r.runs},
      {"style_accuracy", r.style_accuracy},
      {"nll_matrix", nll},
      {"diag_argmin_count", r.diag_argmin},
      {"diag_argmin_count_of_mean_matrix",
       r.nll.rows ? diag_argmin_count(mean_matrix) : 0},
      {"uniqueness", r.uniqueness},
      {"verbatim_copy_rate", r.verbatim_copy_rate},
      {"cosine",
       {{"matrix", cos},
        {"top_pair", {r.cosine.top_i, r.cosine.top_j}},
        {"top_value", r.cosine.top_value}}},
      {"style_classifier",
       {{"test_accuracy", r.classifier_test_accuracy},
        {"majority_baseline", r.classifier_majority_baseline}}},
      {"aggregation", {{"method", "mean"}, {"runs", r.runs}}},
  };
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.artists = j.at("artists").get<std::vector<std::string>>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.runs = j.at("runs").get<std::size_t>();
  r.style_accuracy = j.at("style_accuracy").get<double>();
  r.nll = NllMatrix::from_rows(j.at("nll_matrix").get<std::vector<std::vector<double>>>());
  r.diag_argmin = j.at("diag_argmin_count").get<double>();
  r.uniqueness = j.at("uniqueness").get<double>();
  r.verbatim_copy_rate = j.at("verbatim_copy_rate").get<double>();
  const auto rows = j.at("cosine").at("matrix").get<std::vector<std::vector<double>>>();
  r.cosine.size = rows.size();
  for (const auto& row : rows) r.cosine.values.insert(r.cosine.values.end(), row.begin(), row.end());
  update_top_pair(r.cosine);
  r.classifier_test_accuracy = j.at("style_classifier").at("test_accuracy").get<double>();
  r.classifier_majority_baseline =
      j.at("style_classifier").at("majority_baseline").get<double>();
  return r;
}

AnnotationSheet export_annotation_sheet(
    const std::map<std::string, std::vector<std::string>>& per_model,
    const std::string& artist, std::size_t n, std::uint64_t seed) {
  if (per_model.empty()) throw std::invalid_argument("no models to sample from");
  Rng rng(seed);
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [model, lines] : per_model) {
    if (lines.size() < n) {
      throw std::invalid_argument("model " + model + " supplied " +
                                  std::to_string(lines.size()) + " lines, need " +
                                  std::to_string(n));
    }
    std::vector<std::size_t> pick(lines.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    for (std::size_t k = 0; k < n; ++k) rows.emplace_back(lines[pick[k]], model);
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  AnnotationSheet sheet;
  sheet.artist = artist;
  for (auto& [line, model] : rows) {
    sheet.lines.push_back(std::move(line));
    sheet.models.push_back(std::move(model));
  }
  return sheet;
}

void write_annotation_sheet(const AnnotationSheet& sheet,
                            const std::filesystem::path& stem) {
  std::ofstream text(stem.string() + ".txt");
  std::ofstream key(stem.string() + ".key.tsv");
  if (!text || !key) throw std::runtime_error("cannot write sheet " + stem.string());
  text << "# artist: " << sheet.artist << '\n';
  key << "row\tmodel\n";
  for (std::size_t i = 0; i < sheet.lines.size(); ++i) {
    text << i + 1 << '\t' << sheet.lines[i] << '\n';
    key << i + 1 << '\t' << sheet.models[i] << '\n';
  }
}

}  // namespace lyra

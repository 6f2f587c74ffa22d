#include "lyra/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace lyra {

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest start_manifest(const RunConfig& config, const std::string& stage) {
  RunManifest m;
  m.stage = stage;
  m.config_hash = config_hash(config);
  m.seeds = config.seeds;
  m.config = to_json(config);
  m.started = utc_now();
  return m;
}

void finish_manifest(RunManifest& m, const RunConfig& config) {
  m.finished = utc_now();
  write_manifest(m, config.output_path() / "manifests" / (m.stage + ".json"));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::filesystem::path embeddings_path(const RunConfig& config) {
  return config.output_path() / "artist_embeddings.tsv";
}

std::vector<std::vector<std::string>> tokens_of(const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(tokenize_line(l));
  return out;
}

}  // namespace

nlohmann::json to_json(const RunManifest& m) {
  return {{"stage", m.stage},     {"config_hash", m.config_hash}, {"seeds", m.seeds},
          {"config", m.config},   {"outputs", m.outputs},         {"metrics", m.metrics},
          {"started", m.started}, {"finished", m.finished}};
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  write_text(path, to_json(manifest).dump(2) + "\n");
}

TextData load_text_data(const RunConfig& config) {
  TextData data;
  data.corpus = load_corpus(config.corpus_path());
  data.split = split_corpus(data.corpus.lines, SplitFractions{}, config.split_seed);
  return data;
}

void save_spectrogram_cache(const std::vector<Spectrogram>& specs,
                            const std::filesystem::path& path) {
  CheckpointFile file;
  nlohmann::json clips = nlohmann::json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    clips.push_back({{"song_id", s.song_id},
                     {"artist", s.artist},
                     {"clip_index", s.clip_index},
                     {"sample_rate", s.sample_rate}});
    TensorRecord rec;
    rec.name = "clip" + std::to_string(i);
    rec.shape = {s.values.rows, s.values.cols};
    rec.values.assign(s.values.values.begin(), s.values.values.end());
    file.tensors.push_back(std::move(rec));
  }
  const auto& p = specs.empty() ? MelParams{} : specs.front().params;
  file.metadata = {{"kind", "spectrograms"},
                   {"params",
                    {{"n_fft", p.n_fft},
                     {"hop", p.hop},
                     {"n_mels", p.n_mels},
                     {"fmin", p.fmin},
                     {"fmax", p.fmax},
                     {"floor_db", p.floor_db}}},
                   {"clips", clips}};
  write_checkpoint_file(file, path);
}

std::vector<Spectrogram> load_spectrogram_cache(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("missing spectrogram cache " + path.string() +
                             "; run prep-audio first");
  }
  const CheckpointFile file = read_checkpoint_file(path);
  if (file.metadata.value("kind", "") != "spectrograms") {
    throw std::runtime_error("invalid checkpoint: not a spectrogram cache");
  }
  MelParams params;
  const auto& p = file.metadata.at("params");
  params.n_fft = p.at("n_fft").get<int>();
  params.hop = p.at("hop").get<int>();
  params.n_mels = p.at("n_mels").get<int>();
  params.fmin = p.at("fmin").get<double>();
  params.fmax = p.at("fmax").get<double>();
  params.floor_db = p.at("floor_db").get<double>();
  std::vector<Spectrogram> out;
  const auto& clips = file.metadata.at("clips");
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& rec = file.tensors.at(i);
    Spectrogram s;
    s.song_id = clips[i].at("song_id").get<std::string>();
    s.artist = clips[i].at("artist").get<int>();
    s.clip_index = clips[i].at("clip_index").get<int>();
    s.sample_rate = clips[i].at("sample_rate").get<int>();
    s.params = params;
    s.values.rows = rec.shape.at(0);
    s.values.cols = rec.shape.at(1);
    s.values.values.assign(rec.values.begin(), rec.values.end());
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t prep_audio(const RunConfig& config) {
  RunManifest manifest = start_manifest(config, "prep-audio");
  const Corpus corpus = load_corpus(config.corpus_path());
  const auto specs = load_audio_dataset(config.audio_path(), corpus.artists, config.audio);
  if (specs.empty()) {
    throw std::runtime_error("no audio clips under " + config.audio_path().string());
  }
  const auto cache = config.output_path() / "spectrograms.ckpt";
  save_spectrogram_cache(specs, cache);
  manifest.outputs["spectrograms"] = cache.string();
  manifest.metrics["clips"] = specs.size();
  finish_manifest(manifest, config);
  return specs.size();
}

SpectroTrainResult train_spectro(const RunConfig& config) {
  RunManifest manifest = start_manifest(config, "train-spectro");
  const Corpus corpus = load_corpus(config.corpus_path());
  const auto specs = load_spectrogram_cache(config.output_path() / "spectrograms.ckpt");
  const SpectrogramSplit split = grouped_split(specs, SplitFractions{}, config.split_seed);

  SpectroCnnConfig cnn = config.spectro;
  cnn.classes = static_cast<int>(corpus.artists.size());
  SpectroTrainResult result = train_spectro_classifier(split, cnn, config.spectro_train);
  const ArtistEmbeddingMatrix embeddings =
      extract_artist_embeddings(result.model, split.train, corpus.artists.size());
  write_embedding_tsv(embeddings, corpus.artists, embeddings_path(config));

  CheckpointFile file;
  file.metadata = {{"kind", "spectro_cnn"},
                   {"channels", result.model.config().channels},
                   {"head", result.model.config().head},
                   {"classes", result.model.config().classes},
                   {"input_height", result.model.config().input_height},
                   {"input_width", result.model.config().input_width}};
  for (const auto& [name, t] : result.model.parameters()) {
    TensorRecord rec;
    rec.name = name;
    rec.shape.assign(t.shape().begin(), t.shape().end());
    for (double v : t.data()) rec.values.push_back(static_cast<float>(v));
    file.tensors.push_back(std::move(rec));
  }
  write_checkpoint_file(file, config.output_path() / "spectro" / "model.ckpt");

  nlohmann::json report = {{"initial_loss", result.initial_loss},
                           {"epoch_losses", result.epoch_losses},
                           {"valid_accuracies", result.valid_accuracies},
                           {"best_epoch", result.best_epoch},
                           {"test_accuracy", result.test_accuracy},
                           {"clips",
                            {{"train", split.train.size()},
                             {"valid", split.valid.size()},
                             {"test", split.test.size()}}}};
  write_text(config.output_path() / "spectro" / "report.json", report.dump(2) + "\n");

  manifest.outputs = {{"embeddings", embeddings_path(config).string()},
                      {"model", (config.output_path() / "spectro" / "model.ckpt").string()}};
  manifest.metrics = report;
  finish_manifest(manifest, config);
  return result;
}

ArtistEmbeddingMatrix artist_matrix_for(const RunConfig& config, ConditioningMode mode,
                                        const std::vector<ArtistId>& artists,
                                        std::uint64_t seed) {
  switch (required_source(mode)) {
    case EmbeddingSource::OneHot:
      return ArtistEmbeddingMatrix::one_hot(artists.size());
    case EmbeddingSource::Random: {
      Rng rng(seed ^ 0x5eedULL);
      return ArtistEmbeddingMatrix::random(artists.size(), config.vae.artist_emb_dim, rng);
    }
    case EmbeddingSource::Audio:
      return read_embedding_tsv(embeddings_path(config), artists);
  }
  throw std::logic_error("unhandled embedding source");
}

VaeCheckpoint train_vae_run(const RunConfig& config, ConditioningMode mode,
                            std::uint64_t seed, const TextData& data) {
  const auto& artists = data.corpus.artists;
  const ArtistEmbeddingMatrix embeddings = artist_matrix_for(config, mode, artists, seed);

  VaeCheckpoint ck;
  ck.vocab = build_vocabulary(data.split.train, config.vae.min_count);
  ck.artists = artists;
  ck.seed = seed;
  ck.config_hash = config_hash(config);

  VaeConfig vc;
  vc.vocab_size = ck.vocab.size();
  vc.num_artists = artists.size();
  vc.word_emb_dim = config.vae.word_emb_dim;
  vc.encoder_hidden = config.vae.encoder_hidden;
  vc.latent_dim = config.vae.latent_dim;
  vc.decoder_hidden = config.vae.decoder_hidden;
  vc.artist_emb_dim = embeddings.dim;
  vc.word_dropout = config.vae.word_dropout;
  vc.kl_anneal_steps = config.vae.kl_anneal_steps;
  vc.max_decode_len = config.vae.max_decode_len;
  vc.mode = mode;
  Rng rng(seed);
  ck.model = VaeModel(vc, embeddings, rng);
  if (!config.vae.word_vectors.empty()) {
    load_word_embeddings(config.vae.word_vectors, ck.vocab, ck.model);
  }

  std::vector<EncodedLine> encoded;
  encoded.reserve(data.split.train.size());
  for (const auto& l : data.split.train)
    encoded.push_back(encode_line(l, ck.vocab, config.vae.max_line_len));
  VaeTrainOptions options;
  options.steps = config.vae.steps;
  options.batch_size = config.vae.batch_size;
  options.lr = config.vae.lr;
  options.seed = seed;
  train_vae(ck.model, encoded, options);
  // Match the precision a saved checkpoint will have.
  ck.model.round_to_float();
  return ck;
}

std::filesystem::path vae_checkpoint_path(const RunConfig& config, ConditioningMode mode,
                                          std::uint64_t seed) {
  return config.output_path() / "vae" / mode_name(mode) /
         ("seed-" + std::to_string(seed) + ".ckpt");
}

std::vector<std::filesystem::path> train_vae_stage(const RunConfig& config,
                                                   ConditioningMode mode) {
  RunManifest manifest = start_manifest(config, "train-vae-" + mode_name(mode));
  const TextData data = load_text_data(config);
  std::vector<std::filesystem::path> out;
  for (std::uint64_t seed : config.seeds) {
    const VaeCheckpoint ck = train_vae_run(config, mode, seed, data);
    const auto path = vae_checkpoint_path(config, mode, seed);
    save_checkpoint(ck, path);
    manifest.outputs[std::to_string(seed)] = path.string();
    out.push_back(path);
  }
  finish_manifest(manifest, config);
  return out;
}

EvaluationContext make_evaluation_context(const RunConfig& config) {
  EvaluationContext ctx;
  ctx.data = load_text_data(config);
  const auto k = ctx.data.corpus.artists.size();
  ctx.style = train_style_classifier(ctx.data.corpus.lines, k, config.evaluation.text_cnn,
                                     {.epochs = config.evaluation.style.epochs,
                                      .batch_size = config.evaluation.style.batch_size,
                                      .lr = config.evaluation.style.lr,
                                      .min_count = config.evaluation.style.min_count,
                                      .seed = config.split_seed});
  std::vector<std::vector<TokenLine>> per_artist(k);
  for (const auto& l : ctx.data.split.train) {
    per_artist[l.artist].push_back(l.tokens);
    ctx.training_lines.push_back(l.raw);
  }
  for (const auto& lines : per_artist)
    ctx.language_models.push_back(fit_kn(lines, config.evaluation.discount));
  return ctx;
}

EvalReport evaluate_checkpoint(const RunConfig& config, const EvaluationContext& ctx,
                               const VaeCheckpoint& ck,
                               std::vector<std::vector<std::string>>* generated) {
  const auto k = ctx.data.corpus.artists.size();
  if (ck.artists.size() != k) {
    throw std::invalid_argument("checkpoint artists do not match the corpus");
  }
  std::vector<std::vector<std::string>> lines(k);
  std::vector<std::string> pooled;
  std::vector<int> intended;
  std::vector<std::vector<TokenLine>> tokens(k);
  for (std::size_t a = 0; a < k; ++a) {
    GenerateOptions g;
    g.count = config.evaluation.lines_per_artist;
    g.temperature = config.evaluation.temperature;
    g.max_len = ck.model.config().max_decode_len;
    g.seed = ck.seed * 1000 + a;
    lines[a] = generate(ck.model, ck.vocab, static_cast<int>(a), g);
    tokens[a] = tokens_of(lines[a]);
    pooled.insert(pooled.end(), lines[a].begin(), lines[a].end());
    intended.insert(intended.end(), lines[a].size(), static_cast<int>(a));
  }

  EvalReport r;
  r.mode = mode_name(ck.model.config().mode);
  for (const auto& a : ctx.data.corpus.artists) r.artists.push_back(a.name);
  r.seeds = {ck.seed};
  const auto& classifier = ctx.style.classifier;
  r.style_accuracy = style_accuracy(
      [&classifier](const std::string& line) { return classifier.predict(line); }, pooled,
      intended, k);
  r.nll = nll_matrix(tokens, ctx.language_models);
  r.diag_argmin = static_cast<double>(diag_argmin_count(r.nll));
  r.uniqueness = uniqueness(pooled);
  r.verbatim_copy_rate = verbatim_copy_rate(pooled, ctx.training_lines);

  ArtistEmbeddingMatrix emb;
  emb.artists = k;
  emb.dim = ck.model.artist_embeddings().dim(1);
  emb.values = ck.model.artist_embeddings().values();
  r.cosine = embedding_cosine_table(emb);
  r.classifier_test_accuracy = ctx.style.test_accuracy;
  r.classifier_majority_baseline = ctx.style.majority_baseline;
  if (generated) *generated = std::move(lines);
  return r;
}

EvaluationResult evaluate_stage(const RunConfig& config, ConditioningMode mode) {
  RunManifest manifest = start_manifest(config, "evaluate-" + mode_name(mode));
  const EvaluationContext ctx = make_evaluation_context(config);
  const auto dir = config.output_path() / "eval" / mode_name(mode);

  EvaluationResult result;
  for (std::uint64_t seed : config.seeds) {
    const auto path = vae_checkpoint_path(config, mode, seed);
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("missing checkpoint " + path.string() + "; run train-vae first");
    }
    const VaeCheckpoint ck = load_checkpoint(path);
    std::vector<std::vector<std::string>> generated;
    result.runs.push_back(evaluate_checkpoint(config, ctx, ck, &generated));
    for (std::size_t a = 0; a < generated.size(); ++a) {
      std::string text;
      for (const auto& line : generated[a]) text += line + '\n';
      write_text(dir / ("seed-" + std::to_string(seed)) /
                     (ctx.data.corpus.artists[a].directory + ".txt"),
                 text);
    }
  }
  result.aggregate = aggregate_runs(result.runs);

  nlohmann::json report = to_json(result.aggregate);
  report["config_hash"] = config_hash(config);
  report["per_run"] = nlohmann::json::array();
  for (const auto& r : result.runs) report["per_run"].push_back(to_json(r));
  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "nll.tsv", nll_matrix_tsv(result.aggregate.nll, result.aggregate.artists));

  manifest.outputs = {{"report", (dir / "report.json").string()},
                      {"nll", (dir / "nll.tsv").string()}};
  manifest.metrics = to_json(result.aggregate);
  finish_manifest(manifest, config);
  return result;
}

}  // namespace lyra

#include "lyra/config.hpp"

#include <openssl/sha.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

namespace lyra {

namespace {

void check_keys(const nlohmann::json& j, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown key " + section + "." + key);
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

std::filesystem::path resolve(const std::string& value, const std::filesystem::path& fallback) {
  return value.empty() ? fallback : std::filesystem::path(value);
}

}  // namespace

std::filesystem::path data_root() {
  const char* env = std::getenv("LYRA_DATA_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("data");
}

std::filesystem::path RunConfig::corpus_path() const {
  return resolve(corpus_dir, data_root() / "corpus");
}

std::filesystem::path RunConfig::audio_path() const {
  return resolve(audio_dir, corpus_path());
}

std::filesystem::path RunConfig::output_path() const {
  return resolve(output_dir, data_root() / "runs");
}

void RunConfig::validate() const {
  if (runs == 0) throw std::invalid_argument("config: runs must be at least 1");
  if (seeds.size() != runs) {
    throw std::invalid_argument("config: expected " + std::to_string(runs) +
                                " seeds, got " + std::to_string(seeds.size()));
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw std::invalid_argument("config: seeds must be distinct");
  }
  if (evaluation.discount <= 0.0 || evaluation.discount >= 1.0) {
    throw std::invalid_argument("config: discount must be in (0,1)");
  }
  if (evaluation.temperature < 0.0) throw std::invalid_argument("config: temperature must be >= 0");
  if (evaluation.lines_per_artist == 0) {
    throw std::invalid_argument("config: lines_per_artist must be positive");
  }
  if (vae.steps < 0 || vae.batch_size == 0 || vae.min_count < 1 || vae.max_line_len == 0) {
    throw std::invalid_argument("config: invalid vae training settings");
  }
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& e = c.evaluation;
  return {
      {"corpus_dir", c.corpus_dir},
      {"audio_dir", c.audio_dir},
      {"output_dir", c.output_dir},
      {"mode", mode_name(c.mode)},
      {"seeds", c.seeds},
      {"runs", c.runs},
      {"split_seed", c.split_seed},
      {"audio",
       {{"n_fft", c.audio.n_fft},
        {"hop", c.audio.hop},
        {"n_mels", c.audio.n_mels},
        {"fmin", c.audio.fmin},
        {"fmax", c.audio.fmax},
        {"floor_db", c.audio.floor_db}}},
      {"spectro",
       {{"channels", c.spectro.channels},
        {"head", c.spectro.head},
        {"dropout", c.spectro.dropout},
        {"epochs", c.spectro_train.epochs},
        {"batch_size", c.spectro_train.batch_size},
        {"lr", c.spectro_train.lr},
        {"seed", c.spectro_train.seed}}},
      {"vae",
       {{"word_emb_dim", c.vae.word_emb_dim},
        {"encoder_hidden", c.vae.encoder_hidden},
        {"latent_dim", c.vae.latent_dim},
        {"decoder_hidden", c.vae.decoder_hidden},
        {"artist_emb_dim", c.vae.artist_emb_dim},
        {"word_dropout", c.vae.word_dropout},
        {"kl_anneal_steps", c.vae.kl_anneal_steps},
        {"max_decode_len", c.vae.max_decode_len},
        {"max_line_len", c.vae.max_line_len},
        {"min_count", c.vae.min_count},
        {"steps", c.vae.steps},
        {"batch_size", c.vae.batch_size},
        {"lr", c.vae.lr},
        {"word_vectors", c.vae.word_vectors}}},
      {"evaluation",
       {{"widths", e.text_cnn.widths},
        {"feature_maps", e.text_cnn.feature_maps},
        {"dropout", e.text_cnn.dropout},
        {"emb_dim", e.text_cnn.emb_dim},
        {"epochs", e.style.epochs},
        {"batch_size", e.style.batch_size},
        {"lr", e.style.lr},
        {"min_count", e.style.min_count},
        {"discount", e.discount},
        {"lines_per_artist", e.lines_per_artist},
        {"temperature", e.temperature}}},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, "config",
             {"corpus_dir", "audio_dir", "output_dir", "mode", "seeds", "runs", "split_seed",
              "audio", "spectro", "vae", "evaluation"});
  RunConfig c;
  read(j, "corpus_dir", c.corpus_dir);
  read(j, "audio_dir", c.audio_dir);
  read(j, "output_dir", c.output_dir);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  read(j, "runs", c.runs);
  if (j.contains("seeds")) {
    read(j, "seeds", c.seeds);
  } else if (j.contains("runs")) {
    c.seeds.clear();
    for (std::size_t i = 0; i < c.runs; ++i) c.seeds.push_back(i + 1);
  }
  read(j, "split_seed", c.split_seed);

  if (j.contains("audio")) {
    const auto& a = j.at("audio");
    check_keys(a, "audio", {"n_fft", "hop", "n_mels", "fmin", "fmax", "floor_db"});
    read(a, "n_fft", c.audio.n_fft);
    read(a, "hop", c.audio.hop);
    read(a, "n_mels", c.audio.n_mels);
    read(a, "fmin", c.audio.fmin);
    read(a, "fmax", c.audio.fmax);
    read(a, "floor_db", c.audio.floor_db);
  }
  if (j.contains("spectro")) {
    const auto& s = j.at("spectro");
    check_keys(s, "spectro", {"channels", "head", "dropout", "epochs", "batch_size", "lr", "seed"});
    read(s, "channels", c.spectro.channels);
    read(s, "head", c.spectro.head);
    read(s, "dropout", c.spectro.dropout);
    read(s, "epochs", c.spectro_train.epochs);
    read(s, "batch_size", c.spectro_train.batch_size);
    read(s, "lr", c.spectro_train.lr);
    read(s, "seed", c.spectro_train.seed);
  }
  if (j.contains("vae")) {
    const auto& v = j.at("vae");
    check_keys(v, "vae",
               {"word_emb_dim", "encoder_hidden", "latent_dim", "decoder_hidden",
                "artist_emb_dim", "word_dropout", "kl_anneal_steps", "max_decode_len",
                "max_line_len", "min_count", "steps", "batch_size", "lr", "word_vectors"});
    read(v, "word_emb_dim", c.vae.word_emb_dim);
    read(v, "encoder_hidden", c.vae.encoder_hidden);
    read(v, "latent_dim", c.vae.latent_dim);
    read(v, "decoder_hidden", c.vae.decoder_hidden);
    read(v, "artist_emb_dim", c.vae.artist_emb_dim);
    read(v, "word_dropout", c.vae.word_dropout);
    read(v, "kl_anneal_steps", c.vae.kl_anneal_steps);
    read(v, "max_decode_len", c.vae.max_decode_len);
    read(v, "max_line_len", c.vae.max_line_len);
    read(v, "min_count", c.vae.min_count);
    read(v, "steps", c.vae.steps);
    read(v, "batch_size", c.vae.batch_size);
    read(v, "lr", c.vae.lr);
    read(v, "word_vectors", c.vae.word_vectors);
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    check_keys(e, "evaluation",
               {"widths", "feature_maps", "dropout", "emb_dim", "epochs", "batch_size", "lr",
                "min_count", "discount", "lines_per_artist", "temperature"});
    auto& ev = c.evaluation;
    read(e, "widths", ev.text_cnn.widths);
    read(e, "feature_maps", ev.text_cnn.feature_maps);
    read(e, "dropout", ev.text_cnn.dropout);
    read(e, "emb_dim", ev.text_cnn.emb_dim);
    read(e, "epochs", ev.style.epochs);
    read(e, "batch_size", ev.style.batch_size);
    read(e, "lr", ev.style.lr);
    read(e, "min_count", ev.style.min_count);
    read(e, "discount", ev.discount);
    read(e, "lines_per_artist", ev.lines_per_artist);
    read(e, "temperature", ev.temperature);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  const auto base = path.parent_path();
  for (std::string* p : {&c.corpus_dir, &c.audio_dir, &c.output_dir, &c.vae.word_vectors}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) {
      *p = (base / *p).lexically_normal().string();
    }
  }
  return c;
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

std::string config_hash(const RunConfig& config) {
  RunConfig copy = config;
  copy.output_dir.clear();
  const std::string body = to_json(copy).dump();
  const std::string blob = "blob " + std::to_string(body.size()) + '\0' + body;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  std::string hex;
  char byte[3];
  for (unsigned char d : digest) {
    std::snprintf(byte, sizeof byte, "%02x", d);
    hex += byte;
  }
  return hex;
}

}  // namespace lyra

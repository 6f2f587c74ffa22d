#include "lyra/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lyra {

namespace {

[[noreturn]] void invalid(const std::string& why) {
  throw std::runtime_error("invalid checkpoint: " + why);
}

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::uint64_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) invalid("truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorRecord& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  invalid("missing tensor " + name);
}

std::string encode_checkpoint(const CheckpointFile& file) {
  std::string out(kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = file.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    std::uint64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != t.values.size()) {
      throw std::invalid_argument("tensor " + t.name + " shape does not match its data");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    for (float v : t.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

CheckpointFile decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    invalid("bad magic");
  }
  in.take(kCheckpointMagic.size());
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    invalid("unsupported version " + std::to_string(version));
  }
  CheckpointFile file;
  const auto meta_len = in.get<std::uint64_t>();
  try {
    file.metadata = nlohmann::json::parse(in.take(meta_len));
  } catch (const nlohmann::json::parse_error&) {
    invalid("metadata is not JSON");
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    TensorRecord t;
    t.name = std::string(in.take(in.get<std::uint32_t>()));
    const auto rank = in.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(in.get<std::uint64_t>());
      n *= t.shape.back();
    }
    if (n > bytes.size()) invalid("truncated");
    t.values.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i)
      t.values.push_back(std::bit_cast<float>(in.get<std::uint32_t>()));
    file.tensors.push_back(std::move(t));
  }
  if (!in.done()) invalid("trailing bytes");
  return file;
}

void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(file);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

nlohmann::json to_json(const VaeConfig& c) {
  return {
      {"vocab_size", c.vocab_size},
      {"num_artists", c.num_artists},
      {"word_emb_dim", c.word_emb_dim},
      {"encoder_hidden", c.encoder_hidden},
      {"latent_dim", c.latent_dim},
      {"decoder_hidden", c.decoder_hidden},
      {"artist_emb_dim", c.artist_emb_dim},
      {"word_dropout", c.word_dropout},
      {"kl_anneal_steps", c.kl_anneal_steps},
      {"max_decode_len", c.max_decode_len},
      {"mode", mode_name(c.mode)},
  };
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.num_artists = j.at("num_artists").get<std::size_t>();
  c.word_emb_dim = j.at("word_emb_dim").get<std::size_t>();
  c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.decoder_hidden = j.at("decoder_hidden").get<std::size_t>();
  c.artist_emb_dim = j.at("artist_emb_dim").get<std::size_t>();
  c.word_dropout = j.at("word_dropout").get<double>();
  c.kl_anneal_steps = j.at("kl_anneal_steps").get<std::int64_t>();
  c.max_decode_len = j.at("max_decode_len").get<std::size_t>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  return c;
}

CheckpointFile to_checkpoint_file(const VaeCheckpoint& ck) {
  CheckpointFile file;
  nlohmann::json artists = nlohmann::json::array();
  for (const auto& a : ck.artists) {
    artists.push_back({{"index", a.index}, {"name", a.name}, {"genre", a.genre},
                       {"directory", a.directory}});
  }
  file.metadata = {
      {"kind", "vae"},
      {"format_version", kCheckpointVersion},
      {"config", to_json(ck.model.config())},
      {"artist_source", to_string(ck.model.artist_source())},
      {"vocabulary", {{"min_count", ck.vocab.min_count()},
                      {"tokens", ck.vocab.content_tokens()}}},
      {"artists", artists},
      {"seed", ck.seed},
      {"config_hash", ck.config_hash},
  };
  for (const auto& [name, t] : ck.model.parameters()) {
    TensorRecord rec;
    rec.name = name;
    rec.shape.assign(t.shape().begin(), t.shape().end());
    rec.values.reserve(t.size());
    for (double v : t.data()) rec.values.push_back(static_cast<float>(v));
    file.tensors.push_back(std::move(rec));
  }
  return file;
}

VaeCheckpoint vae_from_checkpoint_file(const CheckpointFile& file) {
  const auto& meta = file.metadata;
  if (meta.value("kind", "") != "vae") invalid("not a VAE checkpoint");
  VaeCheckpoint ck;
  try {
    const VaeConfig config = vae_config_from_json(meta.at("config"));
    ck.vocab = Vocabulary(meta.at("vocabulary").at("tokens").get<std::vector<std::string>>(),
                          meta.at("vocabulary").at("min_count").get<int>());
    for (const auto& a : meta.at("artists")) {
      ck.artists.push_back(ArtistId{a.at("index").get<int>(), a.at("name").get<std::string>(),
                                    a.at("genre").get<std::string>(),
                                    a.at("directory").get<std::string>()});
    }
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.config_hash = meta.at("config_hash").get<std::string>();

    ArtistEmbeddingMatrix placeholder;
    placeholder.artists = config.num_artists;
    placeholder.dim = config.artist_emb_dim;
    placeholder.values.assign(placeholder.artists * placeholder.dim, 0.0);
    placeholder.source = embedding_source_from_string(meta.at("artist_source").get<std::string>());
    Rng rng(0);
    ck.model = VaeModel(config, placeholder, rng);
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("bad metadata: ") + e.what());
  }
  if (ck.vocab.size() != ck.model.config().vocab_size) invalid("vocabulary size mismatch");

  auto params = ck.model.parameters();
  if (params.size() != file.tensors.size()) invalid("tensor count mismatch");
  for (auto& [name, t] : params) {
    const auto& rec = file.tensor(name);
    if (!std::equal(rec.shape.begin(), rec.shape.end(), t.shape().begin(), t.shape().end())) {
      invalid("shape mismatch for " + name);
    }
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = rec.values[i];
  }
  return ck;
}

void save_checkpoint(const VaeCheckpoint& checkpoint, const std::filesystem::path& path) {
  write_checkpoint_file(to_checkpoint_file(checkpoint), path);
}

VaeCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return vae_from_checkpoint_file(read_checkpoint_file(path));
}

}  // namespace lyra

#include "lyra/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lyra {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) fields.push_back(field);
  return fields;
}

}  // namespace

const ArtistId& Corpus::artist_by_name(std::string_view name) const {
  for (const auto& a : artists)
    if (a.name == name || a.directory == name) return a;
  throw std::out_of_range("unknown artist: " + std::string(name));
}

const std::array<std::string, Vocabulary::kNumSpecials>&
Vocabulary::special_tokens() {
  static const std::array<std::string, kNumSpecials> specials = {
      "<pad>", "<unk>", "<s>", "</s>"};
  return specials;
}

Vocabulary::Vocabulary() : Vocabulary({}, 1) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, int min_count)
    : min_count_(min_count) {
  const auto& specials = special_tokens();
  token_of_.assign(specials.begin(), specials.end());
  for (int i = 0; i < kNumSpecials; ++i) id_of_[specials[i]] = i;
  for (auto& t : tokens) {
    if (!id_of_.emplace(t, static_cast<int>(token_of_.size())).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + t);
    }
    token_of_.push_back(std::move(t));
  }
}

int Vocabulary::id(const std::string& token) const {
  auto it = id_of_.find(token);
  if (it == id_of_.end() || it->second < kNumSpecials) return kUnk;
  return it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  auto it = id_of_.find(token);
  return it != id_of_.end() && it->second >= kNumSpecials;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= token_of_.size()) {
    throw std::out_of_range("invalid id " + std::to_string(id));
  }
  return token_of_[id];
}

std::vector<std::string> Vocabulary::content_tokens() const {
  return {token_of_.begin() + kNumSpecials, token_of_.end()};
}

std::vector<std::string> tokenize_line(std::string_view text) {
  // U+2019 right single quotation mark is folded to an ASCII apostrophe.
  std::string folded;
  folded.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (static_cast<unsigned char>(text[i]) == 0xE2 && i + 2 < text.size() &&
        static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      folded.push_back('\'');
      i += 2;
    } else {
      folded.push_back(text[i]);
    }
  }
  std::string cleaned;
  cleaned.reserve(folded.size());
  for (std::size_t i = 0; i < folded.size(); ++i) {
    const auto c = static_cast<unsigned char>(folded[i]);
    if (c == '\'') {
      const bool inside = i > 0 && i + 1 < folded.size() &&
                          is_word_byte(static_cast<unsigned char>(folded[i - 1])) &&
                          is_word_byte(static_cast<unsigned char>(folded[i + 1]));
      if (inside) cleaned.push_back('\'');
    } else if (is_space_byte(c)) {
      cleaned.push_back(' ');
    } else if (is_word_byte(c)) {
      cleaned.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
    // any other ASCII punctuation is dropped
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  for (std::string t; in >> t;) tokens.push_back(std::move(t));
  return tokens;
}

std::string normalize_line(std::string_view text) {
  std::string out;
  for (const auto& t : tokenize_line(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Line make_line(std::string raw, int artist) {
  Line line;
  line.tokens = tokenize_line(raw);
  line.raw = std::move(raw);
  line.artist = artist;
  return line;
}

Vocabulary build_vocabulary(const std::vector<Line>& lines, int min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  std::map<std::string, int> counts;
  for (const auto& line : lines)
    for (const auto& t : line.tokens) ++counts[t];
  if (counts.empty()) throw std::invalid_argument("empty corpus");

  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [token, count] : counts)
    if (count >= min_count) kept.emplace_back(token, count);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;  // map order already breaks ties lexically
  });
  std::vector<std::string> tokens;
  for (auto& [token, count] : kept) tokens.push_back(token);
  return Vocabulary(std::move(tokens), min_count);
}

EncodedLine encode_line(const Line& line, const Vocabulary& vocab,
                        std::size_t max_line_len) {
  if (line.tokens.empty()) throw std::invalid_argument("empty line");
  EncodedLine out;
  out.artist = line.artist;
  out.length = std::min(line.tokens.size(), max_line_len);
  out.ids.reserve(out.length + 2);
  out.ids.push_back(Vocabulary::kBos);
  for (std::size_t i = 0; i < out.length; ++i)
    out.ids.push_back(vocab.id(line.tokens[i]));
  out.ids.push_back(Vocabulary::kEos);
  return out;
}

std::string decode_ids(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw std::out_of_range("invalid id " + std::to_string(id));
    }
    if (id < Vocabulary::kNumSpecials) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

CorpusSplit split_corpus(const std::vector<Line>& lines,
                         SplitFractions fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.valid + fractions.test;
  if (std::abs(total - 1.0) > 1e-9 || fractions.train < 0 ||
      fractions.valid < 0 || fractions.test < 0) {
    throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> by_artist;
  for (std::size_t i = 0; i < lines.size(); ++i)
    by_artist[lines[i].artist].push_back(i);

  std::vector<int> assignment(lines.size(), 0);
  std::mt19937_64 rng(seed);
  for (auto& [artist, idx] : by_artist) {
    if (idx.size() < 10) {
      throw std::invalid_argument("artist too small to stratify (artist " +
                                  std::to_string(artist) + ", " +
                                  std::to_string(idx.size()) + " lines)");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * fractions.train));
    const auto n_valid = std::min(
        idx.size() - n_train,
        static_cast<std::size_t>(std::llround(n * fractions.valid)));
    for (std::size_t k = 0; k < idx.size(); ++k)
      assignment[idx[k]] = k < n_train ? 0 : (k < n_train + n_valid ? 1 : 2);
  }

  CorpusSplit split;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto& part = assignment[i] == 0   ? split.train
                 : assignment[i] == 1 ? split.valid
                                      : split.test;
    part.push_back(lines[i]);
  }
  return split;
}

Corpus load_corpus(const std::filesystem::path& root) {
  std::ifstream manifest(root / "artists.tsv");
  if (!manifest) {
    throw std::runtime_error("missing artist manifest: " +
                             (root / "artists.tsv").string());
  }
  Corpus corpus;
  std::string row;
  while (std::getline(manifest, row)) {
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty() || row[0] == '#') continue;
    auto fields = split_tabs(row);
    if (fields[0] == "directory") continue;
    ArtistId artist;
    artist.index = static_cast<int>(corpus.artists.size());
    artist.directory = fields[0];
    artist.name = fields.size() > 1 && !fields[1].empty() ? fields[1] : fields[0];
    artist.genre = fields.size() > 2 ? fields[2] : "";
    corpus.artists.push_back(std::move(artist));
  }
  if (corpus.artists.size() < 2) {
    throw std::runtime_error("artist manifest must list at least two artists");
  }
  for (const auto& artist : corpus.artists) {
    const auto path = root / "artists" / artist.directory / "lyrics.txt";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing lyrics file: " + path.string());
    for (std::string text; std::getline(in, text);) {
      if (!text.empty() && text.back() == '\r') text.pop_back();
      auto line = make_line(std::move(text), artist.index);
      if (!line.tokens.empty()) corpus.lines.push_back(std::move(line));
    }
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ofstream manifest(root / "artists.tsv");
  manifest << "directory\tname\tgenre\n";
  for (const auto& a : corpus.artists) {
    manifest << a.directory << '\t' << a.name << '\t' << a.genre << '\n';
    const auto dir = root / "artists" / a.directory;
    std::filesystem::create_directories(dir);
    std::ofstream lyrics(dir / "lyrics.txt");
    for (const auto& line : corpus.lines)
      if (line.artist == a.index) lyrics << line.raw << '\n';
  }
}

}  // namespace lyra

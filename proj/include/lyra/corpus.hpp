#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lyra {

struct ArtistId {
  int index = 0;
  std::string name;
  std::string genre;
  // Directory under artists/ holding lyrics.txt and audio/.
  std::string directory;
};

struct Line {
  std::string raw;
  std::vector<std::string> tokens;
  int artist = 0;
};

struct Corpus {
  std::vector<ArtistId> artists;
  std::vector<Line> lines;

  const ArtistId& artist_by_name(std::string_view name) const;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;
  static const std::array<std::string, kNumSpecials>& special_tokens();

  Vocabulary();
  // `tokens` are the non-special entries in id order (id = position + 4).
  Vocabulary(std::vector<std::string> tokens, int min_count);

  int id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return token_of_.size(); }
  int min_count() const { return min_count_; }
  // Non-special tokens in id order.
  std::vector<std::string> content_tokens() const;

 private:
  std::unordered_map<std::string, int> id_of_;
  std::vector<std::string> token_of_;
  int min_count_ = 1;
};

struct EncodedLine {
  std::vector<int> ids;  // BOS … EOS
  int artist = 0;
  std::size_t length = 0;  // content tokens
};

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  std::vector<Line> train;
  std::vector<Line> valid;
  std::vector<Line> test;
};

std::vector<std::string> tokenize_line(std::string_view text);
// Tokenizer output re-joined with single spaces.
std::string normalize_line(std::string_view text);

Line make_line(std::string raw, int artist);

Vocabulary build_vocabulary(const std::vector<Line>& lines, int min_count = 2);
EncodedLine encode_line(const Line& line, const Vocabulary& vocab,
                        std::size_t max_line_len = 20);
std::string decode_ids(const std::vector<int>& ids, const Vocabulary& vocab);

CorpusSplit split_corpus(const std::vector<Line>& lines,
                         SplitFractions fractions, std::uint64_t seed);

// Reads <root>/artists.tsv and <root>/artists/<dir>/lyrics.txt.
Corpus load_corpus(const std::filesystem::path& root);
void write_corpus(const Corpus& corpus, const std::filesystem::path& root);

}  // namespace lyra

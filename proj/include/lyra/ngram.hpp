#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lyra/corpus.hpp"

namespace lyra {

using TokenLine = std::vector<std::string>;

// Interpolated Kneser-Ney trigram model with a single absolute discount.
// Lines are padded as <s> <s> w1 … wn </s>. The unigram level interpolates
// continuation counts with a uniform distribution over the predicted
// vocabulary (training words, </s> and <unk>), so no event has probability 0.
class KneserNeyModel {
 public:
  static inline const std::string kBos = "<s>";
  static inline const std::string kEos = "</s>";
  static inline const std::string kUnk = "<unk>";

  double discount() const { return discount_; }
  // Predictable tokens: every training word plus </s> and <unk>.
  const std::vector<std::string>& vocabulary() const { return predicted_; }

  // P(w | u v). Unknown tokens anywhere are read as <unk>.
  double prob(const std::string& u, const std::string& v,
              const std::string& w) const;
  // Natural-log probability of a line including its terminal </s>.
  double logprob_line(const TokenLine& tokens) const;
  // Contexts (u, v) observed in training.
  std::vector<std::pair<std::string, std::string>> trigram_contexts() const;

 private:
  friend KneserNeyModel fit_kn(const std::vector<TokenLine>& lines,
                               double discount);

  struct ContextStats {
    std::int64_t total = 0;  // Σ_w count(ctx, w)
    std::int64_t types = 0;  // |{w : count(ctx, w) > 0}|
  };

  int lookup(const std::string& token) const;
  double prob_ids(int u, int v, int w) const;
  double prob_bigram(int v, int w) const;
  double prob_unigram(int w) const;

  double discount_ = 0.75;
  std::vector<std::string> token_of_;
  std::unordered_map<std::string, int> id_of_;
  std::vector<std::string> predicted_;
  int bos_ = 0, eos_ = 0, unk_ = 0;

  std::unordered_map<std::uint64_t, std::int64_t> trigram_;       // c(u v w)
  std::unordered_map<std::uint64_t, ContextStats> trigram_ctx_;   // (u v)
  std::unordered_map<std::uint64_t, std::int64_t> bigram_cont_;   // N1+(· v w)
  std::unordered_map<int, ContextStats> bigram_ctx_;              // (v)
  std::unordered_map<int, std::int64_t> unigram_cont_;            // N1+(·· w)
  ContextStats unigram_ctx_;
};

KneserNeyModel fit_kn(const std::vector<TokenLine>& lines, double discount = 0.75);

// Rows are generating artists, columns scoring models; entries are mean
// per-line negative log-likelihoods in nats.
struct NllMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  static NllMatrix from_rows(const std::vector<std::vector<double>>& rows);
};

NllMatrix nll_matrix(const std::vector<std::vector<TokenLine>>& generated,
                     const std::vector<KneserNeyModel>& models);

// Rows whose strict unique minimum lies on the diagonal.
std::size_t diag_argmin_count(const NllMatrix& matrix);

// Header row of names, then one row per artist, two decimals.
std::string nll_matrix_tsv(const NllMatrix& matrix,
                           const std::vector<std::string>& names);

}  // namespace lyra

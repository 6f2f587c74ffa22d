#include "lyra/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

namespace lyra {

namespace {

constexpr int kIdBits = 21;

std::uint64_t key2(int a, int b) {
  return (std::uint64_t(a) << kIdBits) | std::uint64_t(b);
}

std::uint64_t key3(int a, int b, int c) {
  return (std::uint64_t(a) << (2 * kIdBits)) | (std::uint64_t(b) << kIdBits) |
         std::uint64_t(c);
}

}  // namespace

int KneserNeyModel::lookup(const std::string& token) const {
  auto it = id_of_.find(token);
  return it == id_of_.end() ? unk_ : it->second;
}

double KneserNeyModel::prob_unigram(int w) const {
  const double uniform = 1.0 / static_cast<double>(predicted_.size());
  const double total = static_cast<double>(unigram_ctx_.total);
  auto it = unigram_cont_.find(w);
  const double count = it == unigram_cont_.end() ? 0.0 : static_cast<double>(it->second);
  return std::max(count - discount_, 0.0) / total +
         discount_ * static_cast<double>(unigram_ctx_.types) / total * uniform;
}

double KneserNeyModel::prob_bigram(int v, int w) const {
  auto ctx = bigram_ctx_.find(v);
  if (ctx == bigram_ctx_.end()) return prob_unigram(w);
  const double total = static_cast<double>(ctx->second.total);
  auto it = bigram_cont_.find(key2(v, w));
  const double count = it == bigram_cont_.end() ? 0.0 : static_cast<double>(it->second);
  return std::max(count - discount_, 0.0) / total +
         discount_ * static_cast<double>(ctx->second.types) / total * prob_unigram(w);
}

double KneserNeyModel::prob_ids(int u, int v, int w) const {
  auto ctx = trigram_ctx_.find(key2(u, v));
  if (ctx == trigram_ctx_.end()) return prob_bigram(v, w);
  const double total = static_cast<double>(ctx->second.total);
  auto it = trigram_.find(key3(u, v, w));
  const double count = it == trigram_.end() ? 0.0 : static_cast<double>(it->second);
  return std::max(count - discount_, 0.0) / total +
         discount_ * static_cast<double>(ctx->second.types) / total * prob_bigram(v, w);
}

double KneserNeyModel::prob(const std::string& u, const std::string& v,
                            const std::string& w) const {
  return prob_ids(lookup(u), lookup(v), lookup(w));
}

double KneserNeyModel::logprob_line(const TokenLine& tokens) const {
  int u = bos_, v = bos_;
  double total = 0.0;
  for (const auto& token : tokens) {
    const int w = lookup(token);
    total += std::log(prob_ids(u, v, w));
    u = v;
    v = w;
  }
  return total + std::log(prob_ids(u, v, eos_));
}

std::vector<std::pair<std::string, std::string>>
KneserNeyModel::trigram_contexts() const {
  std::vector<std::pair<std::string, std::string>> out;
  const std::uint64_t mask = (std::uint64_t(1) << kIdBits) - 1;
  for (const auto& [key, stats] : trigram_ctx_) {
    out.emplace_back(token_of_[key >> kIdBits], token_of_[key & mask]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

KneserNeyModel fit_kn(const std::vector<TokenLine>& lines, double discount) {
  if (!(discount > 0.0 && discount < 1.0)) {
    throw std::invalid_argument("discount must be in (0,1)");
  }
  KneserNeyModel m;
  m.discount_ = discount;
  auto intern = [&m](const std::string& token) {
    auto [it, inserted] = m.id_of_.emplace(token, static_cast<int>(m.token_of_.size()));
    if (inserted) m.token_of_.push_back(token);
    return it->second;
  };
  m.bos_ = intern(KneserNeyModel::kBos);
  m.eos_ = intern(KneserNeyModel::kEos);
  m.unk_ = intern(KneserNeyModel::kUnk);

  bool any = false;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    any = true;
    int u = m.bos_, v = m.bos_;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      const int w = i < line.size() ? intern(line[i]) : m.eos_;
      ++m.trigram_[key3(u, v, w)];
      u = v;
      v = w;
    }
  }
  if (!any) throw std::invalid_argument("empty corpus");
  if (m.token_of_.size() >= (std::size_t(1) << kIdBits)) {
    throw std::length_error("vocabulary too large for n-gram keys");
  }

  const std::uint64_t mask = (std::uint64_t(1) << kIdBits) - 1;
  for (const auto& [key, count] : m.trigram_) {
    const int u = static_cast<int>(key >> (2 * kIdBits));
    const int v = static_cast<int>((key >> kIdBits) & mask);
    const int w = static_cast<int>(key & mask);
    auto& ctx = m.trigram_ctx_[key2(u, v)];
    ctx.total += count;
    ++ctx.types;
    // each distinct trigram is one left-extension of the bigram (v, w)
    ++m.bigram_cont_[key2(v, w)];
  }
  for (const auto& [key, count] : m.bigram_cont_) {
    const int v = static_cast<int>(key >> kIdBits);
    const int w = static_cast<int>(key & mask);
    auto& ctx = m.bigram_ctx_[v];
    ctx.total += count;
    ++ctx.types;
    ++m.unigram_cont_[w];
  }
  for (const auto& [w, count] : m.unigram_cont_) {
    m.unigram_ctx_.total += count;
    ++m.unigram_ctx_.types;
  }

  std::set<std::string> predicted;
  for (std::size_t id = 0; id < m.token_of_.size(); ++id)
    if (static_cast<int>(id) != m.bos_) predicted.insert(m.token_of_[id]);
  m.predicted_.assign(predicted.begin(), predicted.end());
  return m;
}

NllMatrix NllMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  NllMatrix m;
  m.rows = rows.size();
  m.cols = rows.empty() ? 0 : rows[0].size();
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw std::invalid_argument("ragged NLL matrix");
    m.values.insert(m.values.end(), r.begin(), r.end());
  }
  return m;
}

NllMatrix nll_matrix(const std::vector<std::vector<TokenLine>>& generated,
                     const std::vector<KneserNeyModel>& models) {
  if (generated.size() != models.size()) {
    throw std::invalid_argument("need one generated line set per language model");
  }
  NllMatrix m;
  m.rows = m.cols = models.size();
  m.values.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (generated[i].empty()) {
      throw std::invalid_argument("empty line set for artist " + std::to_string(i));
    }
    for (std::size_t j = 0; j < m.cols; ++j) {
      double total = 0.0;
      for (const auto& line : generated[i]) total -= models[j].logprob_line(line);
      m.values[i * m.cols + j] = total / static_cast<double>(generated[i].size());
    }
  }
  return m;
}

std::size_t diag_argmin_count(const NllMatrix& matrix) {
  if (matrix.rows != matrix.cols) {
    throw std::invalid_argument("diag_argmin_count needs a square matrix");
  }
  std::size_t count = 0;
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    const double diag = matrix.at(r, r);
    bool unique_min = true;
    for (std::size_t c = 0; c < matrix.cols && unique_min; ++c)
      if (c != r && matrix.at(r, c) <= diag) unique_min = false;
    count += unique_min;
  }
  return count;
}

std::string nll_matrix_tsv(const NllMatrix& matrix,
                           const std::vector<std::string>& names) {
  if (names.size() != matrix.rows || matrix.rows != matrix.cols) {
    throw std::invalid_argument("names do not match NLL matrix");
  }
  std::string out;
  for (const auto& n : names) out += '\t' + n;
  out += '\n';
  char cell[64];
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    out += names[r];
    for (std::size_t c = 0; c < matrix.cols; ++c) {
      std::snprintf(cell, sizeof cell, "\t%.2f", matrix.at(r, c));
      out += cell;
    }
    out += '\n';
  }
  return out;
}

}  // namespace lyra

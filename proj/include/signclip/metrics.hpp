#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "signclip/tensor.hpp"

namespace signclip {

/// Lowercases ASCII, splits every ASCII punctuation mark into its own token
/// (except '.' and ',' between two digits), then splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

/// Corpus BLEU-1..4 with clipped counts and brevity penalty
/// min(1, exp(1 - r/c)). A zero match count for n >= 2 is replaced by
/// 0.1 / max(total_n, 1); a zero unigram count makes every BLEU-k zero.
std::array<double, 4> bleu(std::span<const std::vector<std::string>> candidates,
                           std::span<const std::vector<std::string>> references);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Mean sentence-level ROUGE-L F1 (beta = 1); 0 when the LCS is empty.
double rouge_l(std::span<const std::vector<std::string>> candidates,
               std::span<const std::vector<std::string>> references);

struct ScoreReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  Index n_sentences = 0;
};

/// Tokenizes raw hypothesis and reference strings, then scores them.
ScoreReport score_corpus(std::span<const std::string> hypotheses, std::span<const std::string> references);

}  // namespace signclip

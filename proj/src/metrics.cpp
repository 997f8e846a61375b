#include "signclip/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "signclip/error.hpp"

namespace signclip {

namespace {

bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c); }
bool is_digit(unsigned char c) { return c < 128 && std::isdigit(c); }

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": " + std::to_string(a) + " candidates vs " + std::to_string(b) +
                        " references");
  }
}

using NgramCounts = std::map<std::span<const std::string>, std::size_t,
                             decltype([](std::span<const std::string> a, std::span<const std::string> b) {
                               return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
                             })>;

NgramCounts count_ngrams(const std::vector<std::string>& s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::span<const std::string>(s).subspan(i, n)];
  return counts;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    const bool numeric_sep = (c == '.' || c == ',') && i > 0 && i + 1 < text.size() &&
                             is_digit(static_cast<unsigned char>(text[i - 1])) &&
                             is_digit(static_cast<unsigned char>(text[i + 1]));
    if (is_punct(c) && !numeric_sep) {
      spaced += ' ';
      spaced += static_cast<char>(c);
      spaced += ' ';
    } else {
      spaced += c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
    }
  }
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : spaced) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current += ch;
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::array<double, 4> bleu(std::span<const std::vector<std::string>> candidates,
                           std::span<const std::vector<std::string>> references) {
  check_lengths(candidates.size(), references.size(), "bleu");
  std::array<double, 4> matches{}, totals{};
  double c_len = 0.0, r_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    c_len += static_cast<double>(candidates[s].size());
    r_len += static_cast<double>(references[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts ref = count_ngrams(references[s], n);
      for (const auto& [gram, count] : count_ngrams(candidates[s], n)) {
        auto it = ref.find(gram);
        if (it != ref.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  std::array<double, 4> scores{};
  if (c_len == 0.0 || matches[0] == 0.0) return scores;
  const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const double p = matches[n - 1] > 0.0 ? matches[n - 1] / totals[n - 1] : 0.1 / std::max(totals[n - 1], 1.0);
    log_sum += std::log(p);
    scores[n - 1] = bp * std::exp(log_sum / static_cast<double>(n));
  }
  return scores;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::vector<std::string>> candidates,
               std::span<const std::vector<std::string>> references) {
  check_lengths(candidates.size(), references.size(), "rouge_l");
  if (candidates.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto l = static_cast<double>(lcs_length(candidates[s], references[s]));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(candidates[s].size());
    const double r = l / static_cast<double>(references[s].size());
    total += 2.0 * p * r / (p + r);
  }
  return total / static_cast<double>(candidates.size());
}

ScoreReport score_corpus(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  check_lengths(hypotheses.size(), references.size(), "score_corpus");
  std::vector<std::vector<std::string>> cand, ref;
  for (const std::string& h : hypotheses) cand.push_back(tokenize(h));
  for (const std::string& r : references) ref.push_back(tokenize(r));
  return {bleu(cand, ref), rouge_l(cand, ref), static_cast<Index>(hypotheses.size())};
}

}  // namespace signclip

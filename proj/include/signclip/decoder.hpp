#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "signclip/rng.hpp"
#include "signclip/tensor.hpp"

namespace signclip {

class Vocabulary {
 public:
  static constexpr Index kPad = 0;
  static constexpr Index kBos = 1;
  static constexpr Index kEos = 2;
  static constexpr Index kUnk = 3;
  static constexpr Index kReserved = 4;

  Vocabulary();
  explicit Vocabulary(std::span<const std::string> words);

  /// Adds `word` if unseen; returns its id. Reserved spellings are rejected.
  Index add(const std::string& word);
  /// Id of `word`, or kUnk.
  Index id(const std::string& word) const;
  const std::string& token(Index id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<Index> encode(std::span<const std::string> words) const;
  /// Space-joined tokens, stopping at <eos> and skipping <pad>/<bos>.
  std::string decode(std::span<const Index> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> ids_;
};

/// Low-rank update s * B * A added to a frozen base map W (d_in -> d_out).
struct LoraAdapter {
  Tensor a;  // r x d_in
  Tensor b;  // d_out x r, zero at initialisation
  double scale = 1.0;

  static LoraAdapter init(Index d_in, Index d_out, Index rank, double scale, Rng& rng);
  Index rank() const { return a.rows(); }
  Index d_in() const { return a.cols(); }
  Index d_out() const { return b.rows(); }
  /// Throws ConfigError unless 1 <= r <= min(d_in, d_out) and the factors
  /// agree on r. Run configs additionally keep r strictly below min.
  void validate() const;
};

struct LoraVars {
  Var a, b;
  double scale;
};

LoraVars bind(Tape& tape, LoraAdapter& adapter);

/// base_out + s * (x A^T) B^T for row-major activations x (n x d_in).
Var apply_lora(Var base_out, Var x, const LoraVars& adapter);

struct DecoderConfig {
  Index d_model = 32;
  Index heads = 2;
  Index prompt_len = 4;
  Index ffn_mult = 4;
  Index max_positions = 32;
  Index vocab_size = 0;
};

/// Toy stand-in for a pretrained encoder-decoder LM: one block of causal
/// self-attention, cross-attention over [prompt | Z_conv] and a feedforward
/// map, followed by an untied output projection.
struct DecoderParams {
  DecoderConfig config;
  Tensor token_embedding;     // V x d
  Tensor position_embedding;  // max_positions x d
  Tensor prompt;              // P x d
  Tensor self_q, self_k, self_v, self_o;
  Tensor cross_q, cross_k, cross_v, cross_o;
  Tensor ffn_in, ffn_in_bias;    // d x fd, 1 x fd
  Tensor ffn_out, ffn_out_bias;  // fd x d, 1 x d
  Tensor out_proj, out_bias;     // d x V, 1 x V

  /// Self-attention q/v and both feedforward maps (with their biases) are
  /// frozen base weights adapted only through LoRA.
  static DecoderParams init(const DecoderConfig& config, Rng& rng);
};

/// Adapters on the self-attention query/value maps and both feedforward maps.
struct LoraSet {
  LoraAdapter self_q, self_v, ffn_in, ffn_out;

  static LoraSet init(const DecoderConfig& config, Index rank, double scale, Rng& rng);
};

struct DecoderVars {
  const DecoderConfig* config;
  Var token_embedding, position_embedding, prompt;
  Var self_q, self_k, self_v, self_o;
  Var cross_q, cross_k, cross_v, cross_o;
  Var ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
  Var out_proj, out_bias;
};

struct LoraSetVars {
  LoraVars self_q, self_v, ffn_in, ffn_out;
};

DecoderVars bind(Tape& tape, DecoderParams& params);
LoraSetVars bind(Tape& tape, LoraSet& adapters);

/// Fixed sinusoidal position code added to the visual memory rows.
Matrix sinusoidal_positions(Index length, Index d_model);

/// Logits (prefix length x V) for every prefix position. `adapters` may be
/// null to run the bare base model. Ids outside the vocabulary map to <unk>.
Var decode_logits(Var z_conv, std::span<const Index> prefix, const DecoderVars& params,
                  const LoraSetVars* adapters);

/// Token-mean cross-entropy with <pad> positions excluded.
Var translation_loss(Var logits, std::span<const Index> targets);

struct LossBreakdown {
  double l_trans = 0.0;
  double l_vt = 0.0;
  double l_sm = 0.0;
  double l_total = 0.0;
  bool operator==(const LossBreakdown&) const = default;
};

inline constexpr double kDefaultAlpha = 1.0;
inline constexpr double kDefaultBeta = 0.2;

LossBreakdown total_loss(double l_trans, double l_vt, double l_sm, double alpha = kDefaultAlpha,
                         double beta = kDefaultBeta);

/// Next-token logits (1 x V) for a prefix.
using StepLogits = std::function<RowVector(std::span<const Index> prefix)>;

/// Greedy argmax decoding from <bos> until <eos> or `max_len` tokens. <pad>
/// and <bos> are never emitted; ties go to the lowest id. The returned
/// sequence excludes <bos> and <eos>.
std::vector<Index> greedy_decode(const StepLogits& step, Index max_len);

std::vector<Index> greedy_translate(const Matrix& z_conv, DecoderParams& params, LoraSet* adapters, Index max_len);

}  // namespace signclip

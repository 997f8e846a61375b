#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signclip/decoder.hpp"
#include "signclip/encoders.hpp"
#include "signclip/fusion.hpp"
#include "signclip/keyvalue.hpp"
#include "signclip/metrics.hpp"
#include "signclip/optim.hpp"
#include "signclip/synth.hpp"

namespace signclip {

struct ModelConfig {
  Index d_model = 32;
  Index heads = 2;
  Index prompt_len = 4;
  Index ffn_mult = 4;
  Index max_positions = 32;
  Index lora_rank = 4;
  double lora_scale = 1.0;
  Index kernel_width = 5;
  double temperature = 0.1;
  Index spatial_input = 8;  // r: the spatial encoder sees r x r views
  Index mouth_height = 16;
  Index mouth_width = 24;
  double mouth_margin = 0.10;
  Index max_decode_len = 12;
  std::uint64_t encoder_seed = 7;  // frozen stub encoders and text embedding

  void validate() const;
};

std::span<const Field<ModelConfig>> model_fields();

/// Which visual streams feed the fusion block. A disabled stream is replaced
/// by zeros; the gate can be pinned open (spatial only) or closed (mouth
/// only).
struct StreamConfig {
  bool spatial = true;
  bool mouth = true;
  GateMode gate = GateMode::learned;
};

std::string gate_mode_name(GateMode g);
GateMode parse_gate_mode(const std::string& name);

struct LossWeights {
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
};

/// Every tensor of the translation model. Frozen: the two stub encoders, the
/// text embedding and the LoRA base maps inside the decoder.
struct Model {
  ModelConfig config;
  Index channels = 3;
  Vocabulary vocab;
  StubEncoder spatial_encoder;
  StubEncoder mouth_encoder;
  Tensor text_embedding;  // V x d, stands in for a frozen sentence encoder
  FusionParams fusion;
  AlignmentParams alignment;
  DecoderParams decoder;
  LoraSet lora;

  static Model init(const ModelConfig& config, Vocabulary vocab, Index channels, std::uint64_t seed);

  /// Parameters updated by the optimiser, in a fixed order.
  std::vector<Tensor*> trainable();
  /// Frozen tensors whose checksums must never change.
  std::vector<const Tensor*> frozen() const;
  /// Every tensor with a stable name, for checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
};

/// Frozen-encoder features of one sample, computed once.
struct EncodedSample {
  Matrix spatial;  // T x 2d
  Matrix mouth;    // T x d
  std::vector<Index> target;  // word ids followed by <eos>
  std::vector<Index> words;   // word ids only
  std::string reference;
};

EncodedSample encode_sample(const Model& model, const SyntheticSample& sample);
std::vector<EncodedSample> encode_samples(const Model& model, std::span<const SyntheticSample> samples);

/// Samples padded to common lengths. Features are padded by repeating the
/// last valid frame, targets by <pad>; `mask[i][t]` marks valid frames.
struct Batch {
  std::vector<Matrix> spatial;
  std::vector<Matrix> mouth;
  std::vector<Index> lengths;
  std::vector<std::vector<bool>> mask;
  std::vector<std::vector<Index>> targets;
  std::vector<std::vector<Index>> words;

  Index size() const { return static_cast<Index>(lengths.size()); }
};

Batch make_batch(std::span<const EncodedSample* const> samples);

struct StepOptions {
  LossWeights weights;
  StreamConfig streams;
  /// When false the contrastive terms are not even built (reported as 0).
  bool compute_alignment = true;
};

/// Loss values of one batch without touching parameters.
LossBreakdown evaluate_losses(Model& model, const Batch& batch, const StepOptions& options);

/// One forward, backward and optimiser update; returns the pre-update losses.
/// Terms with zero weight are still reported but left out of the gradient.
/// A non-finite loss component or updated parameter raises DivergenceError
/// naming it.
LossBreakdown train_step(Model& model, AdamW& optimizer, const Batch& batch, const StepOptions& options);

/// Z_fused for one sample, before the temporal projection (no gradients).
Matrix fused_sequence(Model& model, const EncodedSample& sample, const StreamConfig& streams);

/// Z_conv for one sample (no gradients).
Matrix visual_sequence(Model& model, const EncodedSample& sample, const StreamConfig& streams);

std::vector<Index> translate(Model& model, const EncodedSample& sample, const StreamConfig& streams);

struct Evaluation {
  ScoreReport scores;
  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
};

Evaluation evaluate(Model& model, std::span<const EncodedSample> samples, const StreamConfig& streams);

// Checkpoints -----------------------------------------------------------------
//
// Little-endian container:
//   8 bytes  magic "SGNCKPT1"
//   u64 seed
//   u64 n + n bytes   config echo (key = value text)
//   u64 V, then V x (u64 n + n bytes)   vocabulary tokens in id order
//   u64 K, then K x tensor
// tensor: u64 n + n bytes name, u64 rank, rank x u64 dims, prod(dims) doubles.

struct Checkpoint {
  Model model;
  StreamConfig streams;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::string config_echo;
};

std::string model_config_echo(const Model& model, const StreamConfig& streams, const LossWeights& weights);

void save_checkpoint(const std::filesystem::path& path, Model& model, const StreamConfig& streams,
                     const LossWeights& weights, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace signclip

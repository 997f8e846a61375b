#pragma once

#include <optional>

#include "signclip/rng.hpp"
#include "signclip/tensor.hpp"

namespace signclip {

/// Learnable parameters of the multimodal contrastive fusion block.
struct FusionParams {
  Tensor spatial_projection;  // 2d x d
  Tensor gate_hidden_w;       // 2d x d
  Tensor gate_hidden_b;       // 1 x d
  Tensor gate_out_w;          // d x d
  Tensor gate_out_b;          // 1 x d
  Tensor temporal_kernels;    // [d, d, width]
  Index kernel_width = 5;
  double temperature = 0.1;

  static FusionParams init(Index d_model, Index kernel_width, double temperature, Rng& rng);
  Index d_model() const { return spatial_projection.cols(); }
  /// Throws ConfigError on a non-positive temperature, even width or
  /// non-finite weights.
  void validate() const;
};

/// Projections that summarise streams into the global embeddings compared by
/// the two contrastive losses.
struct AlignmentParams {
  Tensor spatial_pool;  // d x d, applied after the shared spatial projection
  Tensor mouth_pool;    // d x d
  Tensor text_pool;     // d x d

  static AlignmentParams init(Index d_model, Rng& rng);
};

/// FusionParams recorded as leaves on one tape.
struct FusionVars {
  Var spatial_projection, gate_hidden_w, gate_hidden_b, gate_out_w, gate_out_b, temporal_kernels;
  Index kernel_width;
  double temperature;
};

struct AlignmentVars {
  Var spatial_pool, mouth_pool, text_pool;
};

FusionVars bind(Tape& tape, FusionParams& params);
AlignmentVars bind(Tape& tape, AlignmentParams& params);

/// How the gate is produced: by the MLP, or pinned fully open (spatial only)
/// or fully closed (mouth only) for ablations.
enum class GateMode { learned, open, closed };

struct FusedStreams {
  Var fused;  // T x d
  Var gate;   // T x d, entries in (0, 1) when learned
};

/// Z_s (T x 2d) -> Z_s' (T x d).
Var project_spatial(Var spatial, const FusionVars& params);

/// gate * a + (1 - gate) * b, elementwise, with the result clamped to the
/// closed segment [min(a, b), max(a, b)] to absorb rounding. Gradients are
/// those of the unclamped expression.
Var convex_blend(Var gate, Var a, Var b);

/// g = sigmoid(MLP([Z_s' | Z_m])); fused = g * Z_s' + (1 - g) * Z_m.
FusedStreams gated_fuse(Var spatial_projected, Var mouth, const FusionVars& params,
                        GateMode mode = GateMode::learned);

/// Transpose to d x T, same-padded conv1d, transpose back to T x d.
Var temporal_project(Var fused, const FusionVars& params);

/// Time mean (1 x width), optionally followed by a linear projection.
Var pool_global(Var sequence, std::optional<Var> projection = std::nullopt);

/// Mean over rows of the cross-entropy between cosine-similarity logits
/// S / temperature and the diagonal. anchors and positives are N x d.
Var infonce(Var anchors, Var positives, double temperature);

}  // namespace signclip

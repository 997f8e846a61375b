#include "signclip/fusion.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "signclip/error.hpp"

namespace signclip {

namespace {

Matrix glorot(Rng& rng, Index fan_in, Index fan_out) {
  return rng.normal_matrix(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace

FusionParams FusionParams::init(Index d, Index width, double temperature, Rng& rng) {
  if (width < 1 || width % 2 == 0) throw ConfigError("FusionParams: kernel width must be odd");
  FusionParams p;
  p.spatial_projection = Tensor(glorot(rng, 2 * d, d), true);
  p.gate_hidden_w = Tensor(glorot(rng, 2 * d, d), true);
  p.gate_hidden_b = Tensor(Matrix::Zero(1, d), true);
  p.gate_out_w = Tensor(glorot(rng, d, d), true);
  p.gate_out_b = Tensor(Matrix::Zero(1, d), true);
  // Centre tap starts at identity so the projector begins as a pass-through
  // plus small temporal mixing.
  Matrix k = rng.normal_matrix(d, d * width, 1.0 / std::sqrt(static_cast<double>(d * width)));
  for (Index c = 0; c < d; ++c) k(c, c * width + width / 2) += 1.0;
  p.temporal_kernels = Tensor(Shape{d, d, width}, std::move(k), true);
  p.kernel_width = width;
  p.temperature = temperature;
  p.validate();
  return p;
}

void FusionParams::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("FusionParams: temperature must be positive, got " + std::to_string(temperature));
  }
  if (kernel_width < 1 || kernel_width % 2 == 0) throw ConfigError("FusionParams: kernel width must be odd");
  for (const Tensor* t : {&spatial_projection, &gate_hidden_w, &gate_hidden_b, &gate_out_w, &gate_out_b,
                          &temporal_kernels}) {
    if (!t->value().allFinite()) throw ConfigError("FusionParams: non-finite parameter");
  }
}

AlignmentParams AlignmentParams::init(Index d, Rng& rng) {
  return {Tensor(glorot(rng, d, d), true), Tensor(glorot(rng, d, d), true), Tensor(glorot(rng, d, d), true)};
}

FusionVars bind(Tape& tape, FusionParams& p) {
  return {tape.leaf(p.spatial_projection), tape.leaf(p.gate_hidden_w), tape.leaf(p.gate_hidden_b),
          tape.leaf(p.gate_out_w),         tape.leaf(p.gate_out_b),    tape.leaf(p.temporal_kernels),
          p.kernel_width,                  p.temperature};
}

AlignmentVars bind(Tape& tape, AlignmentParams& p) {
  return {tape.leaf(p.spatial_pool), tape.leaf(p.mouth_pool), tape.leaf(p.text_pool)};
}

Var project_spatial(Var spatial, const FusionVars& params) {
  const Index d = params.spatial_projection.cols();
  if (spatial.cols() != 2 * d) {
    throw DimensionError("project_spatial: expected width " + std::to_string(2 * d) + ", got " +
                         std::to_string(spatial.cols()));
  }
  return matmul(spatial, params.spatial_projection);
}

Var convex_blend(Var gate, Var a, Var b) {
  const Matrix& gv = gate.value();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (gv.rows() != av.rows() || gv.cols() != av.cols() || av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw DimensionError("convex_blend: shapes " + shape_string(gv.rows(), gv.cols()) + ", " +
                         shape_string(av.rows(), av.cols()) + ", " + shape_string(bv.rows(), bv.cols()) +
                         " must agree");
  }
  Matrix out(av.rows(), av.cols());
  for (Index i = 0; i < out.size(); ++i) {
    const double g = gv.data()[i], x = av.data()[i], y = bv.data()[i];
    const double v = g * x + (1.0 - g) * y;
    out.data()[i] = std::clamp(v, std::min(x, y), std::max(x, y));
  }
  const std::size_t ig = gate.id(), ia = a.id(), ib = b.id();
  return gate.tape()->record(std::move(out), {ig, ia, ib}, [ig, ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& gv = tp.value(ig);
    if (tp.needs_grad(ig)) tp.accumulate(ig, g.cwiseProduct(tp.value(ia) - tp.value(ib)));
    if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(gv));
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct((1.0 - gv.array()).matrix()));
  });
}

FusedStreams gated_fuse(Var spatial_projected, Var mouth, const FusionVars& params, GateMode mode) {
  const Matrix& s = spatial_projected.value();
  const Matrix& m = mouth.value();
  if (s.rows() != m.rows() || s.cols() != m.cols()) {
    throw DimensionError("gated_fuse: Z_s' " + shape_string(s.rows(), s.cols()) + " and Z_m " +
                         shape_string(m.rows(), m.cols()) + " differ");
  }
  Tape& tape = *spatial_projected.tape();
  Var gate;
  switch (mode) {
    case GateMode::learned: {
      Var joint = concat_cols(spatial_projected, mouth);
      Var hidden = tanh(add_row(matmul(joint, params.gate_hidden_w), params.gate_hidden_b));
      gate = sigmoid(add_row(matmul(hidden, params.gate_out_w), params.gate_out_b));
      break;
    }
    case GateMode::open:
      gate = tape.constant(Matrix::Ones(s.rows(), s.cols()));
      break;
    case GateMode::closed:
      gate = tape.constant(Matrix::Zero(s.rows(), s.cols()));
      break;
  }
  return {convex_blend(gate, spatial_projected, mouth), gate};
}

Var temporal_project(Var fused, const FusionVars& params) {
  if (fused.rows() < 1) throw ContractError("temporal_project: empty sequence");
  return transpose(conv1d(transpose(fused), params.temporal_kernels, params.kernel_width));
}

Var pool_global(Var sequence, std::optional<Var> projection) {
  Var pooled = mean_rows(sequence);
  if (projection) pooled = matmul(pooled, *projection);
  return pooled;
}

Var infonce(Var anchors, Var positives, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("infonce: temperature must be positive");
  const Index n = anchors.rows();
  if (n < 1) throw ContractError("infonce: empty batch");
  if (positives.rows() != n || positives.cols() != anchors.cols()) {
    throw DimensionError("infonce: anchors " + shape_string(n, anchors.cols()) + " vs positives " +
                         shape_string(positives.rows(), positives.cols()));
  }
  Var a = l2_normalize_rows(anchors);
  Var p = l2_normalize_rows(positives);
  Var logits = scale(matmul(a, transpose(p)), 1.0 / temperature);
  std::vector<Index> diagonal(static_cast<std::size_t>(n));
  std::iota(diagonal.begin(), diagonal.end(), Index{0});
  return cross_entropy_rows(logits, diagonal);
}

}  // namespace signclip

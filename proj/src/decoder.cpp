#include "signclip/decoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "signclip/error.hpp"

namespace signclip {

// --- vocabulary --------------------------------------------------------------

namespace {
const std::array<std::string, 4> kReservedTokens{"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const std::string& t : kReservedTokens) {
    ids_.emplace(t, static_cast<Index>(tokens_.size()));
    tokens_.push_back(t);
  }
}

Vocabulary::Vocabulary(std::span<const std::string> words) : Vocabulary() {
  for (const std::string& w : words) add(w);
}

Index Vocabulary::add(const std::string& word) {
  if (word.empty()) throw ContractError("Vocabulary: empty token");
  if (auto it = ids_.find(word); it != ids_.end()) {
    if (it->second < kReserved) throw ContractError("Vocabulary: '" + word + "' is reserved");
    return it->second;
  }
  const Index id = size();
  ids_.emplace(word, id);
  tokens_.push_back(word);
  return id;
}

Index Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(Index id) const {
  if (id < 0 || id >= size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<Index> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<Index> out;
  out.reserve(words.size());
  for (const std::string& w : words) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(std::span<const Index> ids) const {
  std::ostringstream os;
  bool first = true;
  for (Index i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos) continue;
    if (!first) os << ' ';
    os << token(i);
    first = false;
  }
  return os.str();
}

// --- LoRA --------------------------------------------------------------------

LoraAdapter LoraAdapter::init(Index d_in, Index d_out, Index rank, double scale, Rng& rng) {
  if (rank < 1 || rank > std::min(d_in, d_out)) {
    throw ConfigError("LoraAdapter: rank " + std::to_string(rank) + " out of range for " + shape_string(d_out, d_in));
  }
  LoraAdapter l;
  l.a = Tensor(rng.normal_matrix(rank, d_in, 1.0 / std::sqrt(static_cast<double>(d_in))), true);
  l.b = Tensor(Matrix::Zero(d_out, rank), true);
  l.scale = scale;
  l.validate();
  return l;
}

void LoraAdapter::validate() const {
  const Index r = a.rows();
  if (r < 1 || r > std::min(a.cols(), b.rows())) {
    throw ConfigError("LoraAdapter: rank " + std::to_string(r) + " must satisfy 1 <= r <= min(" +
                      std::to_string(a.cols()) + ", " + std::to_string(b.rows()) + ")");
  }
  if (b.cols() != r) {
    throw ConfigError("LoraAdapter: A is " + shape_string(a.shape()) + " but B is " + shape_string(b.shape()));
  }
}

LoraVars bind(Tape& tape, LoraAdapter& adapter) {
  adapter.validate();
  return {tape.leaf(adapter.a), tape.leaf(adapter.b), adapter.scale};
}

Var apply_lora(Var base_out, Var x, const LoraVars& adapter) {
  const Index r = adapter.a.rows(), d_in = adapter.a.cols(), d_out = adapter.b.rows();
  if (adapter.b.cols() != r || x.cols() != d_in || base_out.cols() != d_out || base_out.rows() != x.rows()) {
    throw ConfigError("apply_lora: adapter A " + shape_string(r, d_in) + ", B " +
                      shape_string(d_out, adapter.b.cols()) + " does not fit x " + shape_string(x.rows(), x.cols()) +
                      " -> " + shape_string(base_out.rows(), base_out.cols()));
  }
  Var delta = matmul(matmul(x, transpose(adapter.a)), transpose(adapter.b));
  return add(base_out, scale(delta, adapter.scale));
}

// --- parameters --------------------------------------------------------------

namespace {

Tensor dense(Rng& rng, Index in, Index out, bool trainable = true) {
  return Tensor(rng.normal_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in))), trainable);
}

}  // namespace

DecoderParams DecoderParams::init(const DecoderConfig& c, Rng& rng) {
  if (c.vocab_size < 5) throw ConfigError("DecoderParams: vocabulary must hold at least 5 tokens");
  if (c.d_model % c.heads != 0) throw ConfigError("DecoderParams: d_model must divide evenly into heads");
  if (c.prompt_len < 0 || c.max_positions < 1) throw ConfigError("DecoderParams: bad prompt/position sizes");
  const Index d = c.d_model, fd = c.ffn_mult * c.d_model;
  DecoderParams p;
  p.config = c;
  p.token_embedding = Tensor(rng.normal_matrix(c.vocab_size, d, 1.0), true);
  p.position_embedding = Tensor(rng.normal_matrix(c.max_positions, d, 1.0), true);
  p.prompt = Tensor(rng.normal_matrix(std::max<Index>(c.prompt_len, 1), d, 1.0), true);
  if (c.prompt_len == 0) p.prompt = Tensor(Matrix::Zero(1, d), false);
  p.self_q = dense(rng, d, d, false);
  p.self_k = dense(rng, d, d);
  p.self_v = dense(rng, d, d, false);
  p.self_o = dense(rng, d, d);
  p.cross_q = dense(rng, d, d);
  p.cross_k = dense(rng, d, d);
  p.cross_v = dense(rng, d, d);
  p.cross_o = dense(rng, d, d);
  p.ffn_in = dense(rng, d, fd, false);
  p.ffn_in_bias = Tensor(Matrix::Zero(1, fd), false);
  p.ffn_out = dense(rng, fd, d, false);
  p.ffn_out_bias = Tensor(Matrix::Zero(1, d), false);
  p.out_proj = dense(rng, d, c.vocab_size);
  p.out_bias = Tensor(Matrix::Zero(1, c.vocab_size), true);
  return p;
}

LoraSet LoraSet::init(const DecoderConfig& c, Index rank, double scale, Rng& rng) {
  const Index d = c.d_model, fd = c.ffn_mult * c.d_model;
  return {LoraAdapter::init(d, d, rank, scale, rng), LoraAdapter::init(d, d, rank, scale, rng),
          LoraAdapter::init(d, fd, rank, scale, rng), LoraAdapter::init(fd, d, rank, scale, rng)};
}

DecoderVars bind(Tape& tape, DecoderParams& p) {
  DecoderVars v;
  v.config = &p.config;
  v.token_embedding = tape.leaf(p.token_embedding);
  v.position_embedding = tape.leaf(p.position_embedding);
  v.prompt = tape.leaf(p.prompt);
  v.self_q = tape.leaf(p.self_q);
  v.self_k = tape.leaf(p.self_k);
  v.self_v = tape.leaf(p.self_v);
  v.self_o = tape.leaf(p.self_o);
  v.cross_q = tape.leaf(p.cross_q);
  v.cross_k = tape.leaf(p.cross_k);
  v.cross_v = tape.leaf(p.cross_v);
  v.cross_o = tape.leaf(p.cross_o);
  v.ffn_in = tape.leaf(p.ffn_in);
  v.ffn_in_bias = tape.leaf(p.ffn_in_bias);
  v.ffn_out = tape.leaf(p.ffn_out);
  v.ffn_out_bias = tape.leaf(p.ffn_out_bias);
  v.out_proj = tape.leaf(p.out_proj);
  v.out_bias = tape.leaf(p.out_bias);
  return v;
}

LoraSetVars bind(Tape& tape, LoraSet& l) {
  return {bind(tape, l.self_q), bind(tape, l.self_v), bind(tape, l.ffn_in), bind(tape, l.ffn_out)};
}

Matrix sinusoidal_positions(Index length, Index d) {
  Matrix pe(length, d);
  for (Index t = 0; t < length; ++t) {
    for (Index i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// --- forward -----------------------------------------------------------------

namespace {

Var linear(Var x, Var w, const LoraVars* adapter) {
  Var y = matmul(x, w);
  return adapter ? apply_lora(y, x, *adapter) : y;
}

Var attention(Var queries, Var keys_values, Var wq, Var wk, Var wv, Var wo, Index heads, SoftmaxMask mask,
              const LoraVars* lora_q, const LoraVars* lora_v) {
  Var q = linear(queries, wq, lora_q);
  Var k = matmul(keys_values, wk);
  Var v = linear(keys_values, wv, lora_v);
  const Index d = q.cols(), dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var merged;
  for (Index h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
    Var out = matmul(weights, vh);
    merged = h == 0 ? out : concat_cols(merged, out);
  }
  return matmul(merged, wo);
}

}  // namespace

Var decode_logits(Var z_conv, std::span<const Index> prefix, const DecoderVars& p, const LoraSetVars* adapters) {
  const DecoderConfig& c = *p.config;
  if (prefix.empty()) throw ContractError("decode_logits: empty prefix");
  if (prefix.front() != Vocabulary::kBos) throw ContractError("decode_logits: prefix must start with <bos>");
  if (z_conv.rows() < 1) throw ContractError("decode_logits: empty visual sequence");
  if (z_conv.cols() != c.d_model) {
    throw DimensionError("decode_logits: Z_conv width " + std::to_string(z_conv.cols()) + " != d_model " +
                         std::to_string(c.d_model));
  }
  const Index len = static_cast<Index>(prefix.size());
  if (len > c.max_positions) {
    throw ContractError("decode_logits: prefix length " + std::to_string(len) + " exceeds " +
                        std::to_string(c.max_positions) + " positions");
  }
  Tape& tape = *z_conv.tape();

  std::vector<Index> ids(prefix.begin(), prefix.end());
  for (Index& id : ids) {
    if (id < 0 || id >= c.vocab_size) id = Vocabulary::kUnk;
  }

  Var visual = add(z_conv, tape.constant(sinusoidal_positions(z_conv.rows(), c.d_model)));
  Var memory = c.prompt_len > 0 ? concat_rows(p.prompt, visual) : visual;

  Var x = add(gather_rows(p.token_embedding, ids), slice_rows(p.position_embedding, 0, len));

  const LoraVars* lq = adapters ? &adapters->self_q : nullptr;
  const LoraVars* lv = adapters ? &adapters->self_v : nullptr;
  Var h = layer_norm_rows(x);
  x = add(x, attention(h, h, p.self_q, p.self_k, p.self_v, p.self_o, c.heads, SoftmaxMask::causal, lq, lv));

  h = layer_norm_rows(x);
  x = add(x, attention(h, memory, p.cross_q, p.cross_k, p.cross_v, p.cross_o, c.heads, SoftmaxMask::none, nullptr,
                       nullptr));

  h = layer_norm_rows(x);
  Var inner = relu(add_row(linear(h, p.ffn_in, adapters ? &adapters->ffn_in : nullptr), p.ffn_in_bias));
  x = add(x, add_row(linear(inner, p.ffn_out, adapters ? &adapters->ffn_out : nullptr), p.ffn_out_bias));

  return add_row(matmul(layer_norm_rows(x), p.out_proj), p.out_bias);
}

Var translation_loss(Var logits, std::span<const Index> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("translation_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " logit rows");
  }
  Index last = -1;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != Vocabulary::kPad) last = static_cast<Index>(i);
  }
  if (last < 0) throw ContractError("translation_loss: target is all <pad>");
  if (targets[static_cast<std::size_t>(last)] != Vocabulary::kEos) {
    throw ContractError("translation_loss: target must end with <eos>");
  }
  return cross_entropy_rows(logits, targets, Vocabulary::kPad);
}

LossBreakdown total_loss(double l_trans, double l_vt, double l_sm, double alpha, double beta) {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("total_loss: weights must be non-negative");
  if (!std::isfinite(l_trans) || !std::isfinite(l_vt) || !std::isfinite(l_sm)) {
    throw DivergenceError("total_loss: non-finite component");
  }
  return {l_trans, l_vt, l_sm, l_trans + alpha * l_vt + beta * l_sm};
}

std::vector<Index> greedy_decode(const StepLogits& step, Index max_len) {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
  std::vector<Index> prefix{Vocabulary::kBos};
  std::vector<Index> out;
  while (static_cast<Index>(out.size()) < max_len) {
    const RowVector logits = step(prefix);
    Index best = -1;
    for (Index j = 0; j < logits.size(); ++j) {
      if (j == Vocabulary::kPad || j == Vocabulary::kBos) continue;
      if (best < 0 || logits(j) > logits(best)) best = j;
    }
    if (best < 0 || best == Vocabulary::kEos) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

std::vector<Index> greedy_translate(const Matrix& z_conv, DecoderParams& params, LoraSet* adapters, Index max_len) {
  const Index limit = std::min(max_len, params.config.max_positions - 1);
  return greedy_decode(
      [&](std::span<const Index> prefix) {
        Tape tape(false);
        DecoderVars dv = bind(tape, params);
        LoraSetVars lv;
        if (adapters) lv = bind(tape, *adapters);
        Var logits = decode_logits(tape.constant(z_conv), prefix, dv, adapters ? &lv : nullptr);
        return RowVector(logits.value().row(logits.rows() - 1));
      },
      limit);
}

}  // namespace signclip

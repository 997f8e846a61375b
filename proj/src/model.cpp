#include "signclip/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "signclip/error.hpp"
#include "signclip/rng.hpp"

namespace signclip {

namespace {

using MF = Field<ModelConfig>;
const MF kModelFields[] = {
    {"d_model", &ModelConfig::d_model, "width of every feature stream"},
    {"heads", &ModelConfig::heads, "attention heads in the decoder"},
    {"prompt_len", &ModelConfig::prompt_len, "learned prompt vectors prepended to the visual memory"},
    {"ffn_mult", &ModelConfig::ffn_mult, "decoder feedforward expansion"},
    {"max_positions", &ModelConfig::max_positions, "decoder position table size"},
    {"lora_rank", &ModelConfig::lora_rank, "rank r of every LoRA adapter"},
    {"lora_scale", &ModelConfig::lora_scale, "LoRA output scale s"},
    {"kernel_width", &ModelConfig::kernel_width, "temporal Conv1D width (odd)"},
    {"temperature", &ModelConfig::temperature, "InfoNCE temperature tau"},
    {"spatial_input", &ModelConfig::spatial_input, "spatial encoder input side r (S2 uses r and 2r)"},
    {"mouth_height", &ModelConfig::mouth_height, "mouth crop height"},
    {"mouth_width", &ModelConfig::mouth_width, "mouth crop width"},
    {"mouth_margin", &ModelConfig::mouth_margin, "mouth box margin as a fraction of its larger side"},
    {"max_decode_len", &ModelConfig::max_decode_len, "greedy decoding length cap"},
    {"encoder_seed", &ModelConfig::encoder_seed, "seed of the frozen stub encoders and text embedding"},
};

constexpr std::uint64_t kParamStream = 0x5041524D;  // "PARM"

}  // namespace

std::span<const Field<ModelConfig>> model_fields() { return kModelFields; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (d_model < 2) fail("d_model must be >= 2");
  if (heads < 1 || d_model % heads != 0) fail("heads must divide d_model");
  if (prompt_len < 0) fail("prompt_len must be >= 0");
  if (ffn_mult < 1) fail("ffn_mult must be >= 1");
  if (max_positions < 2) fail("max_positions must be >= 2");
  if (lora_rank < 1 || lora_rank >= d_model) fail("lora_rank must satisfy 1 <= r < d_model");
  if (!std::isfinite(lora_scale)) fail("lora_scale must be finite");
  if (kernel_width < 1 || kernel_width % 2 == 0) fail("kernel_width must be odd");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (spatial_input < 1) fail("spatial_input must be >= 1");
  if (mouth_height < 1 || mouth_width < 1) fail("mouth crop must be at least 1x1");
  if (!(mouth_margin >= 0.0 && mouth_margin <= 0.5)) fail("mouth_margin must lie in [0, 0.5]");
  if (max_decode_len < 1) fail("max_decode_len must be >= 1");
}

std::string gate_mode_name(GateMode g) {
  switch (g) {
    case GateMode::learned: return "learned";
    case GateMode::open: return "open";
    case GateMode::closed: return "closed";
  }
  return "?";
}

GateMode parse_gate_mode(const std::string& name) {
  if (name == "learned") return GateMode::learned;
  if (name == "open") return GateMode::open;
  if (name == "closed") return GateMode::closed;
  throw ConfigError("unknown gate mode '" + name + "'");
}

// --- model -------------------------------------------------------------------

Model Model::init(const ModelConfig& config, Vocabulary vocab, Index channels, std::uint64_t seed) {
  config.validate();
  if (channels < 1) throw ConfigError("Model: channels must be >= 1");
  Model m;
  m.config = config;
  m.channels = channels;
  m.vocab = std::move(vocab);
  const Index d = config.d_model;
  m.spatial_encoder =
      StubEncoder(config.spatial_input, config.spatial_input, channels, d, derive_seed(config.encoder_seed, 1));
  m.mouth_encoder =
      StubEncoder(config.mouth_height, config.mouth_width, channels, d, derive_seed(config.encoder_seed, 2));
  Rng text_rng(config.encoder_seed, 3);
  m.text_embedding = Tensor(text_rng.normal_matrix(m.vocab.size(), d, 1.0), false);

  Rng rng(seed, kParamStream);
  m.fusion = FusionParams::init(d, config.kernel_width, config.temperature, rng);
  m.alignment = AlignmentParams::init(d, rng);
  DecoderConfig dc;
  dc.d_model = d;
  dc.heads = config.heads;
  dc.prompt_len = config.prompt_len;
  dc.ffn_mult = config.ffn_mult;
  dc.max_positions = config.max_positions;
  dc.vocab_size = m.vocab.size();
  m.decoder = DecoderParams::init(dc, rng);
  m.lora = LoraSet::init(dc, config.lora_rank, config.lora_scale, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_tensors() {
  DecoderParams& p = decoder;
  return {
      {"text_embedding", &text_embedding},
      {"fusion.spatial_projection", &fusion.spatial_projection},
      {"fusion.gate_hidden_w", &fusion.gate_hidden_w},
      {"fusion.gate_hidden_b", &fusion.gate_hidden_b},
      {"fusion.gate_out_w", &fusion.gate_out_w},
      {"fusion.gate_out_b", &fusion.gate_out_b},
      {"fusion.temporal_kernels", &fusion.temporal_kernels},
      {"align.spatial_pool", &alignment.spatial_pool},
      {"align.mouth_pool", &alignment.mouth_pool},
      {"align.text_pool", &alignment.text_pool},
      {"decoder.token_embedding", &p.token_embedding},
      {"decoder.position_embedding", &p.position_embedding},
      {"decoder.prompt", &p.prompt},
      {"decoder.self_q", &p.self_q},
      {"decoder.self_k", &p.self_k},
      {"decoder.self_v", &p.self_v},
      {"decoder.self_o", &p.self_o},
      {"decoder.cross_q", &p.cross_q},
      {"decoder.cross_k", &p.cross_k},
      {"decoder.cross_v", &p.cross_v},
      {"decoder.cross_o", &p.cross_o},
      {"decoder.ffn_in", &p.ffn_in},
      {"decoder.ffn_in_bias", &p.ffn_in_bias},
      {"decoder.ffn_out", &p.ffn_out},
      {"decoder.ffn_out_bias", &p.ffn_out_bias},
      {"decoder.out_proj", &p.out_proj},
      {"decoder.out_bias", &p.out_bias},
      {"lora.self_q.a", &lora.self_q.a},
      {"lora.self_q.b", &lora.self_q.b},
      {"lora.self_v.a", &lora.self_v.a},
      {"lora.self_v.b", &lora.self_v.b},
      {"lora.ffn_in.a", &lora.ffn_in.a},
      {"lora.ffn_in.b", &lora.ffn_in.b},
      {"lora.ffn_out.a", &lora.ffn_out.a},
      {"lora.ffn_out.b", &lora.ffn_out.b},
  };
}

std::vector<Tensor*> Model::trainable() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_tensors())
    if (t->requires_grad()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> Model::frozen() const {
  const DecoderParams& p = decoder;
  return {&spatial_encoder.weights(), &mouth_encoder.weights(), &text_embedding, &p.self_q, &p.self_v,
          &p.ffn_in, &p.ffn_in_bias, &p.ffn_out, &p.ffn_out_bias};
}

// --- features and batches ----------------------------------------------------

EncodedSample encode_sample(const Model& model, const SyntheticSample& sample) {
  const ModelConfig& c = model.config;
  EncodedSample e;
  e.spatial = encode_spatial_sequence(sample.video, model.spatial_encoder).values;
  const MouthClip clip =
      crop_mouth_region(sample.video, sample.landmarks, {c.mouth_margin, c.mouth_height, c.mouth_width});
  e.mouth = encode_mouth_sequence(clip, model.mouth_encoder).values;
  e.words = model.vocab.encode(sample.words);
  e.target = e.words;
  e.target.push_back(Vocabulary::kEos);
  e.reference = sample.sentence();
  return e;
}

std::vector<EncodedSample> encode_samples(const Model& model, std::span<const SyntheticSample> samples) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const SyntheticSample& s : samples) out.push_back(encode_sample(model, s));
  return out;
}

Batch make_batch(std::span<const EncodedSample* const> samples) {
  if (samples.empty()) throw ContractError("make_batch: empty batch");
  Index t_max = 0, u_max = 0;
  for (const EncodedSample* s : samples) {
    if (s->spatial.rows() < 1 || s->spatial.rows() != s->mouth.rows())
      throw ContractError("make_batch: sample streams must share a non-zero length");
    if (s->target.empty() || s->target.back() != Vocabulary::kEos)
      throw ContractError("make_batch: targets must end with <eos>");
    t_max = std::max(t_max, s->spatial.rows());
    u_max = std::max(u_max, static_cast<Index>(s->target.size()));
  }
  Batch b;
  for (const EncodedSample* s : samples) {
    const Index t = s->spatial.rows();
    auto pad_frames = [&](const Matrix& m) {
      Matrix out(t_max, m.cols());
      out.topRows(t) = m;
      for (Index r = t; r < t_max; ++r) out.row(r) = m.row(t - 1);
      return out;
    };
    b.spatial.push_back(pad_frames(s->spatial));
    b.mouth.push_back(pad_frames(s->mouth));
    b.lengths.push_back(t);
    std::vector<bool> mask(static_cast<std::size_t>(t_max), false);
    std::fill(mask.begin(), mask.begin() + t, true);
    b.mask.push_back(std::move(mask));
    std::vector<Index> target = s->target;
    target.resize(static_cast<std::size_t>(u_max), Vocabulary::kPad);
    b.targets.push_back(std::move(target));
    b.words.push_back(s->words);
  }
  return b;
}

// --- forward -----------------------------------------------------------------

namespace {

struct Bound {
  FusionVars fusion;
  AlignmentVars alignment;
  DecoderVars decoder;
  LoraSetVars lora;
};

Bound bind_model(Tape& tape, Model& m) {
  return {bind(tape, m.fusion), bind(tape, m.alignment), bind(tape, m.decoder), bind(tape, m.lora)};
}

struct SampleVars {
  Var projected;  // Z_s'
  Var mouth;      // Z_m
  Var fused;      // Z_fused
  Var conv;       // Z_conv
};

SampleVars encode_streams(Tape& tape, const Model& m, const Bound& v, const Matrix& spatial, const Matrix& mouth,
                          Index length, const StreamConfig& s) {
  const Index d = m.config.d_model;
  Matrix sp = s.spatial ? Matrix(spatial.topRows(length)) : Matrix::Zero(length, 2 * d);
  Matrix mo = s.mouth ? Matrix(mouth.topRows(length)) : Matrix::Zero(length, d);
  SampleVars out;
  out.projected = project_spatial(tape.constant(std::move(sp)), v.fusion);
  out.mouth = tape.constant(std::move(mo));
  out.fused = gated_fuse(out.projected, out.mouth, v.fusion, s.gate).fused;
  out.conv = temporal_project(out.fused, v.fusion);
  return out;
}

struct ForwardVars {
  Var l_trans;
  std::optional<Var> l_vt;
  std::optional<Var> l_sm;
};

ForwardVars forward(Tape& tape, Model& m, const Batch& b, const StreamConfig& s, bool alignment) {
  const Bound v = bind_model(tape, m);
  std::vector<Var> logits, z_v, z_t, z_s, z_m;
  std::vector<Index> targets;
  const bool align_streams = alignment && s.spatial && s.mouth;
  for (Index i = 0; i < b.size(); ++i) {
    const SampleVars sv = encode_streams(tape, m, v, b.spatial[i], b.mouth[i], b.lengths[i], s);
    const std::vector<Index>& target = b.targets[i];
    std::vector<Index> prefix{Vocabulary::kBos};
    prefix.insert(prefix.end(), target.begin(), target.end() - 1);
    logits.push_back(decode_logits(sv.conv, prefix, v.decoder, &v.lora));
    targets.insert(targets.end(), target.begin(), target.end());

    if (!alignment) continue;
    z_v.push_back(pool_global(sv.conv));
    Matrix text(static_cast<Index>(b.words[i].size()), m.config.d_model);
    for (std::size_t k = 0; k < b.words[i].size(); ++k)
      text.row(static_cast<Index>(k)) = m.text_embedding.value().row(b.words[i][k]);
    z_t.push_back(pool_global(tape.constant(std::move(text)), v.alignment.text_pool));
    if (align_streams) {
      z_s.push_back(pool_global(sv.projected, v.alignment.spatial_pool));
      z_m.push_back(pool_global(sv.mouth, v.alignment.mouth_pool));
    }
  }
  ForwardVars out;
  out.l_trans = translation_loss(concat_rows(logits), targets);
  const double tau = m.config.temperature;
  if (alignment) out.l_vt = infonce(concat_rows(z_v), concat_rows(z_t), tau);
  if (align_streams) out.l_sm = infonce(concat_rows(z_s), concat_rows(z_m), tau);
  return out;
}

LossBreakdown breakdown(const ForwardVars& f, const LossWeights& w) {
  const double l_trans = f.l_trans.item();
  const double l_vt = f.l_vt ? f.l_vt->item() : 0.0;
  const double l_sm = f.l_sm ? f.l_sm->item() : 0.0;
  for (auto [name, value] : {std::pair{"L_trans", l_trans}, std::pair{"L_vt", l_vt}, std::pair{"L_sm", l_sm}}) {
    if (!std::isfinite(value)) throw DivergenceError(std::string(name) + " is not finite (" + format_real(value) + ")");
  }
  return total_loss(l_trans, l_vt, l_sm, w.alpha, w.beta);
}

}  // namespace

LossBreakdown evaluate_losses(Model& model, const Batch& batch, const StepOptions& options) {
  Tape tape(false);
  return breakdown(forward(tape, model, batch, options.streams, options.compute_alignment), options.weights);
}

LossBreakdown train_step(Model& model, AdamW& optimizer, const Batch& batch, const StepOptions& options) {
  Tape tape;
  const ForwardVars f = forward(tape, model, batch, options.streams, options.compute_alignment);
  const LossBreakdown report = breakdown(f, options.weights);
  Var objective = f.l_trans;
  if (options.weights.alpha > 0.0 && f.l_vt) objective = add(objective, scale(*f.l_vt, options.weights.alpha));
  if (options.weights.beta > 0.0 && f.l_sm) objective = add(objective, scale(*f.l_sm, options.weights.beta));
  std::vector<Tensor*> params = model.trainable();
  for (Tensor* p : params) p->zero_grad();
  tape.backward(objective);
  optimizer.step(params);
  for (auto& [name, t] : model.named_tensors()) {
    if (t->requires_grad() && !t->value().allFinite()) {
      throw DivergenceError("parameter " + name + " is not finite after the update");
    }
  }
  return report;
}

Matrix fused_sequence(Model& model, const EncodedSample& sample, const StreamConfig& streams) {
  Tape tape(false);
  const Bound v = bind_model(tape, model);
  return encode_streams(tape, model, v, sample.spatial, sample.mouth, sample.spatial.rows(), streams).fused.value();
}

Matrix visual_sequence(Model& model, const EncodedSample& sample, const StreamConfig& streams) {
  Tape tape(false);
  const Bound v = bind_model(tape, model);
  return encode_streams(tape, model, v, sample.spatial, sample.mouth, sample.spatial.rows(), streams).conv.value();
}

std::vector<Index> translate(Model& model, const EncodedSample& sample, const StreamConfig& streams) {
  const Matrix z = visual_sequence(model, sample, streams);
  return greedy_translate(z, model.decoder, &model.lora, model.config.max_decode_len);
}

Evaluation evaluate(Model& model, std::span<const EncodedSample> samples, const StreamConfig& streams) {
  Evaluation e;
  for (const EncodedSample& s : samples) {
    e.hypotheses.push_back(model.vocab.decode(translate(model, s, streams)));
    e.references.push_back(s.reference);
  }
  e.scores = score_corpus(e.hypotheses, e.references);
  return e;
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'G', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ULL << 30)) throw IoError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint: truncated string");
  return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_string(os, name);
  put_u64(os, t.shape().size());
  for (Index d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
  for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
  std::string name = get_string(is);
  const std::uint64_t rank = get_u64(is);
  if (rank < 1 || rank > 3) throw IoError("checkpoint: tensor '" + name + "' has unsupported rank");
  Shape shape;
  Index numel = 1;
  for (std::uint64_t r = 0; r < rank; ++r) {
    const std::uint64_t d = get_u64(is);
    if (d == 0 || d > (1ULL << 24)) throw IoError("checkpoint: tensor '" + name + "' has a bad dimension");
    shape.push_back(static_cast<Index>(d));
    numel *= static_cast<Index>(d);
  }
  const Index rows = shape[0], cols = numel / rows;
  Matrix values(rows, cols);
  for (Index i = 0; i < numel; ++i) values.data()[i] = std::bit_cast<double>(get_u64(is));
  return {std::move(name), Tensor(std::move(shape), std::move(values))};
}

}  // namespace

std::string model_config_echo(const Model& model, const StreamConfig& streams, const LossWeights& weights) {
  std::string echo = format_fields(model.config, model_fields());
  echo += "channels = " + std::to_string(model.channels) + "\n";
  echo += std::string("stream_spatial = ") + (streams.spatial ? "true" : "false") + "\n";
  echo += std::string("stream_mouth = ") + (streams.mouth ? "true" : "false") + "\n";
  echo += "gate = " + gate_mode_name(streams.gate) + "\n";
  echo += "alpha = " + format_real(weights.alpha) + "\n";
  echo += "beta = " + format_real(weights.beta) + "\n";
  return echo;
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const StreamConfig& streams,
                     const LossWeights& weights, std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_u64(os, seed);
  put_string(os, model_config_echo(model, streams, weights));
  put_u64(os, static_cast<std::uint64_t>(model.vocab.size()));
  for (const std::string& t : model.vocab.tokens()) put_string(os, t);
  auto named = model.named_tensors();
  put_u64(os, named.size() + 2);
  put_tensor(os, "encoder.spatial", model.spatial_encoder.weights());
  put_tensor(os, "encoder.mouth", model.mouth_encoder.weights());
  for (const auto& [name, t] : named) put_tensor(os, name, *t);
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not a checkpoint");
  Checkpoint ck;
  ck.seed = get_u64(is);
  ck.config_echo = get_string(is);

  auto values = parse_key_values(ck.config_echo, "checkpoint config");
  ModelConfig config;
  take_fields(config, model_fields(), values);
  auto pop = [&](const char* key) {
    auto it = values.find(key);
    if (it == values.end()) throw IoError(std::string("checkpoint config: missing '") + key + "'");
    std::string v = it->second;
    values.erase(it);
    return v;
  };
  const Index channels = parse_index("channels", pop("channels"));
  ck.streams.spatial = parse_bool("stream_spatial", pop("stream_spatial"));
  ck.streams.mouth = parse_bool("stream_mouth", pop("stream_mouth"));
  ck.streams.gate = parse_gate_mode(pop("gate"));
  ck.weights.alpha = parse_real("alpha", pop("alpha"));
  ck.weights.beta = parse_real("beta", pop("beta"));
  if (!values.empty()) throw IoError("checkpoint config: unknown key '" + values.begin()->first + "'");

  const std::uint64_t v_size = get_u64(is);
  if (v_size < Vocabulary::kReserved || v_size > (1ULL << 24)) throw IoError("checkpoint: bad vocabulary size");
  std::vector<std::string> words;
  for (std::uint64_t i = 0; i < v_size; ++i) {
    std::string t = get_string(is);
    if (i >= static_cast<std::uint64_t>(Vocabulary::kReserved)) words.push_back(std::move(t));
  }
  ck.model = Model::init(config, Vocabulary(words), channels, 0);

  std::map<std::string, Tensor> stored;
  const std::uint64_t count = get_u64(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    auto [name, t] = get_tensor(is);
    if (!stored.emplace(name, std::move(t)).second) throw IoError("checkpoint: duplicate tensor '" + name + "'");
  }
  auto take = [&](const std::string& name, const Tensor& like) {
    auto it = stored.find(name);
    if (it == stored.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape() != like.shape()) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                    shape_string(like.shape()));
    }
    Tensor t = std::move(it->second);
    stored.erase(it);
    t.set_requires_grad(like.requires_grad());
    return t;
  };
  Model& m = ck.model;
  m.spatial_encoder = StubEncoder(config.spatial_input, config.spatial_input, channels,
                                  take("encoder.spatial", m.spatial_encoder.weights()));
  m.mouth_encoder =
      StubEncoder(config.mouth_height, config.mouth_width, channels, take("encoder.mouth", m.mouth_encoder.weights()));
  for (auto& [name, t] : m.named_tensors()) *t = take(name, *t);
  if (!stored.empty()) throw IoError("checkpoint: unexpected tensor '" + stored.begin()->first + "'");
  return ck;
}

}  // namespace signclip

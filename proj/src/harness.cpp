#include "signclip/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "signclip/error.hpp"
#include "signclip/rng.hpp"

namespace signclip {

namespace {

using TF = Field<TrainConfig>;
const TF kTrainFields[] = {
    {"epochs", &TrainConfig::epochs, "passes over the training split"},
    {"batch_size", &TrainConfig::batch_size, "samples per optimiser step (N in the contrastive losses)"},
    {"lr", &TrainConfig::lr, "AdamW learning rate"},
    {"weight_decay", &TrainConfig::weight_decay, "AdamW decoupled weight decay"},
    {"alpha", &TrainConfig::alpha, "weight of the visual-text alignment loss"},
    {"beta", &TrainConfig::beta, "weight of the spatial-mouthing alignment loss"},
    {"seed", &TrainConfig::seed, "parameter init and shuffle seed"},
    {"ablation_seeds", &TrainConfig::ablation_seeds, "comma-separated seeds averaged by ablate"},
    {"log_valid_bleu", &TrainConfig::log_valid_bleu, "decode the valid split after every epoch"},
    {"stream_spatial", &TrainConfig::stream_spatial, "feed the spatial stream (false: zeros)"},
    {"stream_mouth", &TrainConfig::stream_mouth, "feed the mouth stream (false: zeros)"},
    {"gate", &TrainConfig::gate, "learned, open (spatial only) or closed (mouth only)"},
};

constexpr std::uint64_t kShuffleStream = 0x5348554646000000ULL;

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::span<const Field<TrainConfig>> train_fields() { return kTrainFields; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive and finite");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be >= 0");
  if (!stream_spatial && !stream_mouth) fail("at least one stream must be enabled");
  parse_gate_mode(gate);
  parsed_ablation_seeds();
}

StepOptions TrainConfig::step_options() const {
  StepOptions o;
  o.weights = {alpha, beta};
  o.streams = {stream_spatial, stream_mouth, parse_gate_mode(gate)};
  return o;
}

std::vector<std::uint64_t> TrainConfig::parsed_ablation_seeds() const {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(ablation_seeds);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw ConfigError("ablation_seeds: empty entry");
    seeds.push_back(parse_u64("ablation_seeds", item.substr(first, last - first + 1)));
  }
  if (seeds.empty()) throw ConfigError("ablation_seeds: at least one seed required");
  return seeds;
}

void RunConfig::validate() const {
  corpus.validate();
  model.validate();
  train.validate();
}

RunConfig parse_run_config(std::string_view text, std::string_view source) {
  auto values = parse_key_values(text, source);
  RunConfig c;
  take_fields(c.corpus, synthetic_fields(), values);
  take_fields(c.model, model_fields(), values);
  take_fields(c.train, train_fields(), values);
  if (!values.empty()) {
    throw ConfigError(std::string(source) + ": unknown config key '" + values.begin()->first + "'");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

namespace {

template <class T>
void describe(std::string& out, const char* title, const T& obj, std::span<const Field<T>> fields) {
  out += std::string("\n# [") + title + "]\n";
  for (const Field<T>& f : fields) {
    out += std::string("# ") + f.doc + "\n";
    out += std::string(f.name) + " = " + format_field(obj, f) + "\n";
  }
}

}  // namespace

std::string format_run_config(const RunConfig& config) {
  std::string out = "# signclip run configuration; every key is optional\n";
  describe(out, "corpus", config.corpus, synthetic_fields());
  describe(out, "model", config.model, model_fields());
  describe(out, "training", config.train, train_fields());
  return out;
}

// --- training ----------------------------------------------------------------

std::vector<EpochLog> train_model(Model& model, std::span<const EncodedSample> train,
                                  std::span<const EncodedSample> valid, const TrainConfig& config,
                                  const StepOptions& options, const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty()) throw ContractError("train_model: empty training split");
  AdamW optimizer({.lr = config.lr, .weight_decay = config.weight_decay});
  std::vector<std::size_t> order(train.size());
  std::vector<EpochLog> log;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    EpochLog row;
    row.epoch = epoch;
    double steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<const EncodedSample*> members;
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) members.push_back(&train[order[k]]);
      const LossBreakdown l = train_step(model, optimizer, make_batch(members), options);
      row.mean.l_trans += l.l_trans;
      row.mean.l_vt += l.l_vt;
      row.mean.l_sm += l.l_sm;
      row.mean.l_total += l.l_total;
      steps += 1;
    }
    row.mean.l_trans /= steps;
    row.mean.l_vt /= steps;
    row.mean.l_sm /= steps;
    row.mean.l_total /= steps;
    if (config.log_valid_bleu && !valid.empty()) row.valid_bleu4 = evaluate(model, valid, options.streams).scores.bleu[3];
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return log;
}

std::string epoch_log_header() { return "epoch\tl_trans\tl_vt\tl_sm\tl_total\tvalid_bleu4\n"; }

std::string epoch_log_row(const EpochLog& r) {
  return std::to_string(r.epoch) + "\t" + format_real(r.mean.l_trans) + "\t" + format_real(r.mean.l_vt) + "\t" +
         format_real(r.mean.l_sm) + "\t" + format_real(r.mean.l_total) + "\t" +
         (r.valid_bleu4 < 0 ? std::string("NA") : fixed6(r.valid_bleu4)) + "\n";
}

std::string score_header() { return "split\tB1\tB2\tB3\tB4\tRG\tn\n"; }

std::string score_row(const std::string& split, const ScoreReport& r) {
  return split + "\t" + fixed6(r.bleu[0]) + "\t" + fixed6(r.bleu[1]) + "\t" + fixed6(r.bleu[2]) + "\t" + fixed6(r.bleu[3]) + "\t" +
         fixed6(r.rouge_l) + "\t" + std::to_string(r.n_sentences) + "\n";
}

// --- ablation ----------------------------------------------------------------

namespace {

const AblationRow kAblationRows[] = {
    {"SE", true, false, false, false, {true, false, GateMode::open}},
    {"LE", false, true, false, false, {false, true, GateMode::closed}},
    {"SE+LE", true, true, false, false, {true, true, GateMode::learned}},
    {"SE+VT", true, false, true, false, {true, false, GateMode::open}},
    {"SE+LE+VT", true, true, true, false, {true, true, GateMode::learned}},
    {"full", true, true, true, true, {true, true, GateMode::learned}},
};

}  // namespace

std::span<const AblationRow> ablation_rows() { return kAblationRows; }

StepOptions ablation_options(const AblationRow& row, const TrainConfig& config) {
  StepOptions o;
  o.streams = row.streams;
  o.weights = {row.vt ? config.alpha : 0.0, row.sm ? config.beta : 0.0};
  // Unweighted alignment terms do not change the update, so skip building them.
  o.compute_alignment = row.vt || row.sm;
  return o;
}

std::vector<AblationResult> run_ablation(const Corpus& corpus, const RunConfig& config,
                                         const std::function<void(const std::string&)>& progress) {
  if (corpus.config.n_ambiguous_pairs < 1) throw ContractError("ablate: corpus has no ambiguous pairs");
  const Vocabulary vocab = build_vocabulary(corpus);
  const Index channels = corpus.config.channels;
  // Frozen encoders depend on encoder_seed only, so one feature pass serves every run.
  const Model probe = Model::init(config.model, vocab, channels, 0);
  const std::vector<EncodedSample> train = encode_samples(probe, corpus.train);
  const std::vector<EncodedSample> test = encode_samples(probe, corpus.test);
  const std::vector<std::uint64_t> seeds = config.train.parsed_ablation_seeds();

  std::vector<AblationResult> results;
  for (const AblationRow& row : ablation_rows()) {
    const auto t0 = std::chrono::steady_clock::now();
    AblationResult r;
    r.row = &row;
    const StepOptions options = ablation_options(row, config.train);
    for (std::uint64_t seed : seeds) {
      Model model = Model::init(config.model, vocab, channels, seed);
      if (r.config_echo.empty()) r.config_echo = model_config_echo(model, options.streams, options.weights);
      TrainConfig tc = config.train;
      tc.seed = seed;
      tc.log_valid_bleu = false;
      train_model(model, train, {}, tc, options);
      r.per_seed.push_back(evaluate(model, test, options.streams).scores);
      if (progress) {
        progress(std::string(row.name) + " seed " + std::to_string(seed) +
                 ": BLEU-4 " + fixed6(r.per_seed.back().bleu[3]));
      }
    }
    const double n = static_cast<double>(r.per_seed.size());
    for (const ScoreReport& s : r.per_seed) {
      for (int k = 0; k < 4; ++k) r.mean.bleu[k] += s.bleu[k] / n;
      r.mean.rouge_l += s.rouge_l / n;
    }
    r.mean.n_sentences = r.per_seed.front().n_sentences;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(std::move(r));
  }
  return results;
}

std::string ablation_header() { return "row\tSE\tLE\tVT_align\tSM_align\tB1\tB2\tB3\tB4\tRG\tB4_per_seed\n"; }

std::string ablation_row_tsv(const AblationResult& r) {
  const AblationRow& row = *r.row;
  std::string out = std::string(row.name) + "\t" + (row.se ? "1" : "0") + "\t" + (row.le ? "1" : "0") + "\t" +
                    (row.vt ? "1" : "0") + "\t" + (row.sm ? "1" : "0") + "\t";
  out += fixed6(r.mean.bleu[0]) + "\t" + fixed6(r.mean.bleu[1]) + "\t" + fixed6(r.mean.bleu[2]) + "\t" +
         fixed6(r.mean.bleu[3]) + "\t" + fixed6(r.mean.rouge_l) + "\t";
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) out += (i ? "," : "") + fixed6(r.per_seed[i].bleu[3]);
  return out + "\n";
}

// --- PCA -----------------------------------------------------------------------

Pca2 pca2(const Matrix& data, Index max_iterations, double tolerance) {
  const Index n = data.rows(), d = data.cols();
  if (n < 2 || d < 2) throw ContractError("pca2: need at least 2 rows and 2 columns");
  Pca2 p;
  p.mean = data.colwise().mean();
  const Matrix centred = data.rowwise() - p.mean;
  Matrix cov = centred.transpose() * centred / static_cast<double>(n);
  p.components = Matrix::Zero(2, d);

  for (Index k = 0; k < 2; ++k) {
    // Deterministic start; orthogonalising against found directions keeps the
    // second axis clean even when deflation leaves only rounding noise.
    Rng rng(0x50434132ULL, static_cast<std::uint64_t>(k));
    Eigen::VectorXd v = rng.normal_matrix(d, 1, 1.0);
    auto orthogonalise = [&](Eigen::VectorXd& x) {
      for (Index j = 0; j < k; ++j) x -= x.dot(p.components.row(j).transpose()) * p.components.row(j).transpose();
    };
    orthogonalise(v);
    v.normalize();
    for (Index it = 0; it < max_iterations; ++it) {
      Eigen::VectorXd w = cov * v;
      orthogonalise(w);
      const double norm = w.norm();
      if (norm < 1e-300) break;  // remaining spectrum is zero; any orthogonal unit vector will do
      w /= norm;
      const double change = (w - v).norm();
      v = w;
      if (change < tolerance) break;
    }
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const double lambda = v.dot(cov * v);
    p.variances[static_cast<std::size_t>(k)] = lambda;
    p.components.row(k) = v.transpose();
    cov -= lambda * v * v.transpose();
  }
  return p;
}

Matrix project(const Pca2& pca, const Matrix& data) {
  return (data.rowwise() - pca.mean) * pca.components.transpose();
}

std::vector<TokenPoint> export_embeddings(Model& model, std::span<const EncodedSample> samples,
                                          const StreamConfig& streams, Index frames_per_sign) {
  if (frames_per_sign < 1) throw ContractError("export_embeddings: frames_per_sign must be >= 1");
  std::vector<std::string> tokens;
  std::vector<RowVector> rows;
  for (const EncodedSample& s : samples) {
    const Matrix fused = fused_sequence(model, s, streams);
    if (fused.rows() != frames_per_sign * static_cast<Index>(s.words.size())) {
      throw ContractError("export_embeddings: frame count does not match the sign count");
    }
    for (std::size_t k = 0; k < s.words.size(); ++k) {
      rows.push_back(fused.middleRows(static_cast<Index>(k) * frames_per_sign, frames_per_sign).colwise().mean());
      tokens.push_back(model.vocab.token(s.words[k]));
    }
  }
  if (std::set<std::string>(tokens.begin(), tokens.end()).size() < 3) {
    throw ContractError("export_embeddings: fewer than 3 distinct tokens");
  }
  Matrix features(static_cast<Index>(rows.size()), rows.front().cols());
  for (std::size_t i = 0; i < rows.size(); ++i) features.row(static_cast<Index>(i)) = rows[i];
  const Matrix xy = project(pca2(features), features);
  std::vector<TokenPoint> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.push_back({tokens[i], xy(static_cast<Index>(i), 0), xy(static_cast<Index>(i), 1)});
  }
  return out;
}

std::string embedding_header() { return "token\tx\ty\n"; }

std::string embedding_row(const TokenPoint& p) { return p.token + "\t" + format_real(p.x) + "\t" + format_real(p.y) + "\n"; }

}  // namespace signclip

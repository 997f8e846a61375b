#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "signclip/model.hpp"
#include "signclip/synth.hpp"

namespace signclip {

struct TrainConfig {
  Index epochs = 30;
  Index batch_size = 4;
  double lr = 5e-4;
  double weight_decay = 0.0;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  std::uint64_t seed = 1;
  std::string ablation_seeds = "1,2,3";
  bool log_valid_bleu = true;
  bool stream_spatial = true;
  bool stream_mouth = true;
  std::string gate = "learned";

  void validate() const;
  StepOptions step_options() const;
  std::vector<std::uint64_t> parsed_ablation_seeds() const;
};

std::span<const Field<TrainConfig>> train_fields();

/// Every tunable of the pipeline. Each key has a default; unknown keys are
/// rejected.
struct RunConfig {
  SyntheticConfig corpus;
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

RunConfig parse_run_config(std::string_view text, std::string_view source);
RunConfig load_run_config(const std::filesystem::path& path);
/// Full `key = value` listing with a comment line per key.
std::string format_run_config(const RunConfig& config);

// Training -------------------------------------------------------------------

struct EpochLog {
  Index epoch = 0;
  LossBreakdown mean;       // batch-mean of every component
  double valid_bleu4 = -1;  // negative when not measured
};

/// Runs `config.epochs` epochs of shuffled mini-batch training. The shuffle
/// of epoch e uses stream e of the training seed. `on_epoch` sees every log
/// row as soon as it is complete, so a later divergence keeps earlier rows.
std::vector<EpochLog> train_model(Model& model, std::span<const EncodedSample> train,
                                  std::span<const EncodedSample> valid, const TrainConfig& config,
                                  const StepOptions& options,
                                  const std::function<void(const EpochLog&)>& on_epoch = {});

std::string epoch_log_header();
std::string epoch_log_row(const EpochLog& row);

// Evaluation reports ------------------------------------------------------------

std::string score_header();  // split, then the "B1 B2 B3 B4 RG" layout, then n
std::string score_row(const std::string& split, const ScoreReport& r);

// Ablation -------------------------------------------------------------------

struct AblationRow {
  const char* name;
  bool se, le, vt, sm;
  StreamConfig streams;
};

/// The six configurations, in report order.
std::span<const AblationRow> ablation_rows();

StepOptions ablation_options(const AblationRow& row, const TrainConfig& config);

struct AblationResult {
  const AblationRow* row;
  std::vector<ScoreReport> per_seed;
  ScoreReport mean;
  std::string config_echo;  // checkpoint echo of the row's first seed
  double seconds = 0.0;
};

/// Trains and evaluates every row for every ablation seed on identical
/// budgets; encoder features are computed once and shared.
std::vector<AblationResult> run_ablation(const Corpus& corpus, const RunConfig& config,
                                         const std::function<void(const std::string&)>& progress = {});

std::string ablation_header();
std::string ablation_row_tsv(const AblationResult& r);

// Embedding export -----------------------------------------------------------

/// Top two principal directions by power iteration with deflation on the
/// centred covariance. Directions are unit rows, sign-fixed so that their
/// largest-magnitude entry is positive.
struct Pca2 {
  RowVector mean;
  Matrix components;  // 2 x d
  std::array<double, 2> variances{};
};

Pca2 pca2(const Matrix& data, Index max_iterations = 2000, double tolerance = 1e-13);
Matrix project(const Pca2& pca, const Matrix& data);  // n x 2

struct TokenPoint {
  std::string token;
  double x, y;
};

/// Mean fused feature of every token occurrence (frames of one sign), then
/// PCA to two dimensions.
/// Throws ContractError when fewer than three distinct tokens occur.
std::vector<TokenPoint> export_embeddings(Model& model, std::span<const EncodedSample> samples,
                                          const StreamConfig& streams, Index frames_per_sign);

std::string embedding_header();
std::string embedding_row(const TokenPoint& p);

}  // namespace signclip

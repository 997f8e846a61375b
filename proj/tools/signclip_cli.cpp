// signclip: generate | train | eval | ablate | export-emb | config
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "signclip/error.hpp"
#include "signclip/harness.hpp"

namespace fs = std::filesystem;
using namespace signclip;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string corpus;
  std::string checkpoint;
  std::string split = "test";
};

RunConfig load(const Options& o) { return o.config.empty() ? RunConfig{} : load_run_config(o.config); }

void claim_file(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw UsageError(path.string() + " exists; pass --force to overwrite");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void claim_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

/// Writes through a temporary name so a failed run never leaves a half file
/// under the final name.
void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << text;
    if (!os) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

int cmd_generate(const Options& o) {
  RunConfig c = load(o);
  if (o.seed) c.corpus.seed = *o.seed;
  c.corpus.validate();
  claim_dir(o.out, o.force);
  const Corpus corpus = generate_corpus(c.corpus);
  write_corpus(o.out, corpus, true);
  std::printf("wrote %lld samples to %s\n", static_cast<long long>(c.corpus.n_samples()), o.out.c_str());
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig c = load(o);
  if (o.seed) c.train.seed = *o.seed;
  const Corpus corpus = read_corpus(o.corpus);
  claim_dir(o.out, o.force);
  const fs::path out(o.out);
  write_text(out / "config.txt", format_run_config(c));

  Model model = Model::init(c.model, build_vocabulary(corpus), corpus.config.channels, c.train.seed);
  const std::vector<EncodedSample> train = encode_samples(model, corpus.train);
  const std::vector<EncodedSample> valid = encode_samples(model, corpus.valid);
  const StepOptions options = c.train.step_options();

  std::ofstream log(out / "train_log.tsv", std::ios::binary);
  log << epoch_log_header() << std::flush;
  train_model(model, train, valid, c.train, options, [&](const EpochLog& row) {
    log << epoch_log_row(row) << std::flush;
    std::printf("epoch %lld  l_trans %.4f  l_vt %.4f  l_sm %.4f  l_total %.4f\n", static_cast<long long>(row.epoch),
                row.mean.l_trans, row.mean.l_vt, row.mean.l_sm, row.mean.l_total);
    std::fflush(stdout);
  });
  save_checkpoint(out / "model.ckpt", model, options.streams, options.weights, c.train.seed);
  std::printf("checkpoint %s\n", (out / "model.ckpt").c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  Checkpoint ck = load_checkpoint(o.checkpoint);
  const Corpus corpus = read_corpus(o.corpus);
  const std::vector<EncodedSample> samples = encode_samples(ck.model, corpus.split(parse_split(o.split)));
  const Evaluation e = evaluate(ck.model, samples, ck.streams);
  const ScoreReport& s = e.scores;
  if (!o.out.empty()) {
    claim_file(o.out, o.force);
    write_text(o.out, score_header() + score_row(o.split, s));
  }
  std::printf("%s (%lld sentences): B1 %.2f  B2 %.2f  B3 %.2f  B4 %.2f  RG %.2f\n", o.split.c_str(),
              static_cast<long long>(s.n_sentences), 100 * s.bleu[0], 100 * s.bleu[1], 100 * s.bleu[2],
              100 * s.bleu[3], 100 * s.rouge_l);
  return 0;
}

int cmd_ablate(const Options& o) {
  RunConfig c = load(o);
  if (o.seed) {
    // --seed S replaces the seed list by S, S+1, ... of the same length.
    const auto n = c.train.parsed_ablation_seeds().size();
    std::string list;
    for (std::size_t i = 0; i < n; ++i) list += (i ? "," : "") + std::to_string(*o.seed + i);
    c.train.ablation_seeds = list;
  }
  const Corpus corpus = read_corpus(o.corpus);
  claim_file(o.out, o.force);
  const auto results = run_ablation(corpus, c, [](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  });
  std::string table = ablation_header();
  for (const AblationResult& r : results) table += ablation_row_tsv(r);
  write_text(o.out, table);
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_export(const Options& o) {
  Checkpoint ck = load_checkpoint(o.checkpoint);
  const Corpus corpus = read_corpus(o.corpus);
  const std::vector<EncodedSample> samples = encode_samples(ck.model, corpus.split(parse_split(o.split)));
  claim_file(o.out, o.force);
  std::string table = embedding_header();
  for (const TokenPoint& p : export_embeddings(ck.model, samples, ck.streams, corpus.config.frames_per_sign)) {
    table += embedding_row(p);
  }
  write_text(o.out, table);
  return 0;
}

int cmd_config(const Options& o) {
  const RunConfig c = load(o);
  if (o.out.empty()) {
    std::fputs(format_run_config(c).c_str(), stdout);
  } else {
    claim_file(o.out, o.force);
    write_text(o.out, format_run_config(c));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated-fusion sign language translation at desk scale"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool config, bool seeded, bool out_required) {
    if (config) sub->add_option("--config", o.config, "key = value run configuration")->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", o.out, "output path");
    if (out_required) out->required();
    if (seeded) sub->add_option("--seed", seed, "override the seed of this command");
    sub->add_flag("--force", o.force, "overwrite existing output");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus directory");
  common(gen, true, true, true);

  auto* train = app.add_subcommand("train", "train a model; writes model.ckpt and train_log.tsv");
  train->add_option("corpus", o.corpus, "corpus directory")->required();
  common(train, true, true, true);

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a corpus split");
  eval->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("corpus", o.corpus, "corpus directory")->required();
  eval->add_option("--split", o.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  common(eval, false, false, false);

  auto* ablate = app.add_subcommand("ablate", "train and score the six ablation configurations");
  ablate->add_option("corpus", o.corpus, "corpus directory")->required();
  common(ablate, true, true, true);

  auto* exp = app.add_subcommand("export-emb", "2-D PCA coordinates of fused features per token");
  exp->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  exp->add_option("corpus", o.corpus, "corpus directory")->required();
  exp->add_option("--split", o.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  common(exp, false, false, true);

  auto* cfg = app.add_subcommand("config", "print the effective configuration with every default");
  common(cfg, true, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  for (CLI::App* sub : {gen, train, ablate}) {
    if (sub->parsed() && sub->count("--seed") > 0) o.seed = seed;
  }

  try {
    if (gen->parsed()) return cmd_generate(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (ablate->parsed()) return cmd_ablate(o);
    if (exp->parsed()) return cmd_export(o);
    if (cfg->parsed()) return cmd_config(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "signclip: %s\n", e.what());
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "signclip: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "signclip: %s\n", e.what());
    return 2;
  }
  return 1;
}

// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. An optional argument restricts the run to criteria whose name
// contains it.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "signclip/harness.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "support/oracles.hpp"

using namespace signclip;
using namespace signclip::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Index pick(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

// Gradient checks ---------------------------------------------------------------

struct GradFamily {
  const char* name;
  std::function<GradcheckReport(Rng&, int)> run;
};

std::vector<GradFamily> grad_families() {
  std::vector<GradFamily> f;
  f.push_back({"matmul", [](Rng& rng, int c) {
                 const Index n = pick(rng, 1, 4), k = pick(rng, 1, 4), m = pick(rng, 1, 4);
                 return gradcheck({rng.normal_matrix(n, k, 1.0), rng.normal_matrix(k, m, 1.0)},
                                  [c](Tape&, std::span<const Var> v) { return weighted_sum(matmul(v[0], v[1]), c); });
               }});
  f.push_back({"conv1d", [](Rng& rng, int c) {
                 const Index d = pick(rng, 1, 3), out = pick(rng, 1, 3), t = pick(rng, 1, 6);
                 const Index w = 2 * pick(rng, 0, 2) + 1;
                 return gradcheck({rng.normal_matrix(d, t, 1.0), rng.normal_matrix(out, d * w, 1.0)},
                                  [c, w](Tape&, std::span<const Var> v) { return weighted_sum(conv1d(v[0], v[1], w), c); });
               }});
  f.push_back({"sigmoid", [](Rng& rng, int c) {
                 return gradcheck({rng.normal_matrix(pick(rng, 1, 4), pick(rng, 1, 4), 2.0)},
                                  [c](Tape&, std::span<const Var> v) { return weighted_sum(sigmoid(v[0]), c); });
               }});
  f.push_back({"softmax", [](Rng& rng, int c) {
                 const Index n = pick(rng, 1, 5);
                 const SoftmaxMask mask = c % 2 ? SoftmaxMask::causal : SoftmaxMask::none;
                 return gradcheck({rng.normal_matrix(n, mask == SoftmaxMask::causal ? n : pick(rng, 1, 5), 1.5)},
                                  [c, mask](Tape&, std::span<const Var> v) { return weighted_sum(softmax_rows(v[0], mask), c); });
               }});
  f.push_back({"pooling", [](Rng& rng, int c) {
                 const Index t = pick(rng, 1, 5), d = pick(rng, 1, 4), e = pick(rng, 1, 4);
                 return gradcheck({rng.normal_matrix(t, d, 1.0), rng.normal_matrix(d, e, 1.0)},
                                  [c](Tape&, std::span<const Var> v) { return weighted_sum(pool_global(v[0], v[1]), c); });
               }});
  f.push_back({"gate", [](Rng& rng, int c) {
                 const Index d = pick(rng, 2, 4), t = pick(rng, 1, 4);
                 FusionParams p = FusionParams::init(d, 3, 0.1, rng);
                 return gradcheck({rng.normal_matrix(t, d, 1.0), rng.normal_matrix(t, d, 1.0), p.gate_hidden_w.value(),
                                   p.gate_hidden_b.value(), p.gate_out_w.value(), p.gate_out_b.value()},
                                  [c, &p](Tape& tape, std::span<const Var> v) {
                                    FusionVars fv = bind(tape, p);
                                    fv.gate_hidden_w = v[2];
                                    fv.gate_hidden_b = v[3];
                                    fv.gate_out_w = v[4];
                                    fv.gate_out_b = v[5];
                                    return weighted_sum(gated_fuse(v[0], v[1], fv).fused, c);
                                  });
               }});
  f.push_back({"infonce", [](Rng& rng, int) {
                 const Index n = pick(rng, 1, 4), d = pick(rng, 2, 4);
                 const double tau = rng.uniform(0.1, 1.0);
                 return gradcheck({rng.normal_matrix(n, d, 1.0), rng.normal_matrix(n, d, 1.0)},
                                  [tau](Tape&, std::span<const Var> v) { return infonce(v[0], v[1], tau); });
               }});
  f.push_back({"cross_entropy", [](Rng& rng, int) {
                 const Index n = pick(rng, 1, 5), v = pick(rng, 2, 6);
                 std::vector<Index> targets;
                 for (Index i = 0; i < n; ++i) targets.push_back(pick(rng, 0, v - 1));
                 targets[0] = 1;  // at least one counted row
                 return gradcheck({rng.normal_matrix(n, v, 1.5)}, [targets](Tape&, std::span<const Var> x) {
                   return cross_entropy_rows(x[0], targets, 0);
                 });
               }});
  f.push_back({"attention", [](Rng& rng, int) {
                 DecoderConfig cfg;
                 cfg.d_model = 4;
                 cfg.heads = 2;
                 cfg.prompt_len = 1;
                 cfg.ffn_mult = 2;
                 cfg.max_positions = 8;
                 cfg.vocab_size = 7;
                 auto p = std::make_shared<DecoderParams>(DecoderParams::init(cfg, rng));
                 std::vector<Index> prefix{Vocabulary::kBos};
                 std::vector<Index> targets;
                 const Index len = pick(rng, 1, 3);
                 for (Index i = 0; i < len; ++i) {
                   targets.push_back(pick(rng, 4, 6));
                   prefix.push_back(targets.back());
                 }
                 targets.push_back(Vocabulary::kEos);
                 return gradcheck({rng.normal_matrix(pick(rng, 1, 4), cfg.d_model, 1.0), p->cross_k.value(),
                                   p->self_q.value()},
                                  [p, prefix, targets](Tape& tape, std::span<const Var> v) {
                                    DecoderVars dv = bind(tape, *p);
                                    dv.cross_k = v[1];
                                    dv.self_q = v[2];
                                    return translation_loss(decode_logits(v[0], prefix, dv, nullptr), targets);
                                  });
               }});
  f.push_back({"lora", [](Rng& rng, int c) {
                 const Index n = pick(rng, 1, 3), din = pick(rng, 2, 5), dout = pick(rng, 2, 5);
                 const Index r = pick(rng, 1, std::min(din, dout));
                 const double s = rng.uniform(0.5, 2.0);
                 return gradcheck({rng.normal_matrix(n, din, 1.0), rng.normal_matrix(n, dout, 1.0),
                                   rng.normal_matrix(r, din, 1.0), rng.normal_matrix(dout, r, 1.0)},
                                  [c, s](Tape&, std::span<const Var> v) {
                                    return weighted_sum(apply_lora(v[1], v[0], LoraVars{v[2], v[3], s}), c);
                                  });
               }});
  return f;
}

Outcome gradcheck_families() {
  Outcome o;
  constexpr int kCases = 100;
  std::uint64_t stream = 0;
  for (const GradFamily& fam : grad_families()) {
    Rng rng(0x4752414400ULL, ++stream);
    int failed = 0;
    double worst = 0.0;
    for (int c = 0; c < kCases; ++c) {
      const GradcheckReport r = fam.run(rng, c);
      worst = std::max(worst, r.worst_abs);
      if (!r.ok) ++failed;
    }
    o.detail += fmt("%s %d/%d (max|diff| %.1e); ", fam.name, kCases - failed, kCases, worst);
    if (failed) o.pass = false;
  }
  return o;
}

// Contrastive loss ---------------------------------------------------------------

double infonce_value(const Matrix& a, const Matrix& p, double tau) {
  Tape t(false);
  return infonce(t.constant(a), t.constant(p), tau).item();
}

Outcome infonce_checks() {
  Outcome o;
  Rng rng(0x4E4345);
  auto fail = [&](const std::string& why) {
    o.pass = false;
    o.detail += why + "; ";
  };
  if (infonce_value(rng.normal_matrix(1, 6, 1.0), rng.normal_matrix(1, 6, 1.0), 0.1) != 0.0) fail("N=1 not 0");
  const Matrix same = rng.normal_matrix(1, 6, 1.0).replicate(4, 1);
  const double v4 = infonce_value(same, same, 0.1);
  if (std::abs(v4 - std::log(4.0)) > 1e-9) fail(fmt("identical N=4 gave %.12f", v4));
  const double orth = infonce_value(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0);
  if (std::abs(orth - std::log1p(std::exp(-1.0))) > 1e-9) fail(fmt("orthogonal gave %.12f", orth));

  double worst_scale = 0, worst_perm = 0, worst_oracle = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = pick(rng, 2, 8), d = pick(rng, 2, 8);
    const double tau = rng.uniform(0.05, 2.0);
    const Matrix a = rng.normal_matrix(n, d, 1.0), p = rng.normal_matrix(n, d, 1.0);
    const double base = infonce_value(a, p, tau);
    worst_oracle = std::max(worst_oracle, std::abs(base - infonce_oracle(a, p, tau)));

    Matrix a2 = a, p2 = p;
    for (Index i = 0; i < n; ++i) {
      a2.row(i) *= rng.uniform(0.01, 100.0);
      p2.row(i) *= rng.uniform(0.01, 100.0);
    }
    worst_scale = std::max(worst_scale, std::abs(infonce_value(a2, p2, tau) - base));

    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    Matrix ap(n, d), pp(n, d);
    for (Index i = 0; i < n; ++i) {
      ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
      pp.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
    }
    worst_perm = std::max(worst_perm, std::abs(infonce_value(ap, pp, tau) - base));
  }
  if (worst_scale > 1e-10) fail(fmt("scale changed loss by %.1e", worst_scale));
  if (worst_perm > 1e-10) fail(fmt("permutation changed loss by %.1e", worst_perm));
  if (worst_oracle > 1e-10) fail(fmt("oracle gap %.1e", worst_oracle));
  o.detail += fmt("N=4 %.12f vs ln4, 200 batches: scale %.1e perm %.1e oracle %.1e", v4, worst_scale, worst_perm,
                  worst_oracle);
  return o;
}

// Gated fusion -------------------------------------------------------------------

Outcome fusion_checks() {
  Outcome o;
  Rng rng(0x46555345);
  long entries = 0, outside = 0, open_bad = 0, closed_bad = 0;
  double worst_oracle = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = pick(rng, 2, 8), t = pick(rng, 1, 10);
    FusionParams p = FusionParams::init(d, 3, 0.1, rng);
    Tape tape(false);
    FusionVars fv = bind(tape, p);
    const Matrix s = rng.normal_matrix(t, d, 2.0), m = rng.normal_matrix(t, d, 2.0);
    Var vs = tape.constant(s), vm = tape.constant(m);
    if (gated_fuse(vs, vm, fv, GateMode::open).fused.value() != s) ++open_bad;
    if (gated_fuse(vs, vm, fv, GateMode::closed).fused.value() != m) ++closed_bad;
    const FusedStreams out = gated_fuse(vs, vm, fv);
    const Matrix& z = out.fused.value();
    for (Index i = 0; i < z.size(); ++i) {
      ++entries;
      const double lo = std::min(s.data()[i], m.data()[i]), hi = std::max(s.data()[i], m.data()[i]);
      if (z.data()[i] < lo || z.data()[i] > hi) ++outside;
    }
    const Matrix want = fuse_oracle(out.gate.value(), s, m);
    worst_oracle = std::max(worst_oracle, (z - want).cwiseAbs().maxCoeff());
  }
  if (open_bad || closed_bad) {
    o.pass = false;
    o.detail += fmt("pinned gate mismatches open %ld closed %ld; ", open_bad, closed_bad);
  }
  if (outside || entries < 1000) {
    o.pass = false;
    o.detail += fmt("%ld of %ld entries outside [min,max]; ", outside, entries);
  }
  if (worst_oracle > 1e-14) {
    o.pass = false;
    o.detail += "oracle mismatch; ";
  }
  o.detail += fmt("open/closed exact over 100 cases, %ld entries between sources, oracle gap %.1e", entries,
                  worst_oracle);
  return o;
}

// Multi-scale spatial encoding -----------------------------------------------------

Outcome s2_checks() {
  Rng rng(0x5332);
  int mismatches = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const Index r = pick(rng, 4, 10), c = pick(rng, 1, 3);
    StubEncoder enc(r, r, c, pick(rng, 2, 12), rng.next_u64());
    Image frame(pick(rng, r, 48), pick(rng, r, 48), c);
    for (double& px : frame.pixels) px = rng.uniform();
    if (s2_encode_frame(frame, enc) != s2_oracle(frame, enc)) ++mismatches;
  }
  return {mismatches == 0, fmt("%d of 120 random frames differ from the five-view composition", mismatches)};
}

// Low-rank adaptation ---------------------------------------------------------------

struct SmallRig {
  Corpus corpus;
  Model model;
  std::vector<EncodedSample> train;

  explicit SmallRig(Index n_train) {
    SyntheticConfig c;
    c.n_train = n_train;
    c.n_valid = 0;
    c.n_test = 0;
    corpus = generate_corpus(c);
    model = Model::init(ModelConfig{}, build_vocabulary(corpus), c.channels, 1);
    train = encode_samples(model, corpus.train);
  }
};

Outcome lora_checks() {
  Outcome o;
  SmallRig rig(16);
  int differing = 0;
  for (const EncodedSample& e : rig.train) {
    const Matrix z = visual_sequence(rig.model, e, {});
    Tape tape(false);
    DecoderVars dv = bind(tape, rig.model.decoder);
    LoraSetVars lv = bind(tape, rig.model.lora);
    std::vector<Index> prefix{Vocabulary::kBos};
    prefix.insert(prefix.end(), e.words.begin(), e.words.end());
    if (decode_logits(tape.constant(z), prefix, dv, &lv).value() != decode_logits(tape.constant(z), prefix, dv, nullptr).value())
      ++differing;
  }
  if (differing) {
    o.pass = false;
    o.detail += fmt("B=0 changed logits on %d samples; ", differing);
  }

  std::vector<std::uint64_t> before;
  for (const Tensor* t : rig.model.frozen()) before.push_back(t->checksum());
  AdamW opt({});
  const TrainConfig tc;
  std::vector<const EncodedSample*> all;
  for (const EncodedSample& e : rig.train) all.push_back(&e);
  for (int step = 0; step < 100; ++step) {
    std::vector<const EncodedSample*> b(all.begin() + (step % 4) * 4, all.begin() + (step % 4) * 4 + 4);
    train_step(rig.model, opt, make_batch(b), tc.step_options());
  }
  std::size_t moved = 0;
  std::size_t k = 0;
  for (const Tensor* t : rig.model.frozen()) moved += t->checksum() != before[k++];
  if (moved) {
    o.pass = false;
    o.detail += fmt("%zu frozen tensors changed; ", moved);
  }
  o.detail += fmt("zero-init adapters bit-identical on %zu samples, %zu frozen checksums unchanged after 100 steps",
                  rig.train.size(), before.size() - moved);
  return o;
}

// Metrics -----------------------------------------------------------------------

std::vector<Sentence> random_corpus(Rng& rng, std::size_t n, int max_len, int alphabet) {
  std::vector<Sentence> out(n);
  for (Sentence& s : out) {
    const int len = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len + 1)));
    for (int i = 0; i < len; ++i) s.push_back(std::string(1, static_cast<char>('a' + rng.below(static_cast<std::uint64_t>(alphabet)))));
  }
  return out;
}

Outcome metric_checks() {
  Outcome o;
  Rng rng(0x4D4554);
  double worst = 0.0;
  for (int trial = 0; trial < 600; ++trial) {
    const std::size_t n = 1 + rng.below(5);
    const int len = 1 + static_cast<int>(rng.below(9)), alphabet = 2 + static_cast<int>(rng.below(4));
    const auto cands = random_corpus(rng, n, len, alphabet), refs = random_corpus(rng, n, len, alphabet);
    const auto got = bleu(cands, refs), want = bleu_oracle(cands, refs);
    for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(got[static_cast<std::size_t>(k)] - want[static_cast<std::size_t>(k)]));
  }
  if (worst > 1e-12) {
    o.pass = false;
    o.detail += "BLEU oracle mismatch; ";
  }

  std::vector<Sentence> all;
  for (int len = 0; len <= 8; ++len)
    for (int mask = 0; mask < (1 << len); ++mask) {
      Sentence s;
      for (int i = 0; i < len; ++i) s.push_back((mask >> i) & 1 ? "b" : "a");
      all.push_back(s);
    }
  long pairs = 0, lcs_bad = 0;
  for (const Sentence& a : all)
    for (const Sentence& b : all) {
      ++pairs;
      if (lcs_length(a, b) != lcs_exhaustive(a, b)) ++lcs_bad;
    }
  if (lcs_bad) {
    o.pass = false;
    o.detail += fmt("LCS wrong on %ld pairs; ", lcs_bad);
  }

  const std::vector<Sentence> c1{{"a", "b"}}, r1{{"a", "b", "c", "d"}};
  const double b1 = bleu(c1, r1)[0];
  const std::vector<Sentence> c2{{"a", "b", "c"}}, r2{{"a", "c", "b"}};
  const double rg = rouge_l(c2, r2);
  if (std::abs(b1 - std::exp(-1.0)) > 1e-15 || std::abs(rg - 2.0 / 3.0) > 1e-15) {
    o.pass = false;
    o.detail += "hand cases wrong; ";
  }
  o.detail += fmt("600 corpora BLEU gap %.1e, LCS exact on %ld pairs, BLEU-1 %.6f, ROUGE-L %.6f", worst, pairs, b1, rg);
  return o;
}

// Overfitting -------------------------------------------------------------------

Outcome overfit_check() {
  SmallRig rig(16);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 200;  // one step per epoch: 200 optimiser steps
  tc.lr = 2e-3;
  tc.log_valid_bleu = false;
  train_model(rig.model, rig.train, {}, tc, tc.step_options());
  std::vector<const EncodedSample*> all;
  for (const EncodedSample& e : rig.train) all.push_back(&e);
  const LossBreakdown l = evaluate_losses(rig.model, make_batch(all), tc.step_options());
  const double b4 = evaluate(rig.model, rig.train, {}).scores.bleu[3];
  return {l.l_trans < 0.1 && b4 > 0.9, fmt("train l_trans %.4f (< 0.1), train BLEU-4 %.4f (> 0.9)", l.l_trans, b4)};
}

// Ablation ----------------------------------------------------------------------

Outcome ablation_check() {
  const RunConfig rc;
  const Corpus corpus = generate_corpus(rc.corpus);
  const auto results = run_ablation(corpus, rc, [](const std::string& line) {
    std::printf("  %s\n", line.c_str());
    std::fflush(stdout);
  });
  std::map<std::string, double> b4;
  std::string table;
  for (const AblationResult& r : results) {
    b4[r.row->name] = r.mean.bleu[3];
    table += fmt("%s %.4f, ", r.row->name, r.mean.bleu[3]);
  }
  Outcome o;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) {
      o.pass = false;
      o.detail += "violated: " + what + "; ";
    }
  };
  require(b4["full"] > b4["SE+LE+VT"], "full > SE+LE+VT");
  require(b4["SE+LE+VT"] >= b4["SE+VT"], "SE+LE+VT >= SE+VT");
  require(b4["SE+VT"] > b4["SE"], "SE+VT > SE");
  require(b4["LE"] < b4["SE"], "LE < SE");
  require(b4["full"] - b4["SE"] >= 0.03, "full - SE >= 0.03");
  o.detail += "mean BLEU-4 over seeds " + rc.train.ablation_seeds + ": " + table;
  return o;
}

// Determinism -------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string(SIGNCLIP_CLI) + " " + args + " > " + (dir / "stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    if (slurp(e.path()) != slurp(b / e.path().filename())) return false;
  }
  return true;
}

Outcome determinism_check() {
  const fs::path dir = fs::temp_directory_path() / "signclip_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "small.cfg") << "n_train = 24\nn_valid = 6\nn_test = 6\nepochs = 4\n";
  const std::string cfg = " --config " + (dir / "small.cfg").string();
  auto p = [&](const char* name) { return (dir / name).string(); };
  Outcome o;
  auto step = [&](const std::string& args) {
    const int code = run_cli(args, dir);
    if (code != 0) {
      o.pass = false;
      o.detail += fmt("'%s' exited %d: %s; ", args.c_str(), code, slurp(dir / "stdout.txt").c_str());
    }
  };
  step("generate" + cfg + " --out " + p("c1"));
  step("generate" + cfg + " --out " + p("c2"));
  step("train " + p("c1") + cfg + " --out " + p("r1"));
  step("train " + p("c2") + cfg + " --out " + p("r2"));
  step("eval " + p("r1/model.ckpt") + " " + p("c1") + " --out " + p("e1.tsv"));
  step("eval " + p("r2/model.ckpt") + " " + p("c2") + " --out " + p("e2.tsv"));
  if (!o.pass) return o;
  std::size_t corpus_files = 0, run_files = 0;
  const bool corpus_same = same_tree(dir / "c1", dir / "c2", corpus_files);
  const bool run_same = same_tree(dir / "r1", dir / "r2", run_files);
  const bool eval_same = slurp(dir / "e1.tsv") == slurp(dir / "e2.tsv");
  fs::remove_all(dir);
  o.pass = corpus_same && run_same && eval_same;
  o.detail = fmt("generate %s (%zu files), train %s (%zu files), eval %s", corpus_same ? "identical" : "DIFFERS",
                 corpus_files, run_same ? "identical" : "DIFFERS", run_files, eval_same ? "identical" : "DIFFERS");
  return o;
}

// Crop geometry -------------------------------------------------------------------

Outcome crop_check() {
  Outcome o;
  auto contains = [](const CropBox& b, const Landmarks& lm) {
    for (Index i = kMouthFirst; i <= kMouthLast; ++i) {
      const auto& q = lm[static_cast<std::size_t>(i)];
      if (q[0] < b.x0 || q[0] > b.x1 || q[1] < b.y0 || q[1] > b.y1) return false;
    }
    return true;
  };
  long boxes = 0, bad = 0;
  Rng rng(0x43524F50);
  for (int trial = 0; trial < 2000; ++trial) {
    Landmarks lm{};
    for (auto& q : lm) q = {rng.uniform(-20, 120), rng.uniform(-20, 120)};
    ++boxes;
    if (!contains(mouth_box(lm, rng.uniform(0.0, 0.5)), lm)) ++bad;
  }
  SyntheticConfig sc;
  sc.n_train = 8;
  sc.n_valid = 0;
  sc.n_test = 0;
  for (const SyntheticSample& s : generate_corpus(sc).train)
    for (const Landmarks& lm : s.landmarks.frames) {
      ++boxes;
      if (!contains(mouth_box(lm, ModelConfig{}.mouth_margin), lm)) ++bad;
    }

  Landmarks worked{};
  for (auto& q : worked) q = {50.0, 75.0};
  for (Index i = kMouthFirst; i <= kMouthLast; ++i) worked[static_cast<std::size_t>(i)] = {50.0, 75.0};
  worked[kMouthFirst] = {40.0, 70.0};
  worked[kMouthFirst + 1] = {60.0, 80.0};
  const CropBox w = mouth_box(worked, 0.1);
  const bool example = w == CropBox{38, 68, 62, 82};
  o.pass = bad == 0 && example;
  o.detail = fmt("%ld of %ld boxes miss a mouth landmark; (40,70,60,80) -> (%g,%g,%g,%g)", bad, boxes, w.x0, w.y0, w.x1,
                 w.y1);
  return o;
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<Criterion> criteria{
      {"gradcheck", gradcheck_families}, {"infonce", infonce_checks},    {"fusion_bounds", fusion_checks},
      {"s2_encoding", s2_checks},        {"lora_identity", lora_checks}, {"metrics", metric_checks},
      {"overfit", overfit_check},        {"ablation", ablation_check},   {"determinism", determinism_check},
      {"crop_geometry", crop_check},
  };
  const std::map<std::string, double> budget{{"gradcheck", 60}, {"metrics", 30}, {"overfit", 180}, {"ablation", 1200}};
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!filter.empty() && std::string(c.name).find(filter) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (auto it = budget.find(c.name); it != budget.end() && secs > it->second) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", it->second);
    }
    if (!o.pass) ++failures;
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "signclip/decoder.hpp"
#include "signclip/encoders.hpp"
#include "signclip/keyvalue.hpp"

namespace signclip {

/// Generator settings for the desk-scale corpus. Signs 0..2P-1 form the P
/// ambiguous pairs (0,1), (2,3), ...; each pair shares one gesture and
/// differs only in mouthing.
struct SyntheticConfig {
  Index n_signs = 24;
  Index n_ambiguous_pairs = 6;
  Index frames_per_sign = 4;
  Index sentence_min = 3;
  Index sentence_max = 6;
  Index height = 32;
  Index width = 32;
  Index channels = 3;
  double gesture_amplitude = 1.0;
  double mouth_amplitude = 0.2;
  double pixel_sigma = 0.15;
  double landmark_sigma = 0.3;
  double head_jitter = 3.0;  // max head offset in pixels, per sample
  Index n_train = 600;
  Index n_valid = 100;
  Index n_test = 100;
  double test_ambiguous_fraction = 0.75;  // share of test-split signs drawn from pairs
  std::uint64_t seed = 1;

  /// Throws ConfigError when the invariants fail.
  void validate() const;
  Index n_samples() const { return n_train + n_valid + n_test; }
  bool ambiguous(Index sign) const { return sign < 2 * n_ambiguous_pairs; }
};

std::span<const Field<SyntheticConfig>> synthetic_fields();

enum class Split { train, valid, test };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct SyntheticSample {
  Index index = 0;  // global sample number; also the PRNG stream
  FrameSequence video;
  LandmarkStream landmarks;
  std::vector<Index> signs;
  std::vector<std::string> words;
  std::vector<bool> ambiguous;

  std::string sentence() const;
};

struct Corpus {
  SyntheticConfig config;
  std::vector<SyntheticSample> train, valid, test;

  const std::vector<SyntheticSample>& split(Split s) const;
};

/// "sign00", "sign01", ...
std::string sign_word(Index sign);

struct GestureTemplate {
  double x0, y0, x1, y1;  // blob centre at the first and last frame of the sign
  double radius;
  std::vector<double> color;  // per channel
};

/// Per-frame additive colour for the upper and lower half of the mouth box,
/// rendered as fine column stripes anchored at the mouth centre.
struct MouthTemplate {
  std::vector<std::array<std::vector<double>, 2>> frames;
};

struct SignTemplates {
  std::vector<GestureTemplate> gestures;
  std::vector<MouthTemplate> mouths;
};

SignTemplates make_templates(const SyntheticConfig& config);

/// Analytic 68-point face layout shifted by the head offset, without noise.
Landmarks face_landmarks(const SyntheticConfig& config, double dx, double dy);

/// Noise-free frame `step` (0-based within the sign) of `sign` with the head
/// shifted by (dx, dy).
Image render_frame(const SyntheticConfig& config, const SignTemplates& templates, Index sign, Index step, double dx,
                   double dy);

Corpus generate_corpus(const SyntheticConfig& config);

/// Reserved ids followed by train words in order of first appearance.
Vocabulary build_vocabulary(const Corpus& corpus);

/// Directory layout: corpus.meta, NNNN.video, NNNN.lmk, targets.tsv. An
/// existing non-empty directory is refused unless `force`, in which case
/// only files of this layout are replaced.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, bool force);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace signclip

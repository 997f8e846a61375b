#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "signclip/error.hpp"
#include "signclip/synth.hpp"

using namespace signclip;
namespace fs = std::filesystem;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.n_signs = 10;
  c.n_ambiguous_pairs = 3;
  c.n_train = 20;
  c.n_valid = 4;
  c.n_test = 6;
  c.seed = 17;
  return c;
}

bool frames_equal(const FrameSequence& a, const FrameSequence& b) {
  if (a.length() != b.length()) return false;
  for (Index i = 0; i < a.length(); ++i)
    if (!(a.frames[i] == b.frames[i])) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("signclip_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(SyntheticConfigTest, Validation) {
  SyntheticConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.n_ambiguous_pairs = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.height = 8;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.sentence_min = 4;
  c.sentence_max = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.pixel_sigma = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(generate_corpus(c), ConfigError);
}

TEST(SynthTest, PairMembersDifferOnlyInsideMouthBox) {
  SyntheticConfig c = small_config();
  const SignTemplates t = make_templates(c);
  for (double dx : {-1.7, 0.0, 2.2}) {
    const CropBox box = mouth_box(face_landmarks(c, dx, 0.6), 0.0);
    for (Index pair = 0; pair < c.n_ambiguous_pairs; ++pair) {
      for (Index step = 0; step < c.frames_per_sign; ++step) {
        Image a = render_frame(c, t, 2 * pair, step, dx, 0.6);
        Image b = render_frame(c, t, 2 * pair + 1, step, dx, 0.6);
        bool inside_differs = false;
        for (Index y = 0; y < c.height; ++y) {
          for (Index x = 0; x < c.width; ++x) {
            const bool inside = x >= box.x0 && x <= box.x1 && y >= box.y0 && y <= box.y1;
            for (Index ch = 0; ch < c.channels; ++ch) {
              if (inside) inside_differs |= a.at(y, x, ch) != b.at(y, x, ch);
              else ASSERT_EQ(a.at(y, x, ch), b.at(y, x, ch)) << "pixel " << y << "," << x;
            }
          }
        }
        EXPECT_TRUE(inside_differs);
      }
    }
  }
}

TEST(SynthTest, WithoutPairsEveryGestureIsUnique) {
  SyntheticConfig c = small_config();
  c.n_ambiguous_pairs = 0;
  c.mouth_amplitude = 0.0;  // gesture channel only
  const SignTemplates t = make_templates(c);
  for (Index a = 0; a < c.n_signs; ++a) {
    for (Index b = a + 1; b < c.n_signs; ++b) {
      bool differs = false;
      for (Index step = 0; step < c.frames_per_sign && !differs; ++step)
        differs = !(render_frame(c, t, a, step, 0, 0) == render_frame(c, t, b, step, 0, 0));
      EXPECT_TRUE(differs) << a << " vs " << b;
    }
  }
}

TEST(SynthTest, SampleShapesAndTags) {
  SyntheticConfig c = small_config();
  Corpus corpus = generate_corpus(c);
  EXPECT_EQ(static_cast<Index>(corpus.train.size()), c.n_train);
  EXPECT_EQ(static_cast<Index>(corpus.valid.size()), c.n_valid);
  EXPECT_EQ(static_cast<Index>(corpus.test.size()), c.n_test);
  std::set<Index> ids;
  for (Split sp : {Split::train, Split::valid, Split::test}) {
    for (const SyntheticSample& s : corpus.split(sp)) {
      EXPECT_TRUE(ids.insert(s.index).second);
      const auto len = static_cast<Index>(s.signs.size());
      EXPECT_GE(len, c.sentence_min);
      EXPECT_LE(len, c.sentence_max);
      EXPECT_EQ(s.video.length(), c.frames_per_sign * len);
      EXPECT_EQ(s.landmarks.length(), s.video.length());
      for (std::size_t k = 0; k < s.signs.size(); ++k) {
        EXPECT_EQ(s.words[k], sign_word(s.signs[k]));
        EXPECT_EQ(s.ambiguous[k], s.signs[k] < 2 * c.n_ambiguous_pairs);
      }
      // Mouth landmarks stay inside the frame so the crop is never clamped away.
      for (const Landmarks& lm : s.landmarks.frames) {
        const CropBox b = mouth_box(lm, 0.1);
        EXPECT_GE(b.x0, 0.0);
        EXPECT_LE(b.x1, static_cast<double>(c.width - 1));
        EXPECT_GE(b.y0, 0.0);
        EXPECT_LE(b.y1, static_cast<double>(c.height - 1));
      }
    }
  }
  EXPECT_EQ(static_cast<Index>(ids.size()), c.n_samples());
  EXPECT_NO_THROW(crop_mouth_region(corpus.train[0].video, corpus.train[0].landmarks));
}

TEST(SynthTest, SameSeedSameCorpusDifferentSeedDifferent) {
  SyntheticConfig c = small_config();
  Corpus a = generate_corpus(c), b = generate_corpus(c);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_TRUE(frames_equal(a.train[i].video, b.train[i].video));
    EXPECT_EQ(a.train[i].landmarks.frames, b.train[i].landmarks.frames);
    EXPECT_EQ(a.train[i].signs, b.train[i].signs);
  }
  c.seed = 18;
  Corpus d = generate_corpus(c);
  EXPECT_FALSE(frames_equal(a.train[5].video, d.train[5].video));
}

TEST(SynthTest, TestSplitLeansOnAmbiguousPairs) {
  SyntheticConfig c = small_config();
  c.n_test = 200;
  Corpus corpus = generate_corpus(c);
  double amb = 0, total = 0;
  for (const auto& s : corpus.test)
    for (bool a : s.ambiguous) {
      amb += a;
      total += 1;
    }
  EXPECT_NEAR(amb / total, c.test_ambiguous_fraction, 0.05);
}

TEST(VocabularyBuildTest, Examples) {
  Corpus corpus = generate_corpus(small_config());
  Vocabulary v = build_vocabulary(corpus);
  EXPECT_EQ(v.size(), 14);
  for (Index i = Vocabulary::kReserved; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  // Order of first appearance in train.
  EXPECT_EQ(v.token(Vocabulary::kReserved), corpus.train[0].words[0]);
  EXPECT_EQ(v.id("sign99"), Vocabulary::kUnk);
  Corpus empty;
  EXPECT_THROW(build_vocabulary(empty), ContractError);
}

TEST(CorpusIoTest, RoundTripAndByteIdenticalRewrite) {
  TempDir a("corpus_a"), b("corpus_b");
  Corpus corpus = generate_corpus(small_config());
  write_corpus(a.path, corpus, false);
  Corpus back = read_corpus(a.path);
  ASSERT_EQ(back.train.size(), corpus.train.size());
  ASSERT_EQ(back.test.size(), corpus.test.size());
  for (std::size_t i = 0; i < corpus.test.size(); ++i) {
    EXPECT_TRUE(frames_equal(back.test[i].video, corpus.test[i].video));
    EXPECT_EQ(back.test[i].landmarks.frames, corpus.test[i].landmarks.frames);
    EXPECT_EQ(back.test[i].signs, corpus.test[i].signs);
    EXPECT_EQ(back.test[i].ambiguous, corpus.test[i].ambiguous);
  }
  EXPECT_EQ(format_fields(back.config, synthetic_fields()), format_fields(corpus.config, synthetic_fields()));

  write_corpus(b.path, generate_corpus(small_config()), false);
  for (const auto& entry : fs::directory_iterator(a.path))
    EXPECT_EQ(slurp(entry.path()), slurp(b.path / entry.path().filename())) << entry.path();
  EXPECT_NE(slurp(a.path / "corpus.meta").find("corpus_seed = 17"), std::string::npos);
  EXPECT_EQ(slurp(a.path / "targets.tsv").substr(0, 12), "id\tsentence\n");
}

TEST(CorpusIoTest, RefusesNonEmptyDirectoryWithoutForce) {
  TempDir d("corpus_force");
  Corpus corpus = generate_corpus(small_config());
  write_corpus(d.path, corpus, false);
  EXPECT_THROW(write_corpus(d.path, corpus, false), IoError);
  std::ofstream(d.path / "notes.txt") << "keep me";
  EXPECT_NO_THROW(write_corpus(d.path, corpus, true));
  EXPECT_TRUE(fs::exists(d.path / "notes.txt"));
}

TEST(CorpusIoTest, RejectsUnknownMetaKey) {
  TempDir d("corpus_meta");
  write_corpus(d.path, generate_corpus(small_config()), false);
  std::ofstream(d.path / "corpus.meta", std::ios::app) << "bogus = 1\n";
  EXPECT_THROW(read_corpus(d.path), IoError);
}

#include "signclip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "signclip/error.hpp"
#include "signclip/rng.hpp"

namespace signclip {

namespace {

// PRNG streams: sample i draws from stream i; templates use a stream far
// above any sample index.
constexpr std::uint64_t kTemplateStream = 1ULL << 40;
constexpr double kStripePeriod = 3.0;  // pixels

using SF = Field<SyntheticConfig>;
const SF kSyntheticFields[] = {
    {"n_signs", &SyntheticConfig::n_signs, "number of distinct signs (vocabulary words)"},
    {"n_ambiguous_pairs", &SyntheticConfig::n_ambiguous_pairs, "pairs sharing a gesture, told apart by mouthing"},
    {"frames_per_sign", &SyntheticConfig::frames_per_sign, "video frames rendered per sign"},
    {"sentence_min", &SyntheticConfig::sentence_min, "shortest sentence in signs"},
    {"sentence_max", &SyntheticConfig::sentence_max, "longest sentence in signs"},
    {"height", &SyntheticConfig::height, "frame height in pixels"},
    {"width", &SyntheticConfig::width, "frame width in pixels"},
    {"channels", &SyntheticConfig::channels, "colour channels"},
    {"gesture_amplitude", &SyntheticConfig::gesture_amplitude, "peak brightness of the hand blob"},
    {"mouth_amplitude", &SyntheticConfig::mouth_amplitude, "RMS of the mouthing pattern"},
    {"pixel_sigma", &SyntheticConfig::pixel_sigma, "additive Gaussian pixel noise"},
    {"landmark_sigma", &SyntheticConfig::landmark_sigma, "Gaussian landmark noise in pixels"},
    {"head_jitter", &SyntheticConfig::head_jitter, "max per-sample head offset in pixels"},
    {"n_train", &SyntheticConfig::n_train, "train split size"},
    {"n_valid", &SyntheticConfig::n_valid, "validation split size"},
    {"n_test", &SyntheticConfig::n_test, "test split size"},
    {"test_ambiguous_fraction", &SyntheticConfig::test_ambiguous_fraction, "share of test signs drawn from pairs"},
    {"corpus_seed", &SyntheticConfig::seed, "master seed of the generator"},
};

struct FaceLayout {
  double cx, cy, rx, ry;     // face ellipse
  double mx, my, mw, mh;     // mouth centre and outer-lip half extents
};

FaceLayout face_layout(const SyntheticConfig& c, double dx, double dy) {
  const double w = static_cast<double>(c.width), h = static_cast<double>(c.height);
  return {0.5 * w - 0.5 + dx, 0.34 * h + dy, 0.2 * w, 0.26 * h, 0.5 * w - 0.5 + dx, 0.47 * h + dy, 0.11 * w,
          0.05 * h};
}

void ellipse_points(Landmarks& lm, Index first, Index count, double cx, double cy, double rx, double ry,
                    double a0, double a1) {
  for (Index i = 0; i < count; ++i) {
    const double t = count == 1 ? a0 : a0 + (a1 - a0) * static_cast<double>(i) / static_cast<double>(count - 1);
    lm[static_cast<std::size_t>(first + i)] = {cx + rx * std::cos(t), cy + ry * std::sin(t)};
  }
}

double channel_tint(Index ch, double r, double g, double b) {
  switch (ch % 3) {
    case 0: return r;
    case 1: return g;
    default: return b;
  }
}

}  // namespace

std::span<const Field<SyntheticConfig>> synthetic_fields() { return kSyntheticFields; }

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic config: " + m); };
  if (n_signs < 1) fail("n_signs must be >= 1");
  if (n_ambiguous_pairs < 0 || 2 * n_ambiguous_pairs > n_signs) fail("need 0 <= 2 * n_ambiguous_pairs <= n_signs");
  if (frames_per_sign < 1) fail("frames_per_sign must be >= 1");
  if (sentence_min < 1 || sentence_max < sentence_min) fail("need 1 <= sentence_min <= sentence_max");
  if (height < 16 || width < 16) fail("frames must be at least 16x16");
  if (channels < 1) fail("channels must be >= 1");
  for (double v : {gesture_amplitude, mouth_amplitude, pixel_sigma, landmark_sigma, head_jitter})
    if (!(v >= 0.0) || !std::isfinite(v)) fail("amplitudes and noise levels must be finite and >= 0");
  if (head_jitter > 0.1 * static_cast<double>(std::min(height, width))) fail("head_jitter too large for the frame");
  if (n_train < 1 || n_valid < 0 || n_test < 0) fail("need n_train >= 1 and non-negative valid/test sizes");
  if (!(test_ambiguous_fraction >= 0.0 && test_ambiguous_fraction <= 1.0))
    fail("test_ambiguous_fraction must lie in [0, 1]");
  if (n_samples() > 9999) fail("at most 9999 samples (four-digit file names)");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

std::string SyntheticSample::sentence() const {
  std::string s;
  for (const std::string& w : words) s += (s.empty() ? "" : " ") + w;
  return s;
}

const std::vector<SyntheticSample>& Corpus::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::valid: return valid;
    case Split::test: return test;
  }
  return train;
}

std::string sign_word(Index sign) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sign%02ld", static_cast<long>(sign));
  return buf;
}

SignTemplates make_templates(const SyntheticConfig& c) {
  c.validate();
  Rng rng(c.seed, kTemplateStream);
  const double w = static_cast<double>(c.width), h = static_cast<double>(c.height);
  SignTemplates t;
  for (Index s = 0; s < c.n_signs; ++s) {
    if (c.ambiguous(s) && s % 2 == 1) {
      t.gestures.push_back(t.gestures.back());  // pair partner: identical hands
      continue;
    }
    GestureTemplate g;
    g.x0 = rng.uniform(0.12, 0.88) * w;
    g.y0 = rng.uniform(0.62, 0.92) * h;
    g.x1 = rng.uniform(0.12, 0.88) * w;
    g.y1 = rng.uniform(0.62, 0.92) * h;
    g.radius = rng.uniform(0.05, 0.09) * w;
    for (Index ch = 0; ch < c.channels; ++ch) g.color.push_back(c.gesture_amplitude * rng.uniform(0.3, 1.0));
    t.gestures.push_back(std::move(g));
  }
  for (Index s = 0; s < c.n_signs; ++s) {
    MouthTemplate m;
    if (c.ambiguous(s) && s % 2 == 1) {
      // Mirror image of the partner's pattern: the two are maximally apart.
      m = t.mouths.back();
      for (auto& frame : m.frames)
        for (auto& half : frame)
          for (double& v : half) v = -v;
      t.mouths.push_back(std::move(m));
      continue;
    }
    double sq = 0.0;
    Index n = 0;
    for (Index f = 0; f < c.frames_per_sign; ++f) {
      std::array<std::vector<double>, 2> halves;
      for (auto& half : halves) {
        for (Index ch = 0; ch < c.channels; ++ch) {
          half.push_back(rng.normal());
          sq += half.back() * half.back();
          ++n;
        }
      }
      m.frames.push_back(std::move(halves));
    }
    const double scale = sq > 0.0 ? c.mouth_amplitude / std::sqrt(sq / static_cast<double>(n)) : 0.0;
    for (auto& frame : m.frames)
      for (auto& half : frame)
        for (double& v : half) v *= scale;
    t.mouths.push_back(std::move(m));
  }
  return t;
}

Landmarks face_landmarks(const SyntheticConfig& c, double dx, double dy) {
  const FaceLayout f = face_layout(c, dx, dy);
  const double pi = std::numbers::pi;
  Landmarks lm{};
  ellipse_points(lm, 0, 17, f.cx, f.cy, f.rx, f.ry, pi, 0.0);  // jaw, left to right through the chin
  for (Index i = 0; i < 17; ++i) lm[static_cast<std::size_t>(i)][1] = f.cy + std::abs(lm[i][1] - f.cy);
  const double brow_y = f.cy - 0.45 * f.ry, eye_y = f.cy - 0.25 * f.ry;
  ellipse_points(lm, 17, 5, f.cx - 0.45 * f.rx, brow_y, 0.3 * f.rx, 0.08 * f.ry, pi, 2.0 * pi);
  ellipse_points(lm, 22, 5, f.cx + 0.45 * f.rx, brow_y, 0.3 * f.rx, 0.08 * f.ry, pi, 2.0 * pi);
  for (Index i = 0; i < 4; ++i) lm[27 + i] = {f.cx, eye_y + 0.1 * f.ry * static_cast<double>(i)};
  for (Index i = 0; i < 5; ++i) lm[31 + i] = {f.cx + 0.12 * f.rx * static_cast<double>(i - 2), f.cy + 0.1 * f.ry};
  ellipse_points(lm, 36, 6, f.cx - 0.45 * f.rx, eye_y, 0.18 * f.rx, 0.06 * f.ry, pi, 3.0 * pi - pi / 3.0);
  ellipse_points(lm, 42, 6, f.cx + 0.45 * f.rx, eye_y, 0.18 * f.rx, 0.06 * f.ry, pi, 3.0 * pi - pi / 3.0);
  ellipse_points(lm, 48, 12, f.mx, f.my, f.mw, f.mh, pi, 3.0 * pi - pi / 6.0);          // outer lip
  ellipse_points(lm, 60, 8, f.mx, f.my, 0.7 * f.mw, 0.5 * f.mh, pi, 3.0 * pi - pi / 4.0);  // inner lip
  return lm;
}

Image render_frame(const SyntheticConfig& c, const SignTemplates& t, Index sign, Index step, double dx, double dy) {
  if (sign < 0 || sign >= c.n_signs) throw ContractError("render_frame: sign out of range");
  if (step < 0 || step >= c.frames_per_sign) throw ContractError("render_frame: step out of range");
  const FaceLayout f = face_layout(c, dx, dy);
  const CropBox mouth = mouth_box(face_landmarks(c, dx, dy), 0.0);
  const GestureTemplate& g = t.gestures[static_cast<std::size_t>(sign)];
  const auto& pattern = t.mouths[static_cast<std::size_t>(sign)].frames[static_cast<std::size_t>(step)];
  const double a = c.frames_per_sign == 1 ? 0.0 : static_cast<double>(step) / static_cast<double>(c.frames_per_sign - 1);
  const double bx = g.x0 + a * (g.x1 - g.x0), by = g.y0 + a * (g.y1 - g.y0);

  Image img(c.height, c.width, c.channels, 0.0);
  for (Index y = 0; y < c.height; ++y) {
    for (Index x = 0; x < c.width; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const double fe = std::pow((px - f.cx) / f.rx, 2) + std::pow((py - f.cy) / f.ry, 2);
      const double le = std::pow((px - f.mx) / f.mw, 2) + std::pow((py - f.my) / f.mh, 2);
      const double blob = std::exp(-((px - bx) * (px - bx) + (py - by) * (py - by)) / (2.0 * g.radius * g.radius));
      const bool in_mouth = px >= mouth.x0 && px <= mouth.x1 && py >= mouth.y0 && py <= mouth.y1;
      // Fine stripes locked to the mouth centre. A crop that follows the
      // landmarks sees them at a fixed phase; a fixed coarse grid sees an
      // attenuated, aliased copy whose phase moves with the head.
      const double stripe = std::numbers::sqrt2 * std::cos(2.0 * std::numbers::pi * (px - f.mx) / kStripePeriod);
      for (Index ch = 0; ch < c.channels; ++ch) {
        double v = 0.05;
        if (fe <= 1.0) v = channel_tint(ch, 0.55, 0.42, 0.33);
        if (le <= 1.0) v = channel_tint(ch, 0.62, 0.25, 0.25);
        if (in_mouth) v += stripe * pattern[py < f.my ? 0 : 1][static_cast<std::size_t>(ch)];
        v += blob * g.color[static_cast<std::size_t>(ch)];
        img.at(y, x, ch) = v;
      }
    }
  }
  return img;
}

namespace {

SyntheticSample generate_sample(const SyntheticConfig& c, const SignTemplates& t, Index index, Split split) {
  Rng rng(c.seed, static_cast<std::uint64_t>(index));
  SyntheticSample s;
  s.index = index;
  const Index len = c.sentence_min + static_cast<Index>(rng.below(static_cast<std::uint64_t>(
                                         c.sentence_max - c.sentence_min + 1)));
  const Index n_pair_signs = 2 * c.n_ambiguous_pairs;
  for (Index k = 0; k < len; ++k) {
    Index sign;
    if (split == Split::train && k == 0 && index < c.n_signs) {
      sign = index;  // the first n_signs train sentences open with each sign once
    } else if (split == Split::test && n_pair_signs > 0 && n_pair_signs < c.n_signs) {
      sign = rng.uniform() < c.test_ambiguous_fraction
                 ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(n_pair_signs)))
                 : n_pair_signs + static_cast<Index>(rng.below(static_cast<std::uint64_t>(c.n_signs - n_pair_signs)));
    } else {
      sign = static_cast<Index>(rng.below(static_cast<std::uint64_t>(c.n_signs)));
    }
    s.signs.push_back(sign);
    s.words.push_back(sign_word(sign));
    s.ambiguous.push_back(c.ambiguous(sign));
  }
  const double dx = rng.uniform(-c.head_jitter, c.head_jitter);
  const double dy = rng.uniform(-c.head_jitter, c.head_jitter);
  const Landmarks clean = face_landmarks(c, dx, dy);
  for (Index sign : s.signs) {
    for (Index step = 0; step < c.frames_per_sign; ++step) {
      Image frame = render_frame(c, t, sign, step, dx, dy);
      for (double& v : frame.pixels) v += c.pixel_sigma * rng.normal();
      s.video.frames.push_back(std::move(frame));
      Landmarks lm = clean;
      for (auto& p : lm) {
        p[0] += c.landmark_sigma * rng.normal();
        p[1] += c.landmark_sigma * rng.normal();
      }
      s.landmarks.frames.push_back(lm);
    }
  }
  return s;
}

}  // namespace

Corpus generate_corpus(const SyntheticConfig& config) {
  config.validate();
  const SignTemplates t = make_templates(config);
  Corpus corpus;
  corpus.config = config;
  Index index = 0;
  for (auto [split, n, out] : {std::tuple{Split::train, config.n_train, &corpus.train},
                               std::tuple{Split::valid, config.n_valid, &corpus.valid},
                               std::tuple{Split::test, config.n_test, &corpus.test}}) {
    for (Index i = 0; i < n; ++i) out->push_back(generate_sample(config, t, index++, split));
  }
  return corpus;
}

Vocabulary build_vocabulary(const Corpus& corpus) {
  if (corpus.train.empty()) throw ContractError("build_vocabulary: empty train split");
  Vocabulary v;
  for (const SyntheticSample& s : corpus.train)
    for (const std::string& w : s.words) v.add(w);
  return v;
}

// --- corpus directory --------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string sample_stem(Index index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04ld", static_cast<long>(index));
  return buf;
}

bool is_layout_file(const fs::path& p) {
  const std::string name = p.filename().string();
  const std::string ext = p.extension().string();
  return name == "corpus.meta" || name == "targets.tsv" || ext == ".video" || ext == ".lmk";
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_corpus(const fs::path& dir, const Corpus& corpus, bool force) {
  corpus.config.validate();
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw IoError(dir.string() + " is not empty (use --force to overwrite)");
      for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_layout_file(entry.path())) fs::remove(entry.path());
    }
  } else {
    fs::create_directories(dir);
  }

  std::string meta = "# synthetic sign corpus\nformat_version = 1\n";
  meta += "prng = mt19937_64; stream seed = splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019)); "
          "stream i renders sample i, stream 2^40 draws the sign templates\n";
  meta += format_fields(corpus.config, synthetic_fields());
  write_text(dir / "corpus.meta", meta);

  std::string targets = "id\tsentence\n";
  for (Split split : {Split::train, Split::valid, Split::test}) {
    for (const SyntheticSample& s : corpus.split(split)) {
      write_video(dir / (sample_stem(s.index) + ".video"), s.video);
      write_landmarks(dir / (sample_stem(s.index) + ".lmk"), s.landmarks);
      targets += sample_stem(s.index) + "\t" + s.sentence() + "\n";
    }
  }
  write_text(dir / "targets.tsv", targets);
}

Corpus read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  auto values = parse_key_values(read_text(dir / "corpus.meta"), (dir / "corpus.meta").string());
  if (values["format_version"] != "1") throw IoError("corpus.meta: unsupported format_version");
  values.erase("format_version");
  values.erase("prng");
  Corpus corpus;
  take_fields(corpus.config, synthetic_fields(), values);
  if (!values.empty()) throw IoError("corpus.meta: unknown key '" + values.begin()->first + "'");
  corpus.config.validate();
  const SyntheticConfig& c = corpus.config;

  std::istringstream tsv(read_text(dir / "targets.tsv"));
  std::string line;
  std::getline(tsv, line);
  if (line != "id\tsentence") throw IoError("targets.tsv: bad header");
  std::vector<std::pair<Index, std::string>> rows;
  while (std::getline(tsv, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError("targets.tsv: missing tab in '" + line + "'");
    rows.emplace_back(parse_index("id", line.substr(0, tab)), line.substr(tab + 1));
  }
  if (static_cast<Index>(rows.size()) != c.n_samples()) {
    throw IoError("targets.tsv: " + std::to_string(rows.size()) + " rows, corpus.meta declares " +
                  std::to_string(c.n_samples()));
  }
  for (const auto& [index, text] : rows) {
    if (index < 0 || index >= c.n_samples()) throw IoError("targets.tsv: id out of range");
    SyntheticSample s;
    s.index = index;
    std::istringstream words(text);
    for (std::string w; words >> w;) {
      if (w.size() < 5 || w.rfind("sign", 0) != 0) throw IoError("targets.tsv: unexpected word '" + w + "'");
      const Index sign = parse_index("word", w.substr(4));
      if (sign < 0 || sign >= c.n_signs) throw IoError("targets.tsv: sign out of range in '" + w + "'");
      s.signs.push_back(sign);
      s.words.push_back(w);
      s.ambiguous.push_back(c.ambiguous(sign));
    }
    s.video = read_video(dir / (sample_stem(index) + ".video"));
    s.landmarks = read_landmarks(dir / (sample_stem(index) + ".lmk"), s.video.length());
    if (s.video.length() != c.frames_per_sign * static_cast<Index>(s.signs.size())) {
      throw IoError("sample " + sample_stem(index) + ": frame count does not match its sentence");
    }
    auto& split = index < c.n_train ? corpus.train : index < c.n_train + c.n_valid ? corpus.valid : corpus.test;
    split.push_back(std::move(s));
  }
  for (auto* split : {&corpus.train, &corpus.valid, &corpus.test})
    std::sort(split->begin(), split->end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return corpus;
}

}  // namespace signclip

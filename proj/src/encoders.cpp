#include "signclip/encoders.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "signclip/error.hpp"
#include "signclip/rng.hpp"

namespace signclip {

double sample_bilinear(const Image& img, double y, double x, Index ch) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const Index y0 = static_cast<Index>(std::floor(y));
  const Index x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, img.height - 1);
  const Index x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = (1.0 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch);
  const double bottom = (1.0 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch);
  return (1.0 - fy) * top + fy * bottom;
}

Image resize_bilinear(const Image& img, Index out_h, Index out_w) {
  if (img.height < 1 || img.width < 1 || out_h < 1 || out_w < 1) {
    throw ContractError("resize_bilinear: empty image or target");
  }
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (Index i = 0; i < out_h; ++i) {
    const double y = (static_cast<double>(i) + 0.5) * sy - 0.5;
    for (Index j = 0; j < out_w; ++j) {
      const double x = (static_cast<double>(j) + 0.5) * sx - 0.5;
      for (Index c = 0; c < img.channels; ++c) out.at(i, j, c) = sample_bilinear(img, y, x, c);
    }
  }
  return out;
}

Image resample_box(const Image& img, const CropBox& box, Index out_h, Index out_w) {
  Image out(out_h, out_w, img.channels);
  const double sy = box.height() / static_cast<double>(out_h);
  const double sx = box.width() / static_cast<double>(out_w);
  for (Index i = 0; i < out_h; ++i) {
    const double y = box.y0 + (static_cast<double>(i) + 0.5) * sy;
    for (Index j = 0; j < out_w; ++j) {
      const double x = box.x0 + (static_cast<double>(j) + 0.5) * sx;
      for (Index c = 0; c < img.channels; ++c) out.at(i, j, c) = sample_bilinear(img, y, x, c);
    }
  }
  return out;
}

void FrameSequence::validate() const {
  if (frames.empty()) throw ContractError("FrameSequence: no frames");
  const Image& f0 = frames.front();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Image& f = frames[t];
    if (f.height != f0.height || f.width != f0.width || f.channels != f0.channels) {
      throw ContractError("FrameSequence: frame " + std::to_string(t) + " dimensions differ from frame 0");
    }
  }
}

void FeatureSequence::validate(Index d_model) const {
  const Index want = tag == StreamTag::spatial_2d ? 2 * d_model : d_model;
  if (values.cols() != want) {
    throw DimensionError("FeatureSequence: width " + std::to_string(values.cols()) + " but expected " +
                         std::to_string(want));
  }
  if (!values.allFinite()) throw ContractError("FeatureSequence: non-finite value");
}

// --- stub encoder ----------------------------------------------------------

StubEncoder::StubEncoder(Index in_height, Index in_width, Index channels, Index d_model, std::uint64_t seed)
    : in_h_(in_height), in_w_(in_width), channels_(channels) {
  const Index in_dim = in_height * in_width * channels;
  Rng rng(seed, 0x57AB);
  weights_ = Tensor(rng.normal_matrix(in_dim, d_model, 1.0 / std::sqrt(static_cast<double>(in_dim))), false);
}

StubEncoder::StubEncoder(Index in_height, Index in_width, Index channels, Tensor weights)
    : in_h_(in_height), in_w_(in_width), channels_(channels), weights_(std::move(weights)) {
  if (weights_.rows() != in_h_ * in_w_ * channels_) {
    throw DimensionError("StubEncoder: weights " + shape_string(weights_.shape()) + " do not match input " +
                         std::to_string(in_h_) + "x" + std::to_string(in_w_) + "x" + std::to_string(channels_));
  }
  weights_.set_requires_grad(false);
}

RowVector StubEncoder::encode(const Image& view) const {
  if (view.channels != channels_) {
    throw DimensionError("StubEncoder: expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(view.channels));
  }
  const Image* src = &view;
  Image resized;
  if (view.height != in_h_ || view.width != in_w_) {
    resized = resize_bilinear(view, in_h_, in_w_);
    src = &resized;
  }
  Eigen::Map<const RowVector> flat(src->pixels.data(), static_cast<Index>(src->pixels.size()));
  return flat * weights_.value();
}

// --- mouth cropping --------------------------------------------------------

CropBox mouth_box(const Landmarks& lm, double margin) {
  CropBox b{lm[kMouthFirst][0], lm[kMouthFirst][1], lm[kMouthFirst][0], lm[kMouthFirst][1]};
  for (Index i = kMouthFirst; i <= kMouthLast; ++i) {
    const auto& p = lm[static_cast<std::size_t>(i)];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw AlignmentError("mouth_box: non-finite landmark " + std::to_string(i));
    }
    b.x0 = std::min(b.x0, p[0]);
    b.x1 = std::max(b.x1, p[0]);
    b.y0 = std::min(b.y0, p[1]);
    b.y1 = std::max(b.y1, p[1]);
  }
  const double pad = margin * std::max(b.width(), b.height());
  return {b.x0 - pad, b.y0 - pad, b.x1 + pad, b.y1 + pad};
}

CropBox clamp_box(const CropBox& box, Index height, Index width) {
  const double xmax = static_cast<double>(width - 1), ymax = static_cast<double>(height - 1);
  return {std::clamp(box.x0, 0.0, xmax), std::clamp(box.y0, 0.0, ymax), std::clamp(box.x1, 0.0, xmax),
          std::clamp(box.y1, 0.0, ymax)};
}

MouthClip crop_mouth_region(const FrameSequence& video, const LandmarkStream& landmarks,
                            const MouthCropOptions& opts) {
  video.validate();
  if (landmarks.length() != video.length()) {
    throw AlignmentError("crop_mouth_region: " + std::to_string(video.length()) + " frames but " +
                         std::to_string(landmarks.length()) + " landmark rows");
  }
  if (!(opts.margin >= 0.0 && opts.margin <= 0.5)) {
    throw ConfigError("crop_mouth_region: margin must lie in [0, 0.5]");
  }
  MouthClip clip;
  for (Index t = 0; t < video.length(); ++t) {
    const Image& frame = video.frames[static_cast<std::size_t>(t)];
    CropBox box = clamp_box(mouth_box(landmarks.frames[static_cast<std::size_t>(t)], opts.margin), frame.height,
                            frame.width);
    if (!(box.width() > 0.0 && box.height() > 0.0)) {
      if (t == 0) throw AlignmentError("crop_mouth_region: degenerate mouth box in frame 0");
      box = clip.crop_boxes.back();
    }
    clip.frames.push_back(resample_box(frame, box, opts.out_height, opts.out_width));
    clip.crop_boxes.push_back(box);
  }
  return clip;
}

// --- encoding --------------------------------------------------------------

RowVector s2_encode_frame(const Image& frame, const StubEncoder& encoder) {
  if (frame.height < 2 || frame.width < 2) {
    throw ContractError("s2_encode_frame: frame " + std::to_string(frame.height) + "x" +
                        std::to_string(frame.width) + " is smaller than 2x2");
  }
  if (encoder.in_height() != encoder.in_width()) {
    throw ConfigError("s2_encode_frame: encoder input must be square");
  }
  const Index r = encoder.in_height();
  const Image base = resize_bilinear(frame, r, r);
  const Image large = resize_bilinear(frame, 2 * r, 2 * r);

  RowVector pooled = RowVector::Zero(encoder.d_model());
  for (Index py = 0; py < 2; ++py) {
    for (Index px = 0; px < 2; ++px) {
      Image patch(r, r, frame.channels);
      for (Index y = 0; y < r; ++y)
        for (Index x = 0; x < r; ++x)
          for (Index c = 0; c < frame.channels; ++c) patch.at(y, x, c) = large.at(py * r + y, px * r + x, c);
      pooled += encoder.encode(patch);
    }
  }
  pooled /= 4.0;

  RowVector out(2 * encoder.d_model());
  out << encoder.encode(base), pooled;
  return out;
}

FeatureSequence encode_spatial_sequence(const FrameSequence& video, const StubEncoder& encoder) {
  video.validate();
  FeatureSequence fs;
  fs.tag = StreamTag::spatial_2d;
  fs.values.resize(video.length(), 2 * encoder.d_model());
  for (Index t = 0; t < video.length(); ++t) {
    try {
      fs.values.row(t) = s2_encode_frame(video.frames[static_cast<std::size_t>(t)], encoder);
    } catch (const Error& e) {
      throw ContractError("encode_spatial_sequence: frame " + std::to_string(t) + ": " + e.what());
    }
  }
  return fs;
}

FeatureSequence encode_mouth_sequence(const MouthClip& clip, const StubEncoder& encoder) {
  if (clip.length() < 1) throw ContractError("encode_mouth_sequence: empty clip");
  FeatureSequence fs;
  fs.tag = StreamTag::mouth_d;
  fs.values.resize(clip.length(), encoder.d_model());
  for (Index t = 0; t < clip.length(); ++t) {
    try {
      fs.values.row(t) = encoder.encode(clip.frames[static_cast<std::size_t>(t)]);
    } catch (const Error& e) {
      throw ContractError("encode_mouth_sequence: frame " + std::to_string(t) + ": " + e.what());
    }
  }
  return fs;
}

// --- file formats ----------------------------------------------------------

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  os.write(reinterpret_cast<const char*>(&bits), 8);
}

template <typename T>
T get_le(std::istream& is) {
  std::uint64_t bits = 0;
  if (!is.read(reinterpret_cast<char*>(&bits), 8)) throw IoError("unexpected end of binary stream");
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  T v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_video(const std::filesystem::path& path, const FrameSequence& video) {
  video.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_video: cannot open " + path.string());
  const Image& f0 = video.frames.front();
  for (Index v : {video.length(), f0.height, f0.width, f0.channels}) put_le(os, static_cast<std::uint64_t>(v));
  for (const Image& f : video.frames)
    for (double px : f.pixels) put_le(os, px);
  if (!os) throw IoError("write_video: write failed for " + path.string());
}

FrameSequence read_video(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_video: cannot open " + path.string());
  const auto T = get_le<std::uint64_t>(is), H = get_le<std::uint64_t>(is), W = get_le<std::uint64_t>(is),
             C = get_le<std::uint64_t>(is);
  if (T == 0 || H == 0 || W == 0 || C == 0 || T * H * W * C > (1ULL << 32)) {
    throw IoError("read_video: implausible header in " + path.string());
  }
  FrameSequence video;
  for (std::uint64_t t = 0; t < T; ++t) {
    Image f(static_cast<Index>(H), static_cast<Index>(W), static_cast<Index>(C));
    for (double& px : f.pixels) px = get_le<double>(is);
    video.frames.push_back(std::move(f));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("read_video: trailing bytes in " + path.string());
  return video;
}

void write_landmarks(const std::filesystem::path& path, const LandmarkStream& landmarks) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_landmarks: cannot open " + path.string());
  os << "# 68-point landmarks, one frame per line: x1,y1,...,x68,y68\n";
  for (const Landmarks& lm : landmarks.frames) {
    for (std::size_t i = 0; i < lm.size(); ++i) {
      if (i) os << ',';
      os << format_real(lm[i][0]) << ',' << format_real(lm[i][1]);
    }
    os << '\n';
  }
  if (!os) throw IoError("write_landmarks: write failed for " + path.string());
}

LandmarkStream read_landmarks(const std::filesystem::path& path, Index expected_frames) {
  std::ifstream is(path);
  if (!is) throw IoError("read_landmarks: cannot open " + path.string());
  LandmarkStream out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<double> vals;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw IoError("read_landmarks: bad number on line " + std::to_string(lineno) + " of " + path.string());
      }
      vals.push_back(v);
      p = next;
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p < end && *p == ',') ++p;
    }
    if (vals.size() != 2 * kLandmarkCount) {
      throw IoError("read_landmarks: line " + std::to_string(lineno) + " has " + std::to_string(vals.size()) +
                    " values, expected 136");
    }
    Landmarks lm{};
    for (std::size_t i = 0; i < lm.size(); ++i) {
      lm[i] = {vals[2 * i], vals[2 * i + 1]};
      if (!std::isfinite(lm[i][0]) || !std::isfinite(lm[i][1])) {
        throw IoError("read_landmarks: non-finite coordinate on line " + std::to_string(lineno));
      }
    }
    out.frames.push_back(lm);
  }
  if (expected_frames >= 0 && out.length() != expected_frames) {
    throw AlignmentError("read_landmarks: " + std::to_string(out.length()) + " frames in " + path.string() +
                         " but video has " + std::to_string(expected_frames));
  }
  return out;
}

}  // namespace signclip

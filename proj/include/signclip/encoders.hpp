#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "signclip/keyvalue.hpp"
#include "signclip/tensor.hpp"

namespace signclip {

/// H x W x C grid of reals, stored row-major in (y, x, channel) order.
struct Image {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(Index h, Index w, Index c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h * w * c), fill) {}

  double& at(Index y, Index x, Index ch) { return pixels[static_cast<std::size_t>((y * width + x) * channels + ch)]; }
  double at(Index y, Index x, Index ch) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + ch)];
  }
  bool operator==(const Image&) const = default;
};

/// Bilinear sample at a continuous position; pixel centres sit on integer
/// coordinates and out-of-range positions clamp to the border.
double sample_bilinear(const Image& img, double y, double x, Index ch);

/// Bilinear resize with half-pixel centre alignment.
Image resize_bilinear(const Image& img, Index out_h, Index out_w);

/// Axis-aligned box in pixel coordinates (x0, y0) - (x1, y1).
struct CropBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool operator==(const CropBox&) const = default;
};

/// Bilinearly resamples the region inside `box` onto an out_h x out_w grid.
Image resample_box(const Image& img, const CropBox& box, Index out_h, Index out_w);

struct FrameSequence {
  std::vector<Image> frames;
  std::optional<double> frame_rate;

  Index length() const { return static_cast<Index>(frames.size()); }
  /// Throws ContractError unless T >= 1 and every frame shares H, W, C.
  void validate() const;
};

inline constexpr Index kLandmarkCount = 68;
inline constexpr Index kMouthFirst = 48;  // iBUG outer + inner lip: 48..67
inline constexpr Index kMouthLast = 67;

using Landmarks = std::array<std::array<double, 2>, kLandmarkCount>;  // (x, y)

struct LandmarkStream {
  std::vector<Landmarks> frames;
  Index length() const { return static_cast<Index>(frames.size()); }
};

struct MouthClip {
  std::vector<Image> frames;
  std::vector<CropBox> crop_boxes;
  Index length() const { return static_cast<Index>(frames.size()); }
};

enum class StreamTag { spatial_2d, spatial_d, mouth_d, fused_d, conv_d };

/// Time-indexed T x width feature matrix tagged with its role.
struct FeatureSequence {
  Matrix values;
  StreamTag tag = StreamTag::spatial_d;

  Index length() const { return values.rows(); }
  /// Checks the width law (2 * d_model for spatial_2d, d_model otherwise) and
  /// finiteness.
  void validate(Index d_model) const;
};

/// Frozen linear projection of a bilinearly resized, flattened frame.
class StubEncoder {
 public:
  StubEncoder() = default;
  StubEncoder(Index in_height, Index in_width, Index channels, Index d_model, std::uint64_t seed);
  StubEncoder(Index in_height, Index in_width, Index channels, Tensor weights);

  /// Encodes one view; the view is resized to the encoder's input size when
  /// its dimensions differ.
  RowVector encode(const Image& view) const;

  Index in_height() const { return in_h_; }
  Index in_width() const { return in_w_; }
  Index channels() const { return channels_; }
  Index d_model() const { return weights_.cols(); }
  bool frozen() const { return true; }
  const Tensor& weights() const { return weights_; }

 private:
  Index in_h_ = 0, in_w_ = 0, channels_ = 0;
  Tensor weights_;  // (in_h * in_w * C) x d_model, never requires grad
};

/// Mouth bounding box of one frame before clamping: min/max over landmarks
/// 48..67, grown by margin * max(width, height) on every side.
CropBox mouth_box(const Landmarks& lm, double margin);
CropBox clamp_box(const CropBox& box, Index height, Index width);

struct MouthCropOptions {
  double margin = 0.10;
  Index out_height = 16;
  Index out_width = 24;
};

MouthClip crop_mouth_region(const FrameSequence& video, const LandmarkStream& landmarks,
                            const MouthCropOptions& opts = {});

/// concat(f(base view), mean of f over the four r x r quadrants of the 2r
/// resize); width 2 * d_model. The encoder's input must be square (r x r).
RowVector s2_encode_frame(const Image& frame, const StubEncoder& encoder);
FeatureSequence encode_spatial_sequence(const FrameSequence& video, const StubEncoder& encoder);
FeatureSequence encode_mouth_sequence(const MouthClip& clip, const StubEncoder& encoder);

// File formats ----------------------------------------------------------------
//
// Video container: four little-endian uint64 (T, H, W, C) followed by
// T*H*W*C little-endian IEEE-754 doubles in (t, y, x, c) row-major order.
//
// Landmark text: one line per frame, 136 comma-separated reals
// x1,y1,...,x68,y68; blank lines and lines starting with '#' are ignored.

void write_video(const std::filesystem::path& path, const FrameSequence& video);
FrameSequence read_video(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const LandmarkStream& landmarks);
/// `expected_frames` < 0 skips the frame-count check.
LandmarkStream read_landmarks(const std::filesystem::path& path, Index expected_frames = -1);


}  // namespace signclip

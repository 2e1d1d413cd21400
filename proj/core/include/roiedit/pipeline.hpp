#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "roiedit/latent.hpp"
#include "roiedit/networks.hpp"

namespace roiedit {

/// Binary per-pixel mask, row-major (H, W).
class RoiMask {
 public:
  RoiMask() = default;
  RoiMask(int height, int width, bool fill = false);
  RoiMask(int height, int width, std::vector<bool> bits);

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v; }
  const std::vector<bool>& bits() const { return bits_; }
  std::size_t count() const;

  /// 0/1 reals, (H, W).
  Tensor<float> as_real() const;
  bool operator==(const RoiMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<bool> bits_;
};

/// Centred 3x3 Gaussian weights, unit sum.
struct GaussianKernel3 {
  std::array<std::array<double, 3>, 3> w{};

  double sum() const;
};

GaussianKernel3 gaussian_kernel();

/// Per-channel 3x3 convolution with the Gaussian kernel; accepts (H, W) or
/// (H, W, C). Borders are mirrored with edge repetition.
Tensor<float> blur(const Tensor<float>& img);

struct MattingResult {
  ImageTensor composite;
  Tensor<float> matte;  // (H, W), in [0, 1]
};

/// alpha = blur(m); composite = blur((1 - alpha) * x + alpha * y).
MattingResult alpha_matting(const ImageTensor& x, const RoiMask& m, const ImageTensor& y);

/// Thresholds the channel mean of a decoded image at zero.
RoiMask threshold_decoded(const ImageTensor& decoded);

RoiMask predict_roi_mask(const AutoencoderParams& smpn, const ImageTensor& x, RoiId roi, const SliceScheme& scheme,
                         PassCounter* counter = nullptr);

struct EditResult {
  ImageTensor edited;
  RoiMask mask;
  ImageTensor global_styled;
  Tensor<float> matte;
  PassCounter passes;
};

/// ROI-selective style edit: texture noise through the style network, mask
/// from the slice-masked decode of the mask network, then matting.
EditResult edit(const AutoencoderParams& smn, const AutoencoderParams& smpn, const ImageTensor& x,
                const EditConfig& cfg, const SliceScheme& scheme);

/// Moves the style of `x_style` into the ROI of `x_structure`.
EditResult style_swap(const AutoencoderParams& smn, const AutoencoderParams& smpn, const ImageTensor& x_structure,
                      const ImageTensor& x_style, RoiId roi, const SliceScheme& scheme);

/// Adds seeded noise to the ROI's structure channels only and decodes the full latent.
ImageTensor structure_edit(const AutoencoderParams& smpn, const ImageTensor& x, RoiId roi, double mu,
                           std::uint64_t seed, const SliceScheme& scheme, PassCounter* counter = nullptr);

}  // namespace roiedit

#include "roiedit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace roiedit {

RoiMask::RoiMask(int height, int width, bool fill)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill) {}

RoiMask::RoiMask(int height, int width, std::vector<bool> bits) : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != static_cast<std::size_t>(height) * width) throw ShapeError("roi mask: bit count mismatch");
}

std::size_t RoiMask::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true)); }

Tensor<float> RoiMask::as_real() const {
  Tensor<float> t({height_, width_});
  for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i] ? 1.0f : 0.0f;
  return t;
}

double GaussianKernel3::sum() const {
  double s = 0;
  for (const auto& row : w)
    for (double v : row) s += v;
  return s;
}

GaussianKernel3 gaussian_kernel() {
  GaussianKernel3 k;
  double total = 0;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j) {
      k.w[i + 1][j + 1] = std::exp(-(i * i + j * j) / 2.0);
      total += k.w[i + 1][j + 1];
    }
  for (auto& row : k.w)
    for (double& v : row) v /= total;
  return k;
}

Tensor<float> blur(const Tensor<float>& img) {
  if (img.rank() != 2 && img.rank() != 3) throw ShapeError("blur expects (H, W) or (H, W, C)");
  const int h = img.dim(0), w = img.dim(1), c = img.rank() == 3 ? img.dim(2) : 1;
  if (h < 1 || w < 1) throw ShapeError("blur: empty image");
  static const GaussianKernel3 k = gaussian_kernel();
  auto mirror = [](int i, int n) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - i - 1 : i); };
  Tensor<float> out(img.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = std::clamp(mirror(y + dy, h), 0, h - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(mirror(x + dx, w), 0, w - 1);
            acc += k.w[dy + 1][dx + 1] * img[(static_cast<std::size_t>(yy) * w + xx) * c + ch];
          }
        }
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] = static_cast<float>(acc);
      }
  return out;
}

MattingResult alpha_matting(const ImageTensor& x, const RoiMask& m, const ImageTensor& y) {
  require_same_shape(x, y, "alpha_matting");
  if (x.rank() != 3 || m.height() != x.dim(0) || m.width() != x.dim(1)) {
    throw ShapeError("alpha_matting: mask " + std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                     " does not match image " + shape_string(x.shape()));
  }
  MattingResult r;
  r.matte = blur(m.as_real());
  for (auto& a : r.matte.values()) a = std::clamp(a, 0.0f, 1.0f);
  const int c = x.dim(2);
  ImageTensor blend(x.shape());
  for (std::size_t p = 0; p < r.matte.size(); ++p) {
    const double a = r.matte[p];
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      blend[i] = static_cast<float>((1.0 - a) * x[i] + a * y[i]);
    }
  }
  r.composite = blur(blend);
  return r;
}

RoiMask threshold_decoded(const ImageTensor& decoded) {
  if (decoded.rank() != 3) throw ShapeError("threshold_decoded expects (H, W, C)");
  const int h = decoded.dim(0), w = decoded.dim(1), c = decoded.dim(2);
  RoiMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = 0; k < c; ++k) s += decoded.at(y, x, k);
      m.set(y, x, s / c > 0.0);
    }
  return m;
}

RoiMask predict_roi_mask(const AutoencoderParams& smpn, const ImageTensor& x, RoiId roi, const SliceScheme& scheme,
                         PassCounter* counter) {
  const SliceMask slice = make_slice_mask(scheme, roi);
  auto [s, t] = encode(smpn, x, counter);
  return threshold_decoded(decode(smpn, apply_slice_mask(s, slice), t, counter));
}

EditResult edit(const AutoencoderParams& smn, const AutoencoderParams& smpn, const ImageTensor& x,
                const EditConfig& cfg, const SliceScheme& scheme) {
  require_image(x, smn.arch().image_size, "edit");
  EditResult r;
  auto [s1, t1] = encode(smn, x, &r.passes);
  r.global_styled = decode(smn, s1, add_texture_noise(t1, cfg.mu_style_noise, cfg.seed), &r.passes);
  r.mask = predict_roi_mask(smpn, x, cfg.roi, scheme, &r.passes);
  auto m = alpha_matting(x, r.mask, r.global_styled);
  r.edited = std::move(m.composite);
  r.matte = std::move(m.matte);
  return r;
}

EditResult style_swap(const AutoencoderParams& smn, const AutoencoderParams& smpn, const ImageTensor& x_structure,
                      const ImageTensor& x_style, RoiId roi, const SliceScheme& scheme) {
  require_image(x_structure, smn.arch().image_size, "style_swap");
  require_image(x_style, smn.arch().image_size, "style_swap");
  EditResult r;
  auto s = encode(smn, x_structure, &r.passes).first;
  auto t = encode(smn, x_style, &r.passes).second;
  r.global_styled = decode(smn, s, t, &r.passes);
  r.mask = predict_roi_mask(smpn, x_structure, roi, scheme, &r.passes);
  auto m = alpha_matting(x_structure, r.mask, r.global_styled);
  r.edited = std::move(m.composite);
  r.matte = std::move(m.matte);
  return r;
}

ImageTensor structure_edit(const AutoencoderParams& smpn, const ImageTensor& x, RoiId roi, double mu,
                           std::uint64_t seed, const SliceScheme& scheme, PassCounter* counter) {
  if (!(mu >= 0)) throw std::invalid_argument("structure noise scale must be >= 0");
  auto [s, t] = encode(smpn, x, counter);
  const auto noise = structure_noise(s.height(), s.width(), make_slice_mask(scheme, roi), mu, seed);
  Tensor<float> noisy = s.tensor();
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += noise[i];
  return decode(smpn, StructureTensor(std::move(noisy)), t, counter);
}

}  // namespace roiedit

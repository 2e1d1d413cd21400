#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "roiedit/autograd.hpp"
#include "roiedit/latent.hpp"
#include "roiedit/tensor.hpp"

namespace roiedit {

/// RGB image, (H, W, 3), values in [-1, 1].
using ImageTensor = Tensor<float>;

/// 8-bit pixel p maps to p / scale + offset.
struct PixelNormalization {
  double scale = 127.5;
  double offset = -1.0;

  float to_unit(std::uint8_t p) const { return static_cast<float>(p / scale + offset); }
  std::uint8_t to_byte(float v) const;
  nlohmann::json to_json() const { return {{"scale", scale}, {"offset", offset}}; }
  static PixelNormalization from_json(const nlohmann::json& j);
  bool operator==(const PixelNormalization&) const = default;
};

struct ModelConfig {
  int image_size = 64;
  int base_channels = 32;
  int structure_channels = kStructureChannels;
  int texture_dim = kTextureDim;
  SliceScheme slice_scheme = SliceScheme::default_scheme();
  PixelNormalization normalization;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Concrete layer widths. Production models derive this from ModelConfig;
/// tests may build miniature variants directly.
struct ArchSpec {
  int image_size = 64;
  std::vector<int> encoder_widths;  // one stride-2 stage each
  std::vector<int> decoder_widths;  // modulated stages, latent resolution first
  int structure_channels = kStructureChannels;
  int texture_dim = kTextureDim;
  std::vector<int> disc_widths;
  std::vector<int> patch_widths;
  int patch_size = 16;
  int patch_hidden = 64;

  static ArchSpec from_config(const ModelConfig& cfg);
  int stages() const { return static_cast<int>(encoder_widths.size()); }
  int latent_size() const { return image_size >> stages(); }
  void validate() const;
};

/// Ordered, named parameter tensors. Iteration order is by name.
template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, Tensor<T> value);
  const ag::Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, ag::Var<T>>& entries() const { return params_; }
  std::size_t count() const;

  void zero_grad();
  void set_trainable(bool trainable);
  /// Deep copy; the returned set shares no nodes with this one.
  ParamSet clone() const;
  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [k, v] : params_) out.add(k, v->value.template cast<U>());
    return out;
  }
  bool all_finite() const;

 private:
  std::map<std::string, ag::Var<T>> params_;
};

/// Encoder and decoder sharing one parameter set.
template <typename T>
class Autoencoder {
 public:
  struct Latents {
    ag::Var<T> structure;  // (N, h, w, 8)
    ag::Var<T> texture;    // (N, texture_dim)
  };

  Autoencoder(ArchSpec arch, std::uint64_t seed);
  Autoencoder(ArchSpec arch, ParamSet<T> params);

  /// images: (N, H, W, 3)
  Latents encode(const ag::Var<T>& images) const;
  /// Output (N, H, W, 3) through tanh.
  ag::Var<T> decode(const ag::Var<T>& structure, const ag::Var<T>& texture) const;

  const ArchSpec& arch() const { return arch_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  void adopt_params();

  ArchSpec arch_;
  ParamSet<T> params_;
  std::map<std::string, double> gains_;  // runtime weight multipliers
};

/// Image discriminator and patch co-occurrence discriminator.
template <typename T>
class Discriminators {
 public:
  Discriminators(ArchSpec arch, std::uint64_t seed);
  Discriminators(ArchSpec arch, ParamSet<T> params);

  /// (N, H, W, 3) -> (N, 1)
  ag::Var<T> image_logits(const ag::Var<T>& images) const;
  /// Directional derivative of image_logits at `images` along `direction`,
  /// (N, 1), differentiable in the parameters. `images` is not differentiated.
  ag::Var<T> image_logits_jvp(const Tensor<T>& images, const Tensor<T>& direction) const;
  /// patches (N, p, p, 3), references (N * refs_per_patch, p, p, 3) -> (N, 1).
  /// References of each patch are mean-pooled after encoding.
  ag::Var<T> cooccurrence_logits(const ag::Var<T>& patches, const ag::Var<T>& references, int refs_per_patch) const;

  const ArchSpec& arch() const { return arch_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  ag::Var<T> patch_features(const ag::Var<T>& patches) const;

  ArchSpec arch_;
  ParamSet<T> params_;
  std::map<std::string, double> gains_;  // runtime weight multipliers
};

using AutoencoderParams = Autoencoder<float>;
using DiscriminatorParams = Discriminators<float>;

/// Forward-pass instrumentation for the inference path.
struct PassCounter {
  int encoder_calls = 0;
  int decoder_calls = 0;
};

void require_image(const ImageTensor& x, int size, const char* what);

std::pair<StructureTensor, TextureVector> encode(const AutoencoderParams& model, const ImageTensor& x,
                                                 PassCounter* counter = nullptr);
ImageTensor decode(const AutoencoderParams& model, const StructureTensor& s, const TextureVector& t,
                   PassCounter* counter = nullptr);
float discriminate(const DiscriminatorParams& d, const ImageTensor& x);
float discriminate_cooccurrence(const DiscriminatorParams& d, const ImageTensor& patch,
                                std::span<const ImageTensor> reference_patches);

/// Stacks (H, W, C) tensors into (N, H, W, C).
template <typename T>
Tensor<T> stack_images(std::span<const Tensor<float>> images);
/// Row n of an (N, ...) tensor as a float tensor without the batch axis.
template <typename T>
Tensor<float> unstack_image(const Tensor<T>& batch, int n);

/// Multiply-accumulate count of one edit (2 encodes + 2 decodes).
std::int64_t estimate_edit_macs(const ArchSpec& arch);

}  // namespace roiedit

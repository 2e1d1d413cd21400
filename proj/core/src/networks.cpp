#include "roiedit/networks.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace roiedit {

namespace {

template <typename T>
Tensor<T> normal_tensor(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(normal(rng));
  return t;
}

// Weights are stored with unit variance and scaled by gain / sqrt(fan_in) at
// use, so one Adam step size suits every layer.
using Gains = std::map<std::string, double>;

template <typename T>
void add_conv(ParamSet<T>& p, Gains& g, const std::string& name, int k, int cin, int cout, double gain,
              std::mt19937_64& rng) {
  p.add(name + ".weight", normal_tensor<T>({k, k, cin, cout}, 1.0, rng));
  p.add(name + ".bias", Tensor<T>({cout}));
  g[name] = gain / std::sqrt(double(k * k * cin));
}

template <typename T>
void add_linear(ParamSet<T>& p, Gains& g, const std::string& name, int in, int out, double gain,
                std::mt19937_64& rng) {
  p.add(name + ".weight", normal_tensor<T>({in, out}, 1.0, rng));
  p.add(name + ".bias", Tensor<T>({out}));
  g[name] = gain / std::sqrt(double(in));
}

template <typename T>
ag::Var<T> scaled_weight(const ParamSet<T>& p, const Gains& g, const std::string& name) {
  return ag::scale(p.get(name + ".weight"), static_cast<T>(g.at(name)));
}

template <typename T>
ag::Var<T> conv(const ParamSet<T>& p, const Gains& g, const std::string& name, const ag::Var<T>& x, int stride,
                int pad) {
  return ag::conv2d(x, scaled_weight(p, g, name), p.get(name + ".bias"), stride, pad);
}

template <typename T>
ag::Var<T> dense(const ParamSet<T>& p, const Gains& g, const std::string& name, const ag::Var<T>& x) {
  return ag::linear(x, scaled_weight(p, g, name), p.get(name + ".bias"));
}

constexpr double kReluGain = 1.4;

std::string idx(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

}  // namespace

// ---- configuration --------------------------------------------------------

std::uint8_t PixelNormalization::to_byte(float v) const {
  const double p = std::round((static_cast<double>(v) - offset) * scale);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

PixelNormalization PixelNormalization::from_json(const nlohmann::json& j) {
  return {j.at("scale").get<double>(), j.at("offset").get<double>()};
}

void ModelConfig::validate() const {
  if (image_size % 16 != 0 || image_size < 32) {
    throw std::invalid_argument("image_size must be a multiple of 16 and >= 32, got " + std::to_string(image_size));
  }
  if (base_channels < 8) throw std::invalid_argument("base_channels must be >= 8");
  if (structure_channels != kStructureChannels) throw std::invalid_argument("structure_channels must be 8");
  if (texture_dim != kTextureDim) throw std::invalid_argument("texture_dim must be 2048");
  require_valid_scheme(slice_scheme);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_size", image_size},       {"base_channels", base_channels},
          {"structure_channels", structure_channels}, {"texture_dim", texture_dim},
          {"slice_scheme", slice_scheme.to_json()},    {"normalization", normalization.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.structure_channels = j.at("structure_channels").get<int>();
  c.texture_dim = j.at("texture_dim").get<int>();
  c.slice_scheme = SliceScheme::from_json(j.at("slice_scheme"));
  c.normalization = PixelNormalization::from_json(j.at("normalization"));
  return c;
}

ArchSpec ArchSpec::from_config(const ModelConfig& cfg) {
  cfg.validate();
  const int b = cfg.base_channels;
  ArchSpec a;
  a.image_size = cfg.image_size;
  a.encoder_widths = {b / 2, b, 2 * b, 2 * b};
  a.decoder_widths = {2 * b, 2 * b, b, b / 2};
  a.structure_channels = cfg.structure_channels;
  a.texture_dim = cfg.texture_dim;
  a.disc_widths = {b / 2, b, 2 * b, 2 * b};
  a.patch_widths = {b / 2, b, 2 * b};
  a.patch_size = cfg.image_size / 4;
  a.patch_hidden = 2 * b;
  return a;
}

void ArchSpec::validate() const {
  if (encoder_widths.empty() || decoder_widths.size() != encoder_widths.size()) {
    throw std::invalid_argument("arch: decoder must have one modulated stage per encoder stage");
  }
  if (image_size < 1 || (image_size % (1 << stages())) != 0) {
    throw std::invalid_argument("arch: image size not divisible by the downsampling factor");
  }
  if (disc_widths.empty() || patch_widths.empty() || patch_size < 1 || patch_size > image_size) {
    throw std::invalid_argument("arch: bad discriminator geometry");
  }
}

// ---- parameter sets -------------------------------------------------------

template <typename T>
void ParamSet<T>::add(const std::string& name, Tensor<T> value) {
  if (!params_.emplace(name, ag::parameter(std::move(value))).second) {
    throw std::invalid_argument("duplicate parameter " + name);
  }
}

template <typename T>
const ag::Var<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ParamSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v->value.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& [k, v] : params_) v->grad = Tensor<T>();
}

template <typename T>
void ParamSet<T>::set_trainable(bool trainable) {
  for (auto& [k, v] : params_) v->requires_grad = trainable;
}

template <typename T>
ParamSet<T> ParamSet<T>::clone() const {
  ParamSet out;
  for (const auto& [k, v] : params_) {
    out.add(k, v->value);
    out.params_.at(k)->requires_grad = v->requires_grad;
  }
  return out;
}

template <typename T>
bool ParamSet<T>::all_finite() const {
  for (const auto& [k, v] : params_)
    for (T x : v->value.values())
      if (!std::isfinite(x)) return false;
  return true;
}

// ---- autoencoder ----------------------------------------------------------

template <typename T>
Autoencoder<T>::Autoencoder(ArchSpec arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  std::mt19937_64 rng(seed);
  int cin = 3;
  for (std::size_t i = 0; i < arch_.encoder_widths.size(); ++i) {
    add_conv(params_, gains_, idx("enc.conv", i), 3, cin, arch_.encoder_widths[i], kReluGain, rng);
    cin = arch_.encoder_widths[i];
  }
  add_conv(params_, gains_, "enc.structure", 1, cin, arch_.structure_channels, 1.0, rng);
  add_linear(params_, gains_, "enc.texture", cin, arch_.texture_dim, 1.0, rng);
  cin = arch_.structure_channels;
  for (std::size_t i = 0; i < arch_.decoder_widths.size(); ++i) {
    const int w = arch_.decoder_widths[i];
    add_conv(params_, gains_, idx("dec.conv", i), 3, cin, w, kReluGain, rng);
    add_linear(params_, gains_, idx("dec.mod", i) + ".scale", arch_.texture_dim, w, 0.25, rng);
    add_linear(params_, gains_, idx("dec.mod", i) + ".shift", arch_.texture_dim, w, 0.25, rng);
    cin = w;
  }
  add_conv(params_, gains_, "dec.out", 3, cin, 3, 1.0, rng);
}

template <typename T>
Autoencoder<T>::Autoencoder(ArchSpec arch, ParamSet<T> params) : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  adopt_params();
}

template <typename T>
void Autoencoder<T>::adopt_params() {
  Autoencoder<T> reference(arch_, 0);
  gains_ = reference.gains_;
  for (const auto& [name, v] : reference.params_.entries()) {
    if (!params_.contains(name)) throw std::invalid_argument("autoencoder: missing parameter " + name);
    if (params_.get(name)->value.shape() != v->value.shape()) {
      throw ShapeError("autoencoder: parameter " + name + " has shape " +
                       shape_string(params_.get(name)->value.shape()) + ", expected " + shape_string(v->value.shape()));
    }
  }
  if (params_.entries().size() != reference.params_.entries().size()) {
    throw std::invalid_argument("autoencoder: unexpected extra parameters");
  }
}

template <typename T>
typename Autoencoder<T>::Latents Autoencoder<T>::encode(const ag::Var<T>& images) const {
  const auto& s = images->value.shape();
  if (s.size() != 4 || s[1] != arch_.image_size || s[2] != arch_.image_size || s[3] != 3) {
    throw ShapeError("encode: expected (N, " + std::to_string(arch_.image_size) + ", " +
                     std::to_string(arch_.image_size) + ", 3), got " + shape_string(s));
  }
  ag::Var<T> h = images;
  for (std::size_t i = 0; i < arch_.encoder_widths.size(); ++i) {
    h = ag::leaky_relu(conv(params_, gains_, idx("enc.conv", i), h, 2, 1));
  }
  Latents out;
  out.structure = conv(params_, gains_, "enc.structure", h, 1, 0);
  out.texture = dense(params_, gains_, "enc.texture", ag::global_avg_pool(h));
  return out;
}

template <typename T>
ag::Var<T> Autoencoder<T>::decode(const ag::Var<T>& structure, const ag::Var<T>& texture) const {
  const auto& s = structure->value.shape();
  const int ls = arch_.latent_size();
  if (s.size() != 4 || s[1] != ls || s[2] != ls || s[3] != arch_.structure_channels) {
    throw ShapeError("decode: structure " + shape_string(s) + " does not match latent size " + std::to_string(ls));
  }
  if (texture->value.shape() != std::vector<int>{s[0], arch_.texture_dim}) {
    throw ShapeError("decode: texture " + shape_string(texture->value.shape()) + " does not match batch/texture_dim");
  }
  ag::Var<T> h = structure;
  for (std::size_t i = 0; i < arch_.decoder_widths.size(); ++i) {
    if (i > 0) h = ag::upsample2x(h);
    h = conv(params_, gains_, idx("dec.conv", i), h, 1, 1);
    const std::string m = idx("dec.mod", i);
    h = ag::modulate(h, dense(params_, gains_, m + ".scale", texture), dense(params_, gains_, m + ".shift", texture));
    h = ag::leaky_relu(h);
  }
  h = ag::upsample2x(h);
  return ag::tanh(conv(params_, gains_, "dec.out", h, 1, 1));
}

// ---- discriminators -------------------------------------------------------

template <typename T>
Discriminators<T>::Discriminators(ArchSpec arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  int cin = 3;
  int side = arch_.image_size;
  for (std::size_t i = 0; i < arch_.disc_widths.size(); ++i) {
    add_conv(params_, gains_, idx("disc.image.conv", i), 3, cin, arch_.disc_widths[i], kReluGain, rng);
    cin = arch_.disc_widths[i];
    side = (side - 1) / 2 + 1;
  }
  add_linear(params_, gains_, "disc.image.fc", side * side * cin, 1, 1.0, rng);
  cin = 3;
  for (std::size_t i = 0; i < arch_.patch_widths.size(); ++i) {
    add_conv(params_, gains_, idx("disc.patch.conv", i), 3, cin, arch_.patch_widths[i], kReluGain, rng);
    cin = arch_.patch_widths[i];
  }
  add_linear(params_, gains_, "disc.patch.fc0", 2 * cin, arch_.patch_hidden, kReluGain, rng);
  add_linear(params_, gains_, "disc.patch.fc1", arch_.patch_hidden, 1, 1.0, rng);
}

template <typename T>
Discriminators<T>::Discriminators(ArchSpec arch, ParamSet<T> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  Discriminators<T> reference(arch_, 0);
  for (const auto& [name, v] : reference.params_.entries()) {
    if (!params_.contains(name)) throw std::invalid_argument("discriminator: missing parameter " + name);
    if (params_.get(name)->value.shape() != v->value.shape()) {
      throw ShapeError("discriminator: parameter " + name + " has wrong shape");
    }
  }
  gains_ = reference.gains_;
}

template <typename T>
ag::Var<T> Discriminators<T>::image_logits(const ag::Var<T>& images) const {
  const auto& s = images->value.shape();
  if (s.size() != 4 || s[1] != arch_.image_size || s[2] != arch_.image_size || s[3] != 3) {
    throw ShapeError("discriminate: expected " + std::to_string(arch_.image_size) + "x" +
                     std::to_string(arch_.image_size) + " RGB batch, got " + shape_string(s));
  }
  ag::Var<T> h = images;
  for (std::size_t i = 0; i < arch_.disc_widths.size(); ++i) {
    h = ag::leaky_relu(conv(params_, gains_, idx("disc.image.conv", i), h, 2, 1));
  }
  const int n = h->value.dim(0);
  h = ag::reshape(h, {n, static_cast<int>(h->value.size() / n)});
  return dense(params_, gains_, "disc.image.fc", h);
}

template <typename T>
ag::Var<T> Discriminators<T>::image_logits_jvp(const Tensor<T>& images, const Tensor<T>& direction) const {
  require_same_shape(images, direction, "image_logits_jvp");
  ag::Var<T> h = ag::constant(images);
  ag::Var<T> t = ag::constant(direction);
  for (std::size_t i = 0; i < arch_.disc_widths.size(); ++i) {
    const std::string name = idx("disc.image.conv", i);
    Tensor<T> pre;
    {
      ag::NoGradGuard guard;
      pre = conv(params_, gains_, name, h, 2, 1)->value;
      h = ag::leaky_relu(ag::constant(pre));
    }
    auto zero = ag::constant(Tensor<T>({arch_.disc_widths[i]}));
    t = ag::leaky_relu_tangent(ag::conv2d(t, scaled_weight(params_, gains_, name), zero, 2, 1), pre);
  }
  const int n = t->value.dim(0);
  t = ag::reshape(t, {n, static_cast<int>(t->value.size() / n)});
  return ag::linear(t, scaled_weight(params_, gains_, "disc.image.fc"), ag::constant(Tensor<T>({1})));
}

template <typename T>
ag::Var<T> Discriminators<T>::patch_features(const ag::Var<T>& patches) const {
  const auto& s = patches->value.shape();
  if (s.size() != 4 || s[1] != arch_.patch_size || s[2] != arch_.patch_size || s[3] != 3) {
    throw ShapeError("cooccurrence: patches must be " + std::to_string(arch_.patch_size) + "x" +
                     std::to_string(arch_.patch_size) + " RGB, got " + shape_string(s));
  }
  ag::Var<T> h = patches;
  for (std::size_t i = 0; i < arch_.patch_widths.size(); ++i) {
    h = ag::leaky_relu(conv(params_, gains_, idx("disc.patch.conv", i), h, 2, 1));
  }
  return ag::global_avg_pool(h);
}

template <typename T>
ag::Var<T> Discriminators<T>::cooccurrence_logits(const ag::Var<T>& patches, const ag::Var<T>& references,
                                                  int refs_per_patch) const {
  if (refs_per_patch < 1) throw std::invalid_argument("cooccurrence: at least one reference patch required");
  if (references->value.rank() != 4 || references->value.dim(0) != patches->value.dim(0) * refs_per_patch) {
    throw ShapeError("cooccurrence: reference batch must hold refs_per_patch entries per patch");
  }
  auto target = patch_features(patches);
  auto pooled = ag::group_mean(patch_features(references), refs_per_patch);
  auto h = ag::leaky_relu(dense(params_, gains_, "disc.patch.fc0", ag::concat_features(target, pooled)));
  return dense(params_, gains_, "disc.patch.fc1", h);
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Autoencoder<float>;
template class Autoencoder<double>;
template class Discriminators<float>;
template class Discriminators<double>;

// ---- inference helpers ----------------------------------------------------

template <typename T>
Tensor<T> stack_images(std::span<const Tensor<float>> images) {
  if (images.empty()) throw ShapeError("stack_images: empty list");
  std::vector<int> shape{static_cast<int>(images.size())};
  for (int d : images[0].shape()) shape.push_back(d);
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (const auto& im : images) {
    if (im.shape() != images[0].shape()) throw ShapeError("stack_images: inconsistent shapes");
    for (float v : im.values()) out[off++] = static_cast<T>(v);
  }
  return out;
}

template <typename T>
Tensor<float> unstack_image(const Tensor<T>& batch, int n) {
  std::vector<int> shape(batch.shape().begin() + 1, batch.shape().end());
  Tensor<float> out(shape);
  const std::size_t stride = out.size();
  for (std::size_t i = 0; i < stride; ++i) out[i] = static_cast<float>(batch[n * stride + i]);
  return out;
}

template Tensor<float> stack_images<float>(std::span<const Tensor<float>>);
template Tensor<double> stack_images<double>(std::span<const Tensor<float>>);
template Tensor<float> unstack_image<float>(const Tensor<float>&, int);
template Tensor<float> unstack_image<double>(const Tensor<double>&, int);

void require_image(const ImageTensor& x, int size, const char* what) {
  if (x.rank() != 3 || x.dim(0) != size || x.dim(1) != size || x.dim(2) != 3) {
    throw ShapeError(std::string(what) + ": expected (" + std::to_string(size) + ", " + std::to_string(size) +
                     ", 3) image, got " + shape_string(x.shape()));
  }
}

std::pair<StructureTensor, TextureVector> encode(const AutoencoderParams& model, const ImageTensor& x,
                                                 PassCounter* counter) {
  require_image(x, model.arch().image_size, "encode");
  ag::NoGradGuard guard;
  auto lat = model.encode(ag::constant(stack_images<float>(std::span(&x, 1))));
  if (counter) ++counter->encoder_calls;
  return {StructureTensor(unstack_image(lat.structure->value, 0)), TextureVector(lat.texture->value.to_vector())};
}

ImageTensor decode(const AutoencoderParams& model, const StructureTensor& s, const TextureVector& t,
                   PassCounter* counter) {
  ag::NoGradGuard guard;
  const auto& st = s.tensor();
  auto sv = ag::constant(st.reshaped({1, st.dim(0), st.dim(1), st.dim(2)}));
  auto tv = ag::constant(Tensor<float>({1, static_cast<int>(t.size())}, t.values()));
  auto out = model.decode(sv, tv);
  if (counter) ++counter->decoder_calls;
  return unstack_image(out->value, 0);
}

float discriminate(const DiscriminatorParams& d, const ImageTensor& x) {
  require_image(x, d.arch().image_size, "discriminate");
  ag::NoGradGuard guard;
  return d.image_logits(ag::constant(stack_images<float>(std::span(&x, 1))))->value[0];
}

float discriminate_cooccurrence(const DiscriminatorParams& d, const ImageTensor& patch,
                                std::span<const ImageTensor> reference_patches) {
  if (reference_patches.empty()) throw std::invalid_argument("cooccurrence: empty reference list");
  ag::NoGradGuard guard;
  auto p = ag::constant(stack_images<float>(std::span(&patch, 1)));
  auto r = ag::constant(stack_images<float>(reference_patches));
  return d.cooccurrence_logits(p, r, static_cast<int>(reference_patches.size()))->value[0];
}

std::int64_t estimate_edit_macs(const ArchSpec& arch) {
  std::int64_t enc = 0;
  int side = arch.image_size;
  int cin = 3;
  for (int w : arch.encoder_widths) {
    side /= 2;
    enc += std::int64_t(side) * side * 9 * cin * w;
    cin = w;
  }
  enc += std::int64_t(side) * side * cin * arch.structure_channels + std::int64_t(cin) * arch.texture_dim;
  std::int64_t dec = 0;
  cin = arch.structure_channels;
  for (int w : arch.decoder_widths) {
    dec += std::int64_t(side) * side * 9 * cin * w + 2LL * arch.texture_dim * w;
    cin = w;
    side *= 2;
  }
  dec += std::int64_t(side) * side * 9 * cin * 3;
  return 2 * enc + 2 * dec;
}

}  // namespace roiedit

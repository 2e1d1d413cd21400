#include "roiedit/latent.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace roiedit {

namespace {

void require_finite(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

std::string_view roi_name(RoiId roi) {
  switch (roi) {
    case RoiId::hair:
      return "hair";
    case RoiId::skin:
      return "skin";
    case RoiId::nose:
      return "nose";
    case RoiId::eyes:
      return "eyes";
    case RoiId::lips_mouth:
      return "lips_mouth";
  }
  return "unknown";
}

std::optional<RoiId> parse_roi(std::string_view name) {
  for (RoiId r : kAllRois) {
    if (roi_name(r) == name) return r;
  }
  return std::nullopt;
}

StructureTensor::StructureTensor(Tensor<float> data) : data_(std::move(data)) {
  if (data_.rank() != 3 || data_.dim(2) != kStructureChannels || data_.dim(0) < 1 || data_.dim(1) < 1) {
    throw ShapeError("structure tensor must be (h, w, 8) with h, w >= 1, got " + shape_string(data_.shape()));
  }
  require_finite(data_.values(), "structure tensor");
}

StructureTensor::StructureTensor(int h, int w, float fill)
    : StructureTensor(Tensor<float>({h, w, kStructureChannels}, fill)) {}

TextureVector::TextureVector(std::vector<float> data) : data_(std::move(data)) {
  if (data_.size() != kTextureDim) {
    throw ShapeError("texture vector must have length 2048, got " + std::to_string(data_.size()));
  }
  require_finite(data_, "texture vector");
}

int SliceMask::popcount() const {
  int n = 0;
  for (bool k : keep) n += k ? 1 : 0;
  return n;
}

SliceScheme SliceScheme::default_scheme() {
  return SliceScheme({{RoiId::hair, {0, 1}},
                      {RoiId::skin, {2, 3}},
                      {RoiId::nose, {4}},
                      {RoiId::eyes, {5}},
                      {RoiId::lips_mouth, {6, 7}}});
}

const std::set<int>& SliceScheme::channels(RoiId roi) const {
  auto it = assignment_.find(roi);
  if (it == assignment_.end()) {
    throw std::invalid_argument("roi '" + std::string(roi_name(roi)) + "' absent from slice scheme");
  }
  return it->second;
}

nlohmann::json SliceScheme::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [roi, chans] : assignment_) {
    j[std::string(roi_name(roi))] = std::vector<int>(chans.begin(), chans.end());
  }
  return j;
}

SliceScheme SliceScheme::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("slice scheme must be a JSON object");
  Assignment a;
  for (const auto& [name, chans] : j.items()) {
    auto roi = parse_roi(name);
    if (!roi) throw std::invalid_argument("slice scheme: unknown roi '" + name + "'");
    std::set<int> set;
    for (const auto& c : chans) set.insert(c.get<int>());
    a[*roi] = std::move(set);
  }
  return SliceScheme(std::move(a));
}

std::optional<SchemeViolation> validate_scheme(const SliceScheme& scheme) {
  using K = SchemeViolation::Kind;
  for (RoiId roi : kAllRois) {
    if (!scheme.contains(roi)) {
      return SchemeViolation{K::missing_roi, "missing roi: " + std::string(roi_name(roi))};
    }
  }
  std::map<int, RoiId> owner;
  for (const auto& [roi, chans] : scheme.assignment()) {
    if (chans.empty()) {
      return SchemeViolation{K::empty_assignment, "empty assignment for roi " + std::string(roi_name(roi))};
    }
    for (int c : chans) {
      if (c < 0 || c >= kStructureChannels) {
        return SchemeViolation{K::channel_out_of_range, "channel " + std::to_string(c) + " outside 0..7 for roi " +
                                                            std::string(roi_name(roi))};
      }
      auto [it, inserted] = owner.emplace(c, roi);
      if (!inserted) {
        return SchemeViolation{K::overlap, "overlap on channel " + std::to_string(c) + " between " +
                                               std::string(roi_name(it->second)) + " and " +
                                               std::string(roi_name(roi))};
      }
    }
  }
  return std::nullopt;
}

void require_valid_scheme(const SliceScheme& scheme) {
  if (auto v = validate_scheme(scheme)) throw std::invalid_argument("invalid slice scheme: " + v->message);
}

SliceMask make_slice_mask(const SliceScheme& scheme, RoiId roi) {
  SliceMask m;
  for (int c : scheme.channels(roi)) m.keep.at(static_cast<std::size_t>(c)) = true;
  return m;
}

StructureTensor apply_slice_mask(const StructureTensor& s, const SliceMask& mask) {
  Tensor<float> out = s.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask.keep[i % kStructureChannels]) out[i] = 0.0f;
  }
  return StructureTensor(std::move(out));
}

TextureVector add_texture_noise(const TextureVector& t, double mu, std::uint64_t seed) {
  if (!std::isfinite(mu)) throw std::invalid_argument("texture noise scale must be finite");
  if (mu < 0) throw std::invalid_argument("texture noise scale must be non-negative");
  if (mu == 0.0) return t;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> out(t.values());
  for (float& v : out) v = static_cast<float>(v + mu * normal(rng));
  return TextureVector(std::move(out));
}

Tensor<float> structure_noise(int h, int w, const SliceMask& mask, double mu, std::uint64_t seed) {
  if (!std::isfinite(mu) || mu < 0) throw std::invalid_argument("structure noise scale must be finite and >= 0");
  Tensor<float> noise({h, w, kStructureChannels});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (mask.keep[i % kStructureChannels]) noise[i] = static_cast<float>(mu * normal(rng));
  }
  return noise;
}

}  // namespace roiedit

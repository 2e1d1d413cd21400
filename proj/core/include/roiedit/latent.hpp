#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roiedit/tensor.hpp"

namespace roiedit {

inline constexpr int kStructureChannels = 8;
inline constexpr int kTextureDim = 2048;
inline constexpr int kNumRois = 5;

/// The five semantic face regions. Ordinals are part of the checkpoint
/// contract and must not be renumbered.
enum class RoiId : int { hair = 1, skin = 2, nose = 3, eyes = 4, lips_mouth = 5 };

inline constexpr std::array<RoiId, kNumRois> kAllRois = {RoiId::hair, RoiId::skin, RoiId::nose, RoiId::eyes,
                                                         RoiId::lips_mouth};

inline int ordinal(RoiId roi) { return static_cast<int>(roi); }
inline int roi_index(RoiId roi) { return ordinal(roi) - 1; }

std::string_view roi_name(RoiId roi);
std::optional<RoiId> parse_roi(std::string_view name);

/// Spatial latent of shape (h, w, 8). Entries are finite.
class StructureTensor {
 public:
  StructureTensor() = default;
  explicit StructureTensor(Tensor<float> data);
  StructureTensor(int h, int w, float fill = 0.0f);

  int height() const { return data_.dim(0); }
  int width() const { return data_.dim(1); }
  const Tensor<float>& tensor() const { return data_; }
  float& at(int y, int x, int c) { return data_.at(y, x, c); }
  float at(int y, int x, int c) const { return data_.at(y, x, c); }

  bool operator==(const StructureTensor&) const = default;

 private:
  Tensor<float> data_;
};

/// Global style latent, length 2048.
class TextureVector {
 public:
  TextureVector() : data_(kTextureDim, 0.0f) {}
  explicit TextureVector(std::vector<float> data);

  const std::vector<float>& values() const { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }
  std::size_t size() const { return data_.size(); }

  bool operator==(const TextureVector&) const = default;

 private:
  std::vector<float> data_;
};

/// Per-channel keep flags over the structure channels.
struct SliceMask {
  std::array<bool, kStructureChannels> keep{};

  int popcount() const;
  std::vector<bool> as_vector() const { return std::vector<bool>(keep.begin(), keep.end()); }
  bool operator==(const SliceMask&) const = default;
};

/// Assignment of structure channels to ROIs.
class SliceScheme {
 public:
  using Assignment = std::map<RoiId, std::set<int>>;

  SliceScheme() = default;
  explicit SliceScheme(Assignment assignment) : assignment_(std::move(assignment)) {}

  /// hair={0,1}, skin={2,3}, nose={4}, eyes={5}, lips_mouth={6,7}
  static SliceScheme default_scheme();

  const Assignment& assignment() const { return assignment_; }
  bool contains(RoiId roi) const { return assignment_.count(roi) != 0; }
  const std::set<int>& channels(RoiId roi) const;

  nlohmann::json to_json() const;
  /// Parses without validating; call validate_scheme on the result.
  static SliceScheme from_json(const nlohmann::json& j);

  bool operator==(const SliceScheme&) const = default;

 private:
  Assignment assignment_;
};

struct SchemeViolation {
  enum class Kind { missing_roi, empty_assignment, channel_out_of_range, overlap };
  Kind kind;
  std::string message;
};

/// Returns the first violated invariant, or nullopt when the scheme is valid.
std::optional<SchemeViolation> validate_scheme(const SliceScheme& scheme);

/// Throws std::invalid_argument carrying the violation message.
void require_valid_scheme(const SliceScheme& scheme);

struct EditConfig {
  RoiId roi = RoiId::hair;
  double mu_style_noise = 1.0;
  std::uint64_t seed = 0;
};

SliceMask make_slice_mask(const SliceScheme& scheme, RoiId roi);

StructureTensor apply_slice_mask(const StructureTensor& s, const SliceMask& mask);

/// t + mu * g, g ~ N(0, I) drawn from a generator seeded by `seed` alone.
TextureVector add_texture_noise(const TextureVector& t, double mu, std::uint64_t seed);

/// mu-scaled standard normal noise of shape (h, w, 8), nonzero only on channels kept by `mask`.
Tensor<float> structure_noise(int h, int w, const SliceMask& mask, double mu, std::uint64_t seed);

}  // namespace roiedit

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roiedit/latent.hpp"
#include "roiedit/networks.hpp"

namespace roiedit {

/// Label codes: 0 background, then the ROI ordinals (1 hair .. 5 lips_mouth).
inline constexpr std::uint8_t kBackgroundLabel = 0;
inline constexpr std::uint8_t kMaxLabel = 5;

inline std::uint8_t label_code(RoiId roi) { return static_cast<std::uint8_t>(ordinal(roi)); }

/// Per-pixel region codes, (H, W).
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, std::vector<std::uint8_t> codes);

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t at(int y, int x) const { return codes_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<std::uint8_t>& codes() const { return codes_; }

  /// Binary mask of pixels labelled with the ROI's code, row-major.
  std::vector<bool> region(RoiId roi) const;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> codes_;
};

struct DatasetRecord {
  ImageTensor image;
  LabelMap labels;
  std::string id;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads root/images/<id>.png with root/masks/<id>.png, sorted by id. An optional
/// root/label_map.json ({"<source code>": <target code>, ...}) remaps mask codes
/// before validation; unmapped codes pass through unchanged.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& root, const PixelNormalization& norm = {});

/// Y_i: source pixels inside region i, -1 elsewhere.
std::map<RoiId, ImageTensor> roi_separate(const DatasetRecord& rec);

struct SynthConfig {
  int count = 200;
  int image_size = 64;
  std::uint64_t seed = 0;
  /// Every region channel is drawn from [brightness_floor, 255]; background stays below 128.
  int brightness_floor = 140;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Procedural face with its exact label map.
DatasetRecord synthesize_face(int image_size, std::uint64_t seed, int brightness_floor = 140, int index = 0);

/// Writes root/{manifest.json, images/, masks/}; returns the manifest.
nlohmann::json generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root);

/// In-memory equivalent of generate_synthetic followed by load_dataset.
std::vector<DatasetRecord> synthesize_records(const SynthConfig& cfg);

struct TrainingBatch {
  std::vector<ImageTensor> X;
  std::map<RoiId, std::vector<ImageTensor>> Y;

  std::size_t size() const { return X.size(); }
  /// Throws std::invalid_argument when a ROI list is missing or misaligned.
  void validate() const;
};

/// One epoch: seeded shuffle, then full batches only.
std::vector<TrainingBatch> make_batches(const std::vector<DatasetRecord>& records, int batch_size,
                                        std::uint64_t seed);

/// Endless batch source cycling epochs; epoch e is shuffled with seed + e.
class BatchStream {
 public:
  BatchStream(const std::vector<DatasetRecord>& records, int batch_size, std::uint64_t seed);
  const TrainingBatch& next();

 private:
  struct Prepared {
    ImageTensor x;
    std::map<RoiId, ImageTensor> y;
  };
  std::vector<Prepared> items_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  TrainingBatch current_;
};

}  // namespace roiedit

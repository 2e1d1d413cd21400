#include "roiedit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "roiedit/image_io.hpp"

namespace roiedit {

namespace fs = std::filesystem;

LabelMap::LabelMap(int height, int width, std::vector<std::uint8_t> codes)
    : height_(height), width_(width), codes_(std::move(codes)) {
  if (codes_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("label map: code count does not match " + std::to_string(height) + "x" + std::to_string(width));
  }
}

std::vector<bool> LabelMap::region(RoiId roi) const {
  std::vector<bool> out(codes_.size());
  const auto code = label_code(roi);
  for (std::size_t i = 0; i < codes_.size(); ++i) out[i] = codes_[i] == code;
  return out;
}

namespace {

std::map<int, int> read_label_remap(const fs::path& root) {
  std::map<int, int> remap;
  const fs::path p = root / "label_map.json";
  if (!fs::exists(p)) return remap;
  std::ifstream in(p);
  const auto j = nlohmann::json::parse(in);
  for (const auto& [src, dst] : j.items()) remap[std::stoi(src)] = dst.get<int>();
  return remap;
}

}  // namespace

std::vector<DatasetRecord> load_dataset(const fs::path& root, const PixelNormalization& norm) {
  std::vector<DatasetRecord> out;
  const fs::path images = root / "images";
  if (!fs::is_directory(images)) return out;
  const auto remap = read_label_remap(root);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());

  for (const auto& id : ids) {
    const fs::path mask_path = root / "masks" / (id + ".png");
    if (!fs::exists(mask_path)) throw DatasetError("missing mask for " + id);
    const Raster8 rgb = read_png(images / (id + ".png"), 3);
    Raster8 mask = read_png(mask_path, 1);
    if (rgb.width != mask.width || rgb.height != mask.height) {
      throw DatasetError("size mismatch in " + id + ": image " + std::to_string(rgb.width) + "x" +
                         std::to_string(rgb.height) + ", mask " + std::to_string(mask.width) + "x" +
                         std::to_string(mask.height));
    }
    for (auto& c : mask.pixels) {
      if (auto it = remap.find(c); it != remap.end()) c = static_cast<std::uint8_t>(it->second);
      if (c > kMaxLabel) throw DatasetError("unknown label " + std::to_string(c) + " in " + id);
    }
    out.push_back({to_image_tensor(rgb, norm), LabelMap(mask.height, mask.width, std::move(mask.pixels)), id});
  }
  return out;
}

std::map<RoiId, ImageTensor> roi_separate(const DatasetRecord& rec) {
  const auto& img = rec.image;
  if (img.rank() != 3 || img.dim(0) != rec.labels.height() || img.dim(1) != rec.labels.width()) {
    throw ShapeError("roi_separate: image and labels disagree in size for " + rec.id);
  }
  std::map<RoiId, ImageTensor> out;
  for (RoiId roi : kAllRois) out.emplace(roi, ImageTensor(img.shape(), -1.0f));
  const auto& codes = rec.labels.codes();
  const int c = img.dim(2);
  for (std::size_t p = 0; p < codes.size(); ++p) {
    if (codes[p] == kBackgroundLabel) continue;
    auto& y = out.at(static_cast<RoiId>(codes[p]));
    for (int k = 0; k < c; ++k) y[p * c + k] = img[p * c + k];
  }
  return out;
}

// ---- synthetic faces --------------------------------------------------------

void SynthConfig::validate() const {
  if (count < 1) throw std::invalid_argument("synthetic count must be >= 1");
  if (image_size < 16 || image_size % 16 != 0) throw std::invalid_argument("synthetic image_size must be a multiple of 16");
  if (brightness_floor < 128 || brightness_floor > 255) throw std::invalid_argument("brightness_floor must be in [128, 255]");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"count", count}, {"image_size", image_size}, {"seed", seed}, {"brightness_floor", brightness_floor}};
}

DatasetRecord synthesize_face(int size, std::uint64_t seed, int brightness_floor, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto channel = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const double u = size / 64.0;

  const double cx = size / 2.0 + uni(-3, 3) * u;
  const double cy = size * 0.56 + uni(-3, 3) * u;
  const double rx = uni(14, 18) * u;
  const double ry = uni(18, 22) * u;
  const double hair_rx = rx + uni(4, 7) * u;
  const double hair_ry = ry * 0.9 + uni(3, 6) * u;
  const double hair_cy = cy - 0.35 * ry;
  const double eye_dx = uni(0.38, 0.46) * rx;
  const double eye_cy = cy - uni(0.28, 0.36) * ry;
  const double eye_rx = uni(3.5, 5.0) * u;
  const double eye_ry = uni(2.0, 3.0) * u;
  const double nose_top = cy - 0.1 * ry;
  const double nose_base = cy + uni(0.18, 0.26) * ry;
  const double nose_half = uni(3.0, 5.0) * u;
  const double mouth_cy = cy + uni(0.48, 0.58) * ry;
  const double mouth_rx = uni(5.0, 8.0) * u;
  const double mouth_ry = uni(2.5, 3.5) * u;

  std::array<std::array<int, 3>, 6> palette{};
  for (int k = 0; k < 3; ++k) palette[0][k] = channel(10, 110);
  for (int r = 1; r < 6; ++r)
    for (int k = 0; k < 3; ++k) palette[r][k] = channel(brightness_floor, 255);

  auto inside = [](double x, double y, double ex, double ey, double ax, double ay) {
    const double dx = (x - ex) / ax, dy = (y - ey) / ay;
    return dx * dx + dy * dy <= 1.0;
  };

  std::vector<std::uint8_t> codes(static_cast<std::size_t>(size) * size, kBackgroundLabel);
  Raster8 rgb{size, size, 3, std::vector<std::uint8_t>(codes.size() * 3)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      std::uint8_t code = kBackgroundLabel;
      if (py < cy && inside(px, py, cx, hair_cy, hair_rx, hair_ry)) code = label_code(RoiId::hair);
      if (inside(px, py, cx, cy, rx, ry)) code = label_code(RoiId::skin);
      if (inside(px, py, cx - eye_dx, eye_cy, eye_rx, eye_ry) || inside(px, py, cx + eye_dx, eye_cy, eye_rx, eye_ry)) {
        code = label_code(RoiId::eyes);
      }
      if (py >= nose_top && py <= nose_base) {
        const double half = nose_half * (py - nose_top) / (nose_base - nose_top);
        if (std::abs(px - cx) <= half) code = label_code(RoiId::nose);
      }
      if (inside(px, py, cx, mouth_cy, mouth_rx, mouth_ry)) code = label_code(RoiId::lips_mouth);
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      codes[p] = code;
      for (int k = 0; k < 3; ++k) rgb.pixels[p * 3 + k] = static_cast<std::uint8_t>(palette[code][k]);
    }
  }
  char id[32];
  std::snprintf(id, sizeof(id), "%05d", index);
  return {to_image_tensor(rgb), LabelMap(size, size, std::move(codes)), id};
}

std::vector<DatasetRecord> synthesize_records(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<DatasetRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.count));
  for (int i = 0; i < cfg.count; ++i) out.push_back(synthesize_face(cfg.image_size, cfg.seed, cfg.brightness_floor, i));
  return out;
}

nlohmann::json generate_synthetic(const SynthConfig& cfg, const fs::path& root) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec) throw std::runtime_error("cannot create dataset directories under " + root.string() + ": " + ec.message());
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& rec : synthesize_records(cfg)) {
    write_png(root / "images" / (rec.id + ".png"), to_raster(rec.image));
    write_png(root / "masks" / (rec.id + ".png"),
              Raster8{rec.labels.width(), rec.labels.height(), 1, rec.labels.codes()});
    ids.push_back(rec.id);
  }
  nlohmann::json label_codes = {{"background", kBackgroundLabel}};
  for (RoiId roi : kAllRois) label_codes[std::string(roi_name(roi))] = label_code(roi);
  nlohmann::json manifest = {{"kind", "synthetic"},
                             {"config", cfg.to_json()},
                             {"label_codes", label_codes},
                             {"normalization", PixelNormalization{}.to_json()},
                             {"ids", ids}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest under " + root.string());
  out << manifest.dump(2) << "\n";
  return manifest;
}

// ---- batching -------------------------------------------------------------

void TrainingBatch::validate() const {
  for (RoiId roi : kAllRois) {
    auto it = Y.find(roi);
    if (it == Y.end()) throw std::invalid_argument("training batch missing roi " + std::string(roi_name(roi)));
    if (it->second.size() != X.size()) {
      throw std::invalid_argument("training batch roi " + std::string(roi_name(roi)) + " misaligned with inputs");
    }
  }
}

std::vector<TrainingBatch> make_batches(const std::vector<DatasetRecord>& records, int batch_size,
                                        std::uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TrainingBatch> out;
  for (std::size_t b = 0; b + batch_size <= order.size(); b += batch_size) {
    TrainingBatch batch;
    for (int k = 0; k < batch_size; ++k) {
      const auto& rec = records[order[b + k]];
      batch.X.push_back(rec.image);
      for (auto& [roi, y] : roi_separate(rec)) batch.Y[roi].push_back(std::move(y));
    }
    out.push_back(std::move(batch));
  }
  return out;
}

BatchStream::BatchStream(const std::vector<DatasetRecord>& records, int batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (records.size() < static_cast<std::size_t>(batch_size)) {
    throw std::invalid_argument("dataset smaller than one batch");
  }
  for (const auto& r : records) items_.push_back({r.image, roi_separate(r)});
}

const TrainingBatch& BatchStream::next() {
  if (order_.empty() || cursor_ + batch_size_ > order_.size()) {
    order_.resize(items_.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::mt19937_64 rng(seed_ + epoch_++);
    std::shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
  }
  current_ = TrainingBatch{};
  for (int k = 0; k < batch_size_; ++k) {
    const auto& item = items_[order_[cursor_++]];
    current_.X.push_back(item.x);
    for (const auto& [roi, y] : item.y) current_.Y[roi].push_back(y);
  }
  return current_;
}

}  // namespace roiedit

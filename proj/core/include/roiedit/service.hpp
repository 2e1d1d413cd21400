#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roiedit/checkpoint.hpp"
#include "roiedit/pipeline.hpp"

namespace roiedit {

/// Tint colours used for ROI overlays (RGB).
std::array<std::uint8_t, 3> roi_color(RoiId roi);

/// PNG bytes of a model-space image. The CLI and the service share this path.
std::vector<std::uint8_t> image_png(const ImageTensor& image, const PixelNormalization& norm);

/// 0/255 single-channel PNG.
std::vector<std::uint8_t> mask_png(const RoiMask& mask);

/// Original image with a half-strength tint over the mask pixels.
std::vector<std::uint8_t> mask_overlay_png(const ImageTensor& image, const RoiMask& mask, RoiId roi,
                                           const PixelNormalization& norm);

struct EditRequest {
  std::vector<std::uint8_t> image;
  RoiId roi = RoiId::hair;
  double mu = 1.0;
  std::uint64_t seed = 0;
  std::optional<std::vector<std::uint8_t>> style_image;
};

/// Thrown for malformed requests; `field` names the offending JSON field.
class RequestError : public std::runtime_error {
 public:
  RequestError(std::string field, const std::string& message, int status = 400)
      : std::runtime_error(message), field_(std::move(field)), status_(status) {}
  const std::string& field() const { return field_; }
  int status() const { return status_; }

 private:
  std::string field_;
  int status_;
};

EditRequest parse_edit_request(const nlohmann::json& body);

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Request handlers over an immutable pair of checkpoints. Safe to call from
/// several threads at once.
class EditService {
 public:
  EditService(Checkpoint smn, Checkpoint smpn);

  ServiceResponse health() const;
  ServiceResponse model_info() const;
  ServiceResponse edit(const std::string& body) const;
  ServiceResponse segment(const std::string& body) const;

  const Checkpoint& smn() const { return *smn_; }
  const Checkpoint& smpn() const { return *smpn_; }
  const SliceScheme& scheme() const { return smpn_->manifest.model.slice_scheme; }

  /// Decodes a PNG and checks it against the model size (422 on mismatch).
  ImageTensor load_image(const std::vector<std::uint8_t>& png, const std::string& field) const;

 private:
  template <typename Fn>
  ServiceResponse guarded(const Fn& fn) const;

  std::shared_ptr<const Checkpoint> smn_;
  std::shared_ptr<const Checkpoint> smpn_;
};

/// HTTP front end for EditService.
class HttpServer {
 public:
  explicit HttpServer(const EditService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and starts serving on a background thread; port 0 picks a free
  /// port. Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop() is called.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace roiedit

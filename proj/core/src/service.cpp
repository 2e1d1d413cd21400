#include "roiedit/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "roiedit/image_io.hpp"

namespace roiedit {

std::array<std::uint8_t, 3> roi_color(RoiId roi) {
  switch (roi) {
    case RoiId::hair: return {40, 90, 230};
    case RoiId::skin: return {40, 190, 70};
    case RoiId::nose: return {220, 40, 40};
    case RoiId::eyes: return {245, 150, 30};
    case RoiId::lips_mouth: return {140, 140, 140};
  }
  return {255, 255, 255};
}

std::vector<std::uint8_t> image_png(const ImageTensor& image, const PixelNormalization& norm) {
  return encode_png(to_raster(image, norm));
}

std::vector<std::uint8_t> mask_png(const RoiMask& mask) {
  Raster8 r{mask.width(), mask.height(), 1, {}};
  r.pixels.reserve(mask.bits().size());
  for (bool b : mask.bits()) r.pixels.push_back(b ? 255 : 0);
  return encode_png(r);
}

std::vector<std::uint8_t> mask_overlay_png(const ImageTensor& image, const RoiMask& mask, RoiId roi,
                                           const PixelNormalization& norm) {
  Raster8 r = to_raster(image, norm);
  const auto tint = roi_color(roi);
  for (std::size_t p = 0; p < mask.bits().size(); ++p) {
    if (!mask.bits()[p]) continue;
    for (int k = 0; k < 3; ++k) {
      auto& v = r.pixels[p * 3 + k];
      v = static_cast<std::uint8_t>((v + tint[k] + 1) / 2);
    }
  }
  return encode_png(r);
}

namespace {

std::vector<std::uint8_t> decode_field(const nlohmann::json& body, const char* field) {
  const auto& v = body.at(field);
  if (!v.is_string()) throw RequestError(field, std::string(field) + " must be a base64 PNG string");
  try {
    return base64_decode(v.get<std::string>());
  } catch (const std::invalid_argument&) {
    throw RequestError(field, std::string(field) + " is not valid base64");
  }
}

std::string new_error_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = std::random_device{}();
  std::ostringstream os;
  os << std::hex << (salt ^ (counter.fetch_add(1) * 0x9e3779b97f4a7c15ULL));
  return os.str();
}

std::mutex log_mutex;

void log_line(const std::string& line) {
  std::lock_guard lock(log_mutex);
  std::cerr << line << std::endl;
}

nlohmann::json parse_body(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw RequestError("body", "request body must be a JSON object");
  return j;
}

}  // namespace

EditRequest parse_edit_request(const nlohmann::json& body) {
  EditRequest req;
  if (!body.contains("image")) throw RequestError("image", "image is required");
  req.image = decode_field(body, "image");

  if (!body.contains("roi") || !body["roi"].is_string()) throw RequestError("roi", "roi must be a string");
  const auto name = body["roi"].get<std::string>();
  auto roi = parse_roi(name);
  if (!roi) {
    throw RequestError("roi", "roi: unknown region '" + name + "' (expected hair, skin, nose, eyes or lips_mouth)");
  }
  req.roi = *roi;

  if (body.contains("mu")) {
    if (!body["mu"].is_number()) throw RequestError("mu", "mu must be a number");
    req.mu = body["mu"].get<double>();
    if (!std::isfinite(req.mu) || req.mu < 0) throw RequestError("mu", "mu must be finite and >= 0");
  }
  if (body.contains("seed")) {
    const auto& s = body["seed"];
    if (s.is_number_unsigned()) {
      req.seed = s.get<std::uint64_t>();
    } else if (s.is_number_integer() && s.get<std::int64_t>() >= 0) {
      req.seed = static_cast<std::uint64_t>(s.get<std::int64_t>());
    } else {
      throw RequestError("seed", "seed must be a non-negative integer");
    }
  }
  if (body.contains("style_image") && !body["style_image"].is_null()) req.style_image = decode_field(body, "style_image");
  return req;
}

EditService::EditService(Checkpoint smn, Checkpoint smpn)
    : smn_(std::make_shared<const Checkpoint>(std::move(smn))), smpn_(std::make_shared<const Checkpoint>(std::move(smpn))) {
  if (smn_->manifest.phase != Phase::smn) throw CheckpointError("style checkpoint is not an smn checkpoint");
  if (smpn_->manifest.phase != Phase::smpn) throw CheckpointError("mask checkpoint is not an smpn checkpoint");
  if (smn_->manifest.model.image_size != smpn_->manifest.model.image_size) {
    throw CheckpointError("smn and smpn checkpoints disagree on image size");
  }
}

template <typename Fn>
ServiceResponse EditService::guarded(const Fn& fn) const {
  try {
    return fn();
  } catch (const RequestError& e) {
    return {e.status(), {{"error", e.what()}, {"field", e.field()}}};
  } catch (const std::exception& e) {
    const auto id = new_error_id();
    log_line("error " + id + ": " + e.what());
    return {500, {{"error", "internal error"}, {"id", id}}};
  }
}

ImageTensor EditService::load_image(const std::vector<std::uint8_t>& png, const std::string& field) const {
  Raster8 r;
  try {
    r = decode_png(png, 3);
  } catch (const std::exception&) {
    throw RequestError(field, field + " is not a decodable PNG");
  }
  const int size = smn_->manifest.model.image_size;
  if (r.width != size || r.height != size) {
    throw RequestError(field,
                       field + " is " + std::to_string(r.width) + "x" + std::to_string(r.height) + ", model expects " +
                           std::to_string(size) + "x" + std::to_string(size),
                       422);
  }
  return to_image_tensor(r, smn_->manifest.model.normalization);
}

ServiceResponse EditService::health() const { return {200, {{"status", "ok"}}}; }

ServiceResponse EditService::model_info() const {
  const auto& m = smn_->manifest.model;
  nlohmann::json j = m.to_json();
  j["slice_scheme"] = scheme().to_json();
  j["smn"] = {{"phase", phase_name(smn_->manifest.phase)}, {"step", smn_->manifest.step}};
  j["smpn"] = {{"phase", phase_name(smpn_->manifest.phase)}, {"step", smpn_->manifest.step}};
  j["rois"] = nlohmann::json::array();
  for (RoiId r : kAllRois) j["rois"].push_back(std::string(roi_name(r)));
  return {200, j};
}

ServiceResponse EditService::edit(const std::string& body) const {
  return guarded([&]() -> ServiceResponse {
    const auto t0 = std::chrono::steady_clock::now();
    const EditRequest req = parse_edit_request(parse_body(body));
    const ImageTensor x = load_image(req.image, "image");
    const auto& norm = smn_->manifest.model.normalization;
    EditResult r;
    if (req.style_image) {
      const ImageTensor style = load_image(*req.style_image, "style_image");
      r = style_swap(smn_->autoencoder, smpn_->autoencoder, x, style, req.roi, scheme());
    } else {
      r = roiedit::edit(smn_->autoencoder, smpn_->autoencoder, x, EditConfig{req.roi, req.mu, req.seed}, scheme());
    }
    const auto [lo, hi] = std::minmax_element(r.matte.values().begin(), r.matte.values().end());
    nlohmann::json out;
    out["edited"] = base64_encode(image_png(r.edited, norm));
    out["global_styled"] = base64_encode(image_png(r.global_styled, norm));
    out["mask_overlay"] = base64_encode(mask_overlay_png(x, r.mask, req.roi, norm));
    out["matte_stats"] = {{"min", *lo}, {"max", *hi}};
    out["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {200, out};
  });
}

ServiceResponse EditService::segment(const std::string& body) const {
  return guarded([&]() -> ServiceResponse {
    const auto j = parse_body(body);
    if (!j.contains("image")) throw RequestError("image", "image is required");
    const ImageTensor x = load_image(decode_field(j, "image"), "image");
    nlohmann::json out;
    for (RoiId roi : kAllRois) {
      const RoiMask m = predict_roi_mask(smpn_->autoencoder, x, roi, scheme());
      out["masks"][std::string(roi_name(roi))] = {{"png", base64_encode(mask_png(m))}, {"count", m.count()}};
    }
    return {200, out};
  });
}

struct HttpServer::Impl {
  const EditService& service;
  httplib::Server server;
  std::thread thread;
};

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(const EditService& service) : impl_(new Impl{service, {}, {}}) {
  auto& s = impl_->server;
  const EditService* svc = &service;
  s.Get("/health", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->health()); });
  s.Get("/model/info", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->model_info()); });
  s.Post("/edit", [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->edit(req.body)); });
  s.Post("/segment", [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->segment(req.body)); });
  s.set_payload_max_length(64 << 20);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& s = impl_->server;
  const int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&s] { s.listen_after_bind(); });
  s.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace roiedit

#include "roiedit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace roiedit {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "roiedit-checkpoint";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_tensor(const fs::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Tensor<float> read_tensor(const fs::path& path, const std::string& name, const std::vector<int>& shape) {
  if (!fs::exists(path)) throw CheckpointError("missing tensor " + name + " (" + path.string() + ")");
  const auto expected = Tensor<float>::count(shape) * sizeof(float);
  if (fs::file_size(path) != expected) {
    throw CheckpointError("tensor " + name + " has " + std::to_string(fs::file_size(path)) +
                          " bytes, manifest shape " + shape_string(shape) + " needs " + std::to_string(expected));
  }
  Tensor<float> t(shape);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(expected));
  if (!in) throw CheckpointError("read failed for tensor " + name);
  return t;
}

nlohmann::json tensor_entries(const ParamSet<float>& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, v] : params.entries()) {
    arr.push_back({{"name", name}, {"shape", v->value.shape()}, {"dtype", "float32"}});
  }
  return arr;
}

CheckpointManifest parse_manifest(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kFormat) throw CheckpointError("not a roiedit checkpoint manifest");
  CheckpointManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kCheckpointVersion) {
      throw CheckpointError("unknown manifest version " + std::to_string(m.version));
    }
    m.model = ModelConfig::from_json(j.at("model"));
    if (auto v = validate_scheme(m.model.slice_scheme)) {
      throw CheckpointError("invalid slice scheme: " + v->message);
    }
    m.model.validate();
    m.phase = parse_phase(j.at("phase").get<std::string>());
    m.step = j.at("step").get<std::int64_t>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

nlohmann::json read_manifest_json(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("missing manifest.json in " + dir.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace

std::string phase_name(Phase p) { return p == Phase::smn ? "smn" : "smpn"; }

Phase parse_phase(const std::string& name) {
  if (name == "smn") return Phase::smn;
  if (name == "smpn") return Phase::smpn;
  throw CheckpointError("unknown phase '" + name + "'");
}

void save_checkpoint(const fs::path& dir, const AutoencoderParams& ae, const DiscriminatorParams& disc,
                     const CheckpointManifest& manifest) {
  manifest.model.validate();
  if (!ae.params().all_finite() || !disc.params().all_finite()) {
    throw CheckpointError("refusing to save non-finite parameters");
  }
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw CheckpointError("cannot create " + (dir / "tensors").string() + ": " + ec.message());

  nlohmann::json tensors = tensor_entries(ae.params());
  for (const auto& e : tensor_entries(disc.params())) tensors.push_back(e);
  for (const auto* set : {&ae.params(), &disc.params()}) {
    for (const auto& [name, v] : set->entries()) write_tensor(dir / "tensors" / (name + ".f32"), v->value);
  }
  nlohmann::json j = {{"format", kFormat},
                      {"version", manifest.version},
                      {"model", manifest.model.to_json()},
                      {"slice_scheme", manifest.model.slice_scheme.to_json()},
                      {"normalization", manifest.model.normalization.to_json()},
                      {"phase", phase_name(manifest.phase)},
                      {"step", manifest.step},
                      {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw CheckpointError("cannot write manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

CheckpointManifest read_manifest(const fs::path& dir) { return parse_manifest(read_manifest_json(dir)); }

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto j = read_manifest_json(dir);
  CheckpointManifest manifest = parse_manifest(j);

  ParamSet<float> ae_params, disc_params;
  for (const auto& e : j.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    if (e.value("dtype", "float32") != "float32") throw CheckpointError("unsupported dtype for tensor " + name);
    auto t = read_tensor(dir / "tensors" / (name + ".f32"), name, e.at("shape").get<std::vector<int>>());
    (name.rfind("disc.", 0) == 0 ? disc_params : ae_params).add(name, std::move(t));
  }
  const ArchSpec arch = ArchSpec::from_config(manifest.model);
  try {
    Checkpoint ck{manifest, AutoencoderParams(arch, std::move(ae_params)), DiscriminatorParams(arch, std::move(disc_params))};
    ck.autoencoder.params().set_trainable(false);
    ck.discriminators.params().set_trainable(false);
    return ck;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint tensors do not match the model config: ") + e.what());
  }
}

}  // namespace roiedit

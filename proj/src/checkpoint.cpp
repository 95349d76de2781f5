#include "wfkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "wfkit/error.hpp"
#include "wfkit/trace.hpp"

namespace wfkit {

namespace {

std::filesystem::path blob_path(const std::filesystem::path& json_path) {
  std::filesystem::path p = json_path;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& json_path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::ordered_json& config) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  nlohmann::ordered_json manifest;
  manifest["format"] = "wfkit-checkpoint-1";
  manifest["blob"] = blob_path(json_path).filename().string();
  manifest["config"] = config;
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const NamedTensor& nt : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = nt.name;
    entry["shape"] = nt.tensor.shape();
    entry["offset"] = offset;
    manifest["tensors"].push_back(std::move(entry));
    const auto data = nt.tensor.data();
    blob.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
    offset += data.size();
  }
  write_text_file(json_path, manifest.dump(2) + "\n");
  write_text_file(blob_path(json_path), blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& json_path) {
  Checkpoint ckpt;
  const std::string blob = read_text_file(blob_path(json_path));
  try {
    const auto manifest = nlohmann::json::parse(read_text_file(json_path));
    ckpt.config = manifest.at("config");
    for (const auto& entry : manifest.at("tensors")) {
      Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if ((offset + n) * sizeof(double) > blob.size()) {
        throw Error(ErrorCode::kIoError, "checkpoint blob too short");
      }
      std::vector<double> values(n);
      std::memcpy(values.data(), blob.data() + offset * sizeof(double), n * sizeof(double));
      ckpt.tensors.push_back(
          NamedTensor{entry.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(values))});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigError, std::string("checkpoint manifest: ") + ex.what());
  }
  return ckpt;
}

}  // namespace wfkit

// SPDX-License-Identifier: Apache-2.0

#include "slam/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json_io.hpp"

namespace slam {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void append_tensor(std::string& out, const Mat<float>& m) {
  const auto* p = reinterpret_cast<const char*>(m.data());
  out.append(p, static_cast<std::size_t>(m.size()) * sizeof(float));
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < model.registry().size(); ++i) {
    const ParamRef& r = model.registry()[i];
    const std::uint64_t bytes = r.size() * sizeof(float);
    manifest.push_back({{"name", r.name()},
                        {"layer", r.layer},
                        {"block", std::string(to_string(r.block))},
                        {"slot", r.slot},
                        {"shape", r.shape},
                        {"offset", offset},
                        {"bytes", bytes}});
    offset += bytes;
  }
  const nlohmann::json header = {{"format", "slam-checkpoint"},
                                 {"version", kCheckpointVersion},
                                 {"dtype", "float32"},
                                 {"byte_order", "little"},
                                 {"config", model.config()},
                                 {"params", manifest},
                                 {"data_bytes", offset}};
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  for (std::size_t i = 0; i < model.registry().size(); ++i) append_tensor(out, model.tensor(i));
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (header.value("format", "") != "slam-checkpoint") {
    throw DataError("checkpoint: not a slam checkpoint");
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version");
  }
  ModelConfig cfg = header.at("config").get<ModelConfig>();
  Model model(cfg);
  const std::string_view data = bytes.substr(nl + 1);
  if (data.size() != header.at("data_bytes").get<std::uint64_t>()) {
    throw DataError("checkpoint: data section is " + std::to_string(data.size()) +
                    " bytes, header declares " +
                    std::to_string(header.at("data_bytes").get<std::uint64_t>()));
  }
  const auto& params = header.at("params");
  if (params.size() != model.registry().size()) {
    throw DataError("checkpoint: manifest does not match the config's registry");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& r = model.registry()[i];
    const auto& p = params[i];
    if (p.at("name").get<std::string>() != r.name() ||
        p.at("shape").get<std::vector<std::size_t>>() != r.shape) {
      throw DataError("checkpoint: manifest entry " + std::to_string(i) + " is " +
                      p.at("name").get<std::string>() + ", expected " + r.name());
    }
    const auto off = p.at("offset").get<std::uint64_t>();
    const auto n = p.at("bytes").get<std::uint64_t>();
    if (n != r.size() * sizeof(float) || off + n > data.size()) {
      throw DataError("checkpoint: bad extent for " + r.name());
    }
    std::memcpy(model.tensor(i).data(), data.data() + off, n);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::string region_bytes(const Model& model, std::span<const ParamRef> refs, bool invert) {
  std::string out;
  for (std::size_t i = 0; i < model.registry().size(); ++i) {
    const bool listed =
        std::find(refs.begin(), refs.end(), model.registry()[i]) != refs.end();
    if (listed != invert) append_tensor(out, model.tensor(i));
  }
  return out;
}

}  // namespace slam

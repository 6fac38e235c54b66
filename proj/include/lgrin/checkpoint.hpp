#pragma once

// Checkpoint container (all integers and doubles little-endian):
//
//   magic        8 bytes  "LGRINCKP"
//   version      u32      1
//   config_len   u64      byte length of the model config JSON that follows
//   config       bytes    UTF-8 JSON, the "model" section schema
//   count        u64      number of parameter records
//   count × { name_len u32, name bytes, rank u32, dims u64[rank],
//             values f64[product(dims)] }
//
// Records appear in registry order. Values are stored as raw IEEE-754 bits,
// so save → load reproduces every parameter, and hence every logit, exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lgrin/error.hpp"
#include "lgrin/model.hpp"

namespace lgrin {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'L', 'G', 'R', 'I', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError("truncated checkpoint reading " + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = nlohmann::json(model.config).dump();
  detail::write_pod<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  detail::write_pod<std::uint64_t>(out, model.parameters.size());
  for (const auto& p : model.parameters) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value.values().data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

/// Reads a checkpoint and checks its records against the registry layout the
/// stored config implies.
inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint not found: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw LoadError(path.string() + " is not a checkpoint");
  }
  const auto version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const auto config_len = detail::read_pod<std::uint64_t>(in, "config length");
  std::string config_text(config_len, '\0');
  if (!in.read(config_text.data(), static_cast<std::streamsize>(config_len))) throw LoadError("truncated checkpoint config");

  ModelConfig config;
  try {
    config = nlohmann::json::parse(config_text).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad config: " + e.what());
  }
  Model model = build_model(config);

  const auto count = detail::read_pod<std::uint64_t>(in, "parameter count");
  if (count != model.parameters.size()) {
    throw LoadError(path.string() + ": " + std::to_string(count) + " parameters, config implies " +
                    std::to_string(model.parameters.size()));
  }
  for (auto& p : model.parameters) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw LoadError("truncated checkpoint name");
    if (name != p.name) throw LoadError(path.string() + ": expected parameter '" + p.name + "', found '" + name + "'");
    const auto rank = detail::read_pod<std::uint32_t>(in, "rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(detail::read_pod<std::uint64_t>(in, "dimension"));
    if (shape != p.value.shape()) {
      throw LoadError(path.string() + ": parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                      shape_string(p.value.shape()));
    }
    if (!in.read(reinterpret_cast<char*>(p.value.values().data()),
                 static_cast<std::streamsize>(p.value.size() * sizeof(double)))) {
      throw LoadError("truncated values for '" + name + "'");
    }
  }
  return model;
}

}  // namespace lgrin

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "kerl/model.hpp"

namespace kerl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serialized form: the 8-byte magic "KERLCKPT", a little-endian u32 format
/// version, a u64 manifest length, the JSON manifest, then every parameter
/// as little-endian float32 in manifest order.
std::vector<std::uint8_t> serialize(const KerlModel& model);
void save_checkpoint(const KerlModel& model, const std::filesystem::path& path);

/// Config, stage and vocabulary recorded in a checkpoint, read without
/// materializing parameters.
struct CheckpointHeader {
  Config config;
  Stage stage = Stage::Init;
  std::vector<std::string> vocab;
};
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Rebuilds the model against `kg` and `table` and restores every parameter.
/// Any disagreement in names, shapes, sizes or checksum throws
/// CheckpointError.
std::unique_ptr<KerlModel> deserialize(const std::vector<std::uint8_t>& bytes,
                                       std::shared_ptr<const KnowledgeGraph> kg, TokenEmbeddingTable table);
std::unique_ptr<KerlModel> load_checkpoint(const std::filesystem::path& path,
                                           std::shared_ptr<const KnowledgeGraph> kg, TokenEmbeddingTable table);

}  // namespace kerl

#pragma once

// Checkpoint container, all integers little-endian:
//
//   8 bytes   magic "LYRACKPT"
//   u32       format version (currently 1)
//   u64       metadata length L, then L bytes of UTF-8 JSON
//   u32       tensor count N, then N records:
//               u32 name length, name bytes (UTF-8)
//               u32 rank R, R × u64 dimensions
//               prod(dims) × float32 values, row-major

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lyra/corpus.hpp"
#include "lyra/spectro_embed.hpp"
#include "lyra/vae.hpp"

namespace lyra {

inline constexpr std::string_view kCheckpointMagic = "LYRACKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
};

struct CheckpointFile {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord& tensor(const std::string& name) const;
};

std::string encode_checkpoint(const CheckpointFile& file);
// Throws "invalid checkpoint: …" on bad magic, version, or truncation.
CheckpointFile decode_checkpoint(std::string_view bytes);

void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

// A trained VAE with everything needed to generate from it.
struct VaeCheckpoint {
  VaeModel model;
  Vocabulary vocab;
  std::vector<ArtistId> artists;
  std::uint64_t seed = 0;
  std::string config_hash;
};

CheckpointFile to_checkpoint_file(const VaeCheckpoint& checkpoint);
VaeCheckpoint vae_from_checkpoint_file(const CheckpointFile& file);
void save_checkpoint(const VaeCheckpoint& checkpoint, const std::filesystem::path& path);
VaeCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const VaeConfig& config);
VaeConfig vae_config_from_json(const nlohmann::json& j);

}  // namespace lyra

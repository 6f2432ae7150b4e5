#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

// Binary layout, all integers little-endian:
//   "PLUN" | u32 version | u32 len + model descriptor | u32 entry count |
//   entries: u32 len + UTF-8 name | u8 role | u32 rank | u32 dims... | f32 values...
// Roles: param, mask (0/1 values), lora_A, lora_B, flag. Flag entries carry
// trainable flags ("<param>" -> [0|1]) and adapter metadata
// ("<layer>.lora_meta" -> [rank, alpha]).
inline constexpr char kCheckpointMagic[4] = {'P', 'L', 'U', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class EntryRole : std::uint8_t { kParam = 0, kMask = 1, kLoraA = 2, kLoraB = 3, kFlag = 4 };

std::string_view to_string(EntryRole role);

struct CheckpointEntry {
  std::string name;
  EntryRole role = EntryRole::kParam;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointFile {
  std::string model_name;
  std::vector<CheckpointEntry> entries;
};

/// Flattens a model into checkpoint entries.
CheckpointFile to_checkpoint(Model<float>& model);
/// Rebuilds a model from entries. Missing or surplus entries raise IntegrityError.
Model<float> from_checkpoint(const CheckpointFile& file);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
/// FormatError on bad magic/version, IntegrityError on truncation or
/// trailing bytes.
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace unlearn

#pragma once

// Binary checkpoints (little-endian):
//
//   "SPG1" u32 version u32 variant(0 stripped, 1 hpo, 2 nas) u64 T u64 D u64 V
//   u64 nparams, then per parameter:
//     u64 name_len, name bytes, u64 rank, rank x u64 dims, raw f64 values
//   tagged sections until end of file, each 4-byte tag + u64 length + payload:
//     ARCH  network spec and chain config (always present)
//     OPTM  optimizer kind, hyperparameters, step count and moments
//     RNG_  trainer position: dropout stream, epoch, cursor, epoch sums
//     CONF  config echo text

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spg/trainer.hpp"
#include "spg/trp_chain.hpp"

namespace spg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SpgModel model;
  std::optional<TrainerState> trainer;
  std::string config_text;
};

std::vector<std::uint8_t> serialize_checkpoint(SpgModel& model, const TrainerState* trainer,
                                               const std::string& config_text);
void save_checkpoint(const std::filesystem::path& path, SpgModel& model, const TrainerState* trainer = nullptr,
                     const std::string& config_text = {});

/// Throws io::FormatError on bad magic, unsupported version or malformed data.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::vector<std::uint8_t> bytes, const std::string& origin = "<memory>");

}  // namespace spg

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ambiseg/model.hpp"
#include "ambiseg/optim.hpp"

namespace ambiseg {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Layout: 8-byte magic "AMBSEGCK", uint32 format version, uint64 header
/// length, the JSON header, then a little-endian float32 blob. The header
/// holds the model config, the parameter manifest (name, shape, offset and
/// count in floats), the optimizer hyperparameters and step, and the
/// experiment config echo. The blob holds the parameters in manifest order
/// followed by the Adam first and second moments in the same order.
struct CheckpointMeta {
  std::string experiment = "{}";  // JSON object text
  // Spatial size of the training inputs; 0 when unknown.
  int input_height = 0;
  int input_width = 0;
};

struct Checkpoint {
  DenoiserModel model;
  AdamWState optimizer;
  CheckpointMeta meta;
};

std::string serialize_checkpoint(const DenoiserModel& model, const AdamWState& optimizer,
                                 const CheckpointMeta& meta = {});
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model,
                     const AdamWState& optimizer, const CheckpointMeta& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model config as JSON text and back.
std::string denoiser_config_to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(std::string_view text);

}  // namespace ambiseg

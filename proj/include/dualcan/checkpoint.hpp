#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dualcan/model.hpp"

namespace dualcan::model {

// Checkpoint layout, little-endian:
//   magic "DCMD" | u32 version | u32 L (generator layers) | u32 dims[L + 1] | u32 K
// then f64 blocks in this order: for each generator layer, weights (row-major,
// out x in) then bias; source head weights, bias; target head weights, bias.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace dualcan::model

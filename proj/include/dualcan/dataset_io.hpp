#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dualcan/datagen.hpp"

namespace dualcan::datagen {

// Binary layout, little-endian:
//   magic "DCDS" | u32 version | u64 N | u32 d | u32 K | u8 domain | u8 has_observed
//   N records of: d x f64 features | i32 observed (-1 if absent) | i32 clean | u8 flags
// flags bit 0 = label corrupted, bit 1 = feature corrupted.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

std::string serialize_dataset(const NoisyDataset& dataset);
NoisyDataset deserialize_dataset(const std::string& bytes);

void save_dataset(const NoisyDataset& dataset, const std::filesystem::path& path);
NoisyDataset load_dataset(const std::filesystem::path& path);

// Debug export: f0..f{d-1},observed,clean,label_flag,feature_flag
void export_dataset_csv(const NoisyDataset& dataset, const std::filesystem::path& path);

}  // namespace dualcan::datagen

#pragma once

// Read access to the hidden fields of a NoisyDataset. Only evaluation code and
// dataset persistence include this header; nic and trainer must not.

#include <span>

#include "dualcan/datagen.hpp"

namespace dualcan::datagen {

class GroundTruth {
public:
    static std::span<const ClassId> clean_labels(const NoisyDataset& ds) { return ds.clean_; }
    static std::span<const NoiseFlags> flags(const NoisyDataset& ds) { return ds.flags_; }
};

}  // namespace dualcan::datagen

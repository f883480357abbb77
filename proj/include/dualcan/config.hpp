#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualcan/errors.hpp"
#include "dualcan/eval.hpp"

namespace dualcan::config {

// Bad config content. line is 1-based, 0 when unknown; field is a dotted path.
class ConfigError : public Error {
public:
    ConfigError(const std::string& message, std::string field, int line);
    const std::string& field() const noexcept { return field_; }
    int line() const noexcept { return line_; }

private:
    std::string field_;
    int line_;
};

struct SweepSection {
    std::vector<double> levels;
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds;
};

struct AblateSection {
    std::vector<std::uint64_t> seeds;
};

struct RunConfig {
    // Replicate seed fed to eval::make_replicate; gen/train use it, --seed overrides it.
    std::uint64_t seed = 1;
    eval::ExperimentSpec experiment;
    std::optional<SweepSection> sweep;
    std::optional<AblateSection> ablate;
};

// Required: domain.seed, noise.p_noise, noise.seed, train.seed. Everything
// else falls back to the reference defaults. Unknown keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Every field with its resolved value, in the same layout parse_config reads.
std::string to_yaml(const RunConfig& config);

}  // namespace dualcan::config

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>

#include "dualcan/nic.hpp"
#include "dualcan/trainer.hpp"

namespace dualcan::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kIoError = 3,
    kNumericAbort = 4,
    kSweepFailure = 5,
};

inline constexpr const char* kToolVersion = "0.1.0";

struct Options {
    std::filesystem::path config;
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::ostream* out = nullptr;  // defaults to std::cout
    std::ostream* err = nullptr;  // defaults to std::cerr
};

// Writes source.dcds, target.dcds and manifest.json into out_dir.
int cmd_gen(const Options& options);
// Reads data_dir/{source,target}.dcds; writes metrics.csv, model.dcmd,
// nic_report.csv and manifest.json into out_dir.
int cmd_train(const Options& options);
int cmd_sweep(const Options& options);
int cmd_ablate(const Options& options);
// Warm-up diagnosis, plus correction curves when out_dir holds a metrics.csv.
int cmd_report(const Options& options);

std::string metrics_csv(std::span<const trainer::EpochMetrics> history);
std::string nic_report_header();
std::string nic_report_rows(int epoch, const char* domain, std::span<const nic::CorrectionRecord> records);

}  // namespace dualcan::cli

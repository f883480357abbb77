#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualcan/datagen.hpp"
#include "dualcan/model.hpp"
#include "dualcan/nic.hpp"
#include "dualcan/trainer.hpp"

// Ground-truth-aware measurement. This is the only module that reads clean
// labels and corruption flags.
namespace dualcan::eval {

using ClassId = int;

double accuracy(const model::Model& model, model::Head head, const Matrix& features,
                std::span<const ClassId> clean_labels);
double accuracy(const model::Model& model, model::Head head, const datagen::NoisyDataset& dataset);

// Feature-only -> FeatureNoise, any label corruption -> LabelNoise, else Clean.
nic::Verdict ground_truth_verdict(const datagen::NoiseFlags& flags) noexcept;

struct VerdictQuality {
    // confusion[truth][verdict], indexed by nic::Verdict
    std::array<std::array<std::size_t, 3>, 3> confusion{};
    std::array<std::size_t, 3> truth_counts{};
    std::array<std::size_t, 3> verdict_counts{};
    std::array<std::optional<double>, 3> precision;
    std::array<std::optional<double>, 3> recall;

    std::string to_csv() const;
};

VerdictQuality verdict_quality(std::span<const nic::CorrectionRecord> records,
                               std::span<const datagen::NoiseFlags> flags);
VerdictQuality verdict_quality(std::span<const nic::CorrectionRecord> records, const datagen::NoisyDataset& dataset);

struct CurvePoint {
    int epoch = 0;
    double residual_source_noise_ratio = 0.0;
    double pseudo_label_error = 0.0;
    double detected_source_noise_ratio = 0.0;
};

struct CorrectionCurves {
    std::vector<CurvePoint> points;
    double residual_delta = 0.0;      // last minus first
    double pseudo_label_delta = 0.0;  // last minus first

    std::string to_csv() const;
};

CorrectionCurves correction_curves(std::span<const trainer::EpochMetrics> history);

// Distance to the nearest centroid, bucketed per ground-truth group over
// shared bins that partition [0, max distance].
struct DistanceHistogram {
    std::vector<double> edges;                          // bins + 1
    std::array<std::vector<std::size_t>, 3> counts;     // indexed by nic::Verdict
    std::array<std::size_t, 3> group_sizes{};
    std::array<std::optional<double>, 3> mean_distance;

    std::string to_csv() const;
};

DistanceHistogram distance_histogram(const Matrix& inputs, const model::Model& model,
                                     const nic::ClusterModel& clusters, std::span<const datagen::NoiseFlags> flags,
                                     int bins = 20);
DistanceHistogram distance_histogram(const datagen::NoisyDataset& dataset, const model::Model& model,
                                     const nic::ClusterModel& clusters, int bins = 20);

// Fills accuracy and noise-ratio fields of EpochMetrics from hidden labels.
class GroundTruthProbe : public trainer::EpochObserver {
public:
    GroundTruthProbe(const datagen::NoisyDataset& source, const datagen::NoisyDataset& target);
    void on_epoch(const trainer::EpochSnapshot& snapshot, trainer::EpochMetrics& metrics) override;

private:
    const datagen::NoisyDataset& source_;
    const datagen::NoisyDataset& target_;
};

// trainer::run with ground-truth metrics attached.
trainer::RunResult run_scored(const trainer::TrainConfig& config, const datagen::NoisyDataset& source,
                              const datagen::NoisyDataset& target,
                              std::span<trainer::EpochObserver* const> extra_observers = {});

struct Method {
    std::string name;
    trainer::Ablation ablation;
};

// The five ablation rows: full, w/o feature, w/o label, w/o source, w/o target.
std::vector<Method> ablation_presets();
// Every correction switched off.
Method baseline_method();
std::optional<Method> method_by_name(const std::string& name);

struct ExperimentSpec {
    datagen::DomainSpec domain;
    datagen::NoiseSpec noise;
    std::optional<datagen::NoiseSpec> target_noise;  // feature-only corruption of the target, off by default
    trainer::TrainConfig train;
};

// Reference task: 3 classes in 2-D, rotation pi/6, 200 per class, 40% mixed noise.
ExperimentSpec reference_experiment();

// Datasets and training seed for one replicate. Seeds are derived from the
// base seeds and the replicate seed; the noise level does not enter them.
struct Replicate {
    datagen::NoisyDataset source;
    datagen::NoisyDataset target;
    trainer::TrainConfig train;
};
Replicate make_replicate(const ExperimentSpec& base, double noise_level, std::uint64_t seed);

struct CellResult {
    double level = 0.0;
    std::string method;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    trainer::EpochMetrics final_metrics;
    std::vector<trainer::EpochMetrics> history;
};

CellResult run_cell(const ExperimentSpec& base, double level, const Method& method, std::uint64_t seed);

struct Aggregate {
    double level = 0.0;
    std::string method;
    std::size_t n_ok = 0;
    std::size_t n_failed = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation, 0 for a single value
    bool complete = false;
};

struct SweepResult {
    std::vector<double> levels;
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds;
    std::vector<CellResult> cells;        // level-major, then method, then seed
    std::vector<Aggregate> aggregates;    // level-major, then method

    const Aggregate& aggregate(std::size_t level_idx, std::size_t method_idx) const;
    const Aggregate* find(double level, const std::string& method) const;
    bool any_failed() const noexcept;
    std::string cells_csv() const;
    std::string aggregate_csv() const;
};

// Full factorial level x method x seed on freshly corrupted mixed-noise data.
// Cells run on up to `jobs` threads; aggregation order is fixed.
SweepResult noise_sweep(const ExperimentSpec& base, std::span<const double> levels, std::span<const Method> methods,
                        std::span<const std::uint64_t> seeds, int jobs = 1);

// The five ablation rows at the base noise level.
SweepResult ablation_battery(const ExperimentSpec& base, std::span<const std::uint64_t> seeds, int jobs = 1);
std::string ablation_table_csv(const SweepResult& battery);

struct Assertion {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct AssertionReport {
    std::vector<Assertion> assertions;

    bool all_passed() const noexcept;
    std::string to_text() const;
};

// Accuracy non-increasing across the level grid (within one pooled std per
// step) and not higher at the top level than at the bottom, per method; plus
// full > baseline at level 0.4 when both are present.
AssertionReport sweep_assertions(const SweepResult& sweep);

// full >= w/o source correction; w/o label correction <= w/o feature correction.
AssertionReport ablation_assertions(const SweepResult& battery);

// Correction-curve direction on one or more runs.
AssertionReport curve_assertions(std::span<const CellResult> runs, double injected_label_ratio);

// NIC applied to the source right after warm-up, scored against ground truth.
struct WarmupDiagnosis {
    DistanceHistogram histogram;
    VerdictQuality quality;
};
WarmupDiagnosis diagnose_after_warmup(const ExperimentSpec& base, std::uint64_t seed);

}  // namespace dualcan::eval

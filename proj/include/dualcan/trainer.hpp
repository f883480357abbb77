#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualcan/datagen.hpp"
#include "dualcan/model.hpp"
#include "dualcan/nic.hpp"

namespace dualcan::trainer {

using ClassId = int;

// Switches matching the ablation rows of the method.
struct Ablation {
    bool feature_correction = true;
    bool label_correction = true;
    bool source_correction = true;
    bool target_correction = true;

    static Ablation full() { return {}; }
    static Ablation none() { return {false, false, false, false}; }

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

enum class TargetClusters { Own, Source };

struct TrainConfig {
    int max_epochs = 90;     // adaptation epochs, after warm-up
    int warmup_epochs = 10;  // source-only epochs before adaptation
    double lr = 2e-3;
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    int batch_size = 32;
    double separation_ratio = 0.08;
    double eta0 = 0.5;
    double consistency_weight = 1.0;
    double radius_percentile = 100.0;
    TargetClusters target_clusters = TargetClusters::Own;
    Ablation ablation;
    model::ModelConfig model;  // input_dim / num_classes are taken from the data
    model::AugmentSpec augment = model::AugmentSpec::scaled(1.0);
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

// Learning rate for an adaptation epoch: decays by lr_decay_factor at every
// floor(max_epochs / 3) boundary.
double learning_rate(const TrainConfig& config, int epoch);

// Feature-correction weight for an adaptation epoch; reaches 0 on the last one.
double eta_for_epoch(const TrainConfig& config, int epoch);

struct NicCounts {
    std::size_t clean = 0;
    std::size_t feature_noise = 0;
    std::size_t label_noise = 0;

    std::size_t total() const noexcept { return clean + feature_noise + label_noise; }
    friend bool operator==(const NicCounts&, const NicCounts&) = default;
};

NicCounts count_verdicts(std::span<const nic::CorrectionRecord> records);

struct EpochMetrics {
    int epoch = 0;
    double source_train_loss = 0.0;
    double target_train_loss = 0.0;
    double source_accuracy = 0.0;
    double target_accuracy = 0.0;
    double residual_source_noise_ratio = 0.0;  // corrected source labels != clean
    double detected_source_noise_ratio = 0.0;  // source instances flagged as noise by NIC
    double pseudo_label_error = 0.0;           // target labels used for training != clean
    NicCounts source_counts;
    NicCounts target_counts;
    double eta = 0.0;
    double lr = 0.0;

    friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

// Everything the loop produced in one adaptation epoch.
struct EpochSnapshot {
    int epoch = 0;
    const model::Model* model = nullptr;
    std::span<const ClassId> pseudo_labels;        // raw, from the source head
    std::span<const ClassId> target_labels_used;   // after target correction (if any)
    std::span<const ClassId> source_labels_used;   // after source correction (if any)
    std::span<const nic::CorrectionRecord> source_records;
    std::span<const nic::CorrectionRecord> target_records;
};

// Hook called after every adaptation epoch; implementations with access to
// ground truth fill in the accuracy and noise-ratio fields.
class EpochObserver {
public:
    virtual ~EpochObserver() = default;
    virtual void on_epoch(const EpochSnapshot& snapshot, EpochMetrics& metrics) = 0;
};

std::vector<ClassId> pseudo_label(const model::Model& model, const Matrix& target_features);

struct WarmupResult {
    model::Model model;
    std::vector<double> epoch_losses;
};

// Source-only CE training of G and the source head; the target head is then
// set to a copy of the source head.
WarmupResult warmup(const model::Model& model, const Matrix& source_x, std::span<const ClassId> observed,
                    const TrainConfig& config, model::SgdState& optimizer);

struct StepResult {
    model::Model model;
    std::vector<ClassId> pseudo_labels;  // empty for the TS step
    std::vector<ClassId> labels_used;
    std::vector<nic::CorrectionRecord> records;
    double train_loss = 0.0;
    double eta = 0.0;
};

// Forward task: pseudo-label, optionally NIC-correct, train the target head.
StepResult st_step(const model::Model& model, const Matrix& target_x, const TrainConfig& config, int epoch,
                   model::SgdState& optimizer, const nic::ClusterModel* shared_clusters = nullptr);

// Backward task: optionally NIC-correct the source, train G and the source head
// with the target head fixed.
StepResult ts_step(const model::Model& model, const Matrix& source_x, std::span<const ClassId> observed,
                   const TrainConfig& config, int epoch, model::SgdState& optimizer);

struct RunResult {
    model::Model model;  // last finite model
    std::vector<double> warmup_losses;
    std::vector<EpochMetrics> history;
    bool aborted = false;
    std::string error;
};

// Warm-up then max_epochs alternations of st_step / ts_step. Numeric failures
// stop the loop and are reported in the result with the last finite model.
RunResult run(const TrainConfig& config, const datagen::NoisyDataset& source, const datagen::NoisyDataset& target,
              std::span<EpochObserver* const> observers = {});

}  // namespace dualcan::trainer

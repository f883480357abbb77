#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dualcan/linalg.hpp"
#include "dualcan/model.hpp"

// Noise identification and correction: small-loss trust split, per-class
// centroid clusters over trusted features, three-way verdicts for untrusted
// instances, and correction by weighted feature disturbance and relabeling.
namespace dualcan::nic {

using ClassId = int;

struct TrustSplit {
    std::vector<std::size_t> trusted;    // ascending index order
    std::vector<std::size_t> untrusted;  // ascending index order
    double gamma = 0.0;
    std::vector<double> losses;
};

// max(1, ceil(n * p)), with n * p snapped to an integer when within 1e-9 of one.
std::size_t trusted_count(std::size_t n, double p);

// Trusts the ceil(N p) smallest losses; equal losses are ranked by index.
TrustSplit split_small_loss(std::span<const double> losses, double p);

struct ClusterModel {
    Matrix centroids;                              // K x m, NaN rows for empty clusters
    std::vector<double> radii;                     // K
    std::vector<std::vector<std::size_t>> members; // K index lists
    std::vector<bool> empty_mask;                  // K

    std::size_t num_classes() const noexcept { return radii.size(); }
    bool any_nonempty() const noexcept;
};

// radius_percentile = 100 gives the farthest-member radius; lower values use
// the nearest-rank percentile of member distances instead.
ClusterModel build_clusters(const Matrix& trusted_features, std::span<const ClassId> trusted_labels,
                            int num_classes, double radius_percentile = 100.0);

double euclidean(std::span<const double> a, std::span<const double> b);

struct Assignment {
    ClassId cluster = 0;
    double distance = 0.0;
};

Assignment nearest_cluster(std::span<const double> z, const ClusterModel& clusters);

enum class Verdict { Clean, FeatureNoise, LabelNoise };

const char* to_string(Verdict v) noexcept;

struct Identification {
    Verdict verdict = Verdict::Clean;
    ClassId cluster = 0;
    double distance = 0.0;
};

// Outside the nearest radius -> feature noise; inside (inclusive) with a
// different label -> label noise; otherwise clean.
Identification identify(std::span<const double> z, ClassId observed_label, const ClusterModel& clusters);

std::vector<double> correct_feature(std::span<const double> z, std::span<const double> centroid, double eta);

// eta0 * (1 - epoch / total_epochs)
double eta_schedule(int epoch, int total_epochs, double eta0);

struct CorrectionRecord {
    std::size_t index = 0;
    Verdict verdict = Verdict::Clean;
    ClassId assigned_cluster = 0;
    double distance = 0.0;
    double radius = 0.0;
    ClassId corrected_label = 0;
    std::optional<std::vector<double>> corrected_feature;
    double eta_used = 0.0;

    friend bool operator==(const CorrectionRecord&, const CorrectionRecord&) = default;
};

struct NicOptions {
    double separation_ratio = 0.08;
    double eta = 0.5;
    bool feature_correction = true;
    bool label_correction = true;
    double radius_percentile = 100.0;
};

struct SourceCorrection {
    std::vector<ClassId> labels;                                   // one per instance
    std::vector<std::optional<std::vector<double>>> features;     // corrected G-features, one per instance
    std::vector<CorrectionRecord> records;                         // one per untrusted instance
    ClusterModel clusters;
    TrustSplit split;
};

// Source pass: losses through the source head, clusters from trusted features
// and observed labels, every untrusted instance identified and corrected.
// Cluster statistics are frozen for the whole pass; nothing is discarded.
SourceCorrection nic_source(const Matrix& inputs, std::span<const ClassId> observed_labels,
                            const model::Model& model, const NicOptions& options);

struct TargetCorrection {
    std::vector<ClassId> labels;
    std::vector<CorrectionRecord> records;
    ClusterModel clusters;
    TrustSplit split;
};

// Target pass: losses through the target head against pseudo-labels; every
// untrusted pseudo-label is replaced by its nearest cluster. When
// shared_clusters is given it is used instead of target-own clusters.
TargetCorrection nic_target(const Matrix& inputs, std::span<const ClassId> pseudo_labels,
                            const model::Model& model, double separation_ratio,
                            double radius_percentile = 100.0, const ClusterModel* shared_clusters = nullptr);

// Per-instance cross-entropy of one head against the given labels.
std::vector<double> instance_losses(const model::Model& model, model::Head head, const Matrix& inputs,
                                    std::span<const ClassId> labels);

}  // namespace dualcan::nic

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dualcan/linalg.hpp"

namespace dualcan::datagen {

using ClassId = int;

// Class-conditional Gaussians with centers on a circle in the (x0, x1) plane;
// the target domain is the same mixture rotated in that plane then translated.
struct DomainSpec {
    int num_classes = 3;
    int feature_dim = 2;
    int samples_per_class = 200;
    double class_center_scale = 3.0;
    double class_spread = 1.0;
    double shift_rotation = 0.0;
    std::vector<double> shift_translation;  // empty means zero vector
    std::uint64_t seed = 0;
};

enum class NoiseKind { LabelOnly, FeatureOnly, Mixed };

struct NoiseSpec {
    double p_noise = 0.0;
    NoiseKind kind = NoiseKind::Mixed;
    double feature_noise_sigma = 2.0;
    double feature_mask_fraction = 0.5;
    std::uint64_t seed = 0;
};

enum class Domain : std::uint8_t { Source = 0, Target = 1 };

struct NoiseFlags {
    bool label_corrupted = false;
    bool feature_corrupted = false;
    friend bool operator==(const NoiseFlags&, const NoiseFlags&) = default;
};

class GroundTruth;

// Features plus the labels a learner may see. Clean labels and corruption flags
// are carried along for evaluation but only readable through GroundTruth.
class NoisyDataset {
public:
    NoisyDataset() = default;
    NoisyDataset(Matrix features, std::optional<std::vector<ClassId>> observed_labels,
                 std::vector<ClassId> clean_labels, std::vector<NoiseFlags> flags, Domain domain,
                 int num_classes);

    const Matrix& features() const noexcept { return features_; }
    const std::optional<std::vector<ClassId>>& observed_labels() const noexcept { return observed_; }
    bool has_observed_labels() const noexcept { return observed_.has_value(); }
    Domain domain() const noexcept { return domain_; }
    int num_classes() const noexcept { return num_classes_; }
    std::size_t size() const noexcept { return features_.rows; }
    std::size_t dim() const noexcept { return features_.cols; }

    friend bool operator==(const NoisyDataset&, const NoisyDataset&) = default;

private:
    Matrix features_;
    std::optional<std::vector<ClassId>> observed_;
    std::vector<ClassId> clean_;
    std::vector<NoiseFlags> flags_;
    Domain domain_ = Domain::Source;
    int num_classes_ = 0;

    friend class GroundTruth;
};

struct DomainPair {
    NoisyDataset source;
    NoisyDataset target;
};

void validate(const DomainSpec& spec);
void validate(const NoiseSpec& noise);

// Centers used by make_domain_pair, before any shift.
Matrix class_centers(const DomainSpec& spec);

// Applies the spec's rotation + translation to one point.
std::vector<double> shift_point(const DomainSpec& spec, std::span<const double> x);

DomainPair make_domain_pair(const DomainSpec& spec);

// Injects label and/or feature corruption. Mixed accepts p_noise up to 2 since
// each channel fires with probability p_noise / 2.
NoisyDataset corrupt(const NoisyDataset& dataset, const NoiseSpec& noise);

}  // namespace dualcan::datagen

#include "dualcan/datagen.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "dualcan/errors.hpp"
#include "dualcan/ground_truth.hpp"
#include "dualcan/rng.hpp"

namespace dualcan::datagen {

NoisyDataset::NoisyDataset(Matrix features, std::optional<std::vector<ClassId>> observed_labels,
                           std::vector<ClassId> clean_labels, std::vector<NoiseFlags> flags,
                           Domain domain, int num_classes)
    : features_(std::move(features)),
      observed_(std::move(observed_labels)),
      clean_(std::move(clean_labels)),
      flags_(std::move(flags)),
      domain_(domain),
      num_classes_(num_classes) {
    const std::size_t n = features_.rows;
    if (clean_.size() != n || flags_.size() != n || (observed_ && observed_->size() != n)) {
        throw ShapeError("dataset columns have inconsistent lengths");
    }
    if (num_classes_ < 2) throw ParameterError("dataset needs at least two classes");
    auto in_range = [&](ClassId c) { return c >= 0 && c < num_classes_; };
    for (std::size_t i = 0; i < n; ++i) {
        if (!in_range(clean_[i])) throw ParameterError("clean label out of range");
        if (observed_ && !in_range((*observed_)[i])) throw ParameterError("observed label out of range");
    }
}

void validate(const DomainSpec& spec) {
    if (spec.num_classes < 2) throw ParameterError("num_classes must be >= 2");
    if (spec.feature_dim < 2) throw ParameterError("feature_dim must be >= 2");
    if (spec.samples_per_class < 1) throw ParameterError("samples_per_class must be >= 1");
    if (!(spec.class_center_scale > 0.0)) throw ParameterError("class_center_scale must be > 0");
    if (!(spec.class_spread >= 0.0) || !std::isfinite(spec.class_spread)) {
        throw ParameterError("class_spread must be finite and >= 0");
    }
    if (!std::isfinite(spec.shift_rotation)) throw ParameterError("shift_rotation must be finite");
    if (!spec.shift_translation.empty() &&
        spec.shift_translation.size() != static_cast<std::size_t>(spec.feature_dim)) {
        throw ParameterError("shift_translation must have feature_dim entries");
    }
}

void validate(const NoiseSpec& noise) {
    const double upper = noise.kind == NoiseKind::Mixed ? 2.0 : 1.0;
    if (!(noise.p_noise >= 0.0 && noise.p_noise <= upper)) {
        throw ParameterError("p_noise out of range: " + std::to_string(noise.p_noise));
    }
    if (!(noise.feature_noise_sigma >= 0.0)) throw ParameterError("feature_noise_sigma must be >= 0");
    if (!(noise.feature_mask_fraction >= 0.0 && noise.feature_mask_fraction <= 1.0)) {
        throw ParameterError("feature_mask_fraction must lie in [0,1]");
    }
}

Matrix class_centers(const DomainSpec& spec) {
    validate(spec);
    Matrix centers(spec.num_classes, spec.feature_dim);
    for (int k = 0; k < spec.num_classes; ++k) {
        const double angle = 2.0 * std::numbers::pi * k / spec.num_classes;
        centers(k, 0) = spec.class_center_scale * std::cos(angle);
        centers(k, 1) = spec.class_center_scale * std::sin(angle);
    }
    return centers;
}

std::vector<double> shift_point(const DomainSpec& spec, std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    const double c = std::cos(spec.shift_rotation);
    const double s = std::sin(spec.shift_rotation);
    out[0] = c * x[0] - s * x[1];
    out[1] = s * x[0] + c * x[1];
    if (!spec.shift_translation.empty()) {
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += spec.shift_translation[j];
    }
    return out;
}

namespace {

Matrix sample_mixture(const DomainSpec& spec, const Matrix& centers, Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class;
    Matrix x(n, spec.feature_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t i = 0;
    for (int k = 0; k < spec.num_classes; ++k) {
        for (int s = 0; s < spec.samples_per_class; ++s, ++i) {
            for (int j = 0; j < spec.feature_dim; ++j) {
                x(i, j) = centers(k, j) + spec.class_spread * normal(rng);
            }
        }
    }
    return x;
}

std::vector<ClassId> class_major_labels(const DomainSpec& spec) {
    std::vector<ClassId> labels;
    labels.reserve(static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class);
    for (int k = 0; k < spec.num_classes; ++k) labels.insert(labels.end(), spec.samples_per_class, k);
    return labels;
}

}  // namespace

DomainPair make_domain_pair(const DomainSpec& spec) {
    validate(spec);
    const Matrix centers = class_centers(spec);
    const auto labels = class_major_labels(spec);
    const std::size_t n = labels.size();

    Rng source_rng(derive_seed(spec.seed, {1}));
    Rng target_rng(derive_seed(spec.seed, {2}));
    Matrix xs = sample_mixture(spec, centers, source_rng);
    Matrix xt = sample_mixture(spec, centers, target_rng);
    for (std::size_t i = 0; i < n; ++i) {
        auto shifted = shift_point(spec, xt.row(i));
        std::copy(shifted.begin(), shifted.end(), xt.row(i).begin());
    }

    NoisyDataset source(std::move(xs), labels, labels, std::vector<NoiseFlags>(n), Domain::Source,
                        spec.num_classes);
    NoisyDataset target(std::move(xt), std::nullopt, labels, std::vector<NoiseFlags>(n),
                        Domain::Target, spec.num_classes);
    return {std::move(source), std::move(target)};
}

NoisyDataset corrupt(const NoisyDataset& dataset, const NoiseSpec& noise) {
    validate(noise);
    const bool touches_labels = noise.kind != NoiseKind::FeatureOnly;
    const bool touches_features = noise.kind != NoiseKind::LabelOnly;
    if (touches_labels && !dataset.has_observed_labels()) {
        throw StateError("label corruption requires observed labels");
    }
    const double p_label = noise.kind == NoiseKind::Mixed ? noise.p_noise / 2.0
                           : touches_labels               ? noise.p_noise
                                                          : 0.0;
    const double p_feature = noise.kind == NoiseKind::Mixed ? noise.p_noise / 2.0
                             : touches_features             ? noise.p_noise
                                                            : 0.0;

    Matrix x = dataset.features();
    auto observed = dataset.observed_labels();
    const auto clean = GroundTruth::clean_labels(dataset);
    const auto in_flags = GroundTruth::flags(dataset);
    std::vector<NoiseFlags> flags(in_flags.begin(), in_flags.end());

    const int num_classes = dataset.num_classes();
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;

    double max_abs = 0.0;
    for (double v : x.data) max_abs = std::max(max_abs, std::abs(v));
    const auto masked = static_cast<std::size_t>(std::lround(noise.feature_mask_fraction * d));

    Rng label_rng(derive_seed(noise.seed, {1}));
    Rng feature_rng(derive_seed(noise.seed, {2}));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> offset(1, num_classes - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::size_t> coords(d);

    for (std::size_t i = 0; i < n; ++i) {
        if (p_label > 0.0 && unit(label_rng) < p_label) {
            auto& y = (*observed)[i];
            y = (y + offset(label_rng)) % num_classes;
            flags[i].label_corrupted = y != clean[i];
        }
        if (p_feature > 0.0 && unit(feature_rng) < p_feature) {
            auto row = x.row(i);
            for (auto& v : row) v += noise.feature_noise_sigma * normal(feature_rng);
            std::iota(coords.begin(), coords.end(), std::size_t{0});
            for (std::size_t m = 0; m < masked; ++m) {
                std::uniform_int_distribution<std::size_t> pick(m, d - 1);
                std::swap(coords[m], coords[pick(feature_rng)]);
                row[coords[m]] = unit(feature_rng) < 0.5 ? -max_abs : max_abs;
            }
            flags[i].feature_corrupted = true;
        }
    }
    return NoisyDataset(std::move(x), std::move(observed),
                        std::vector<ClassId>(clean.begin(), clean.end()), std::move(flags),
                        dataset.domain(), num_classes);
}

}  // namespace dualcan::datagen

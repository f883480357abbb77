#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dualcan/linalg.hpp"

namespace dualcan::model {

using ClassId = int;

enum class Head { Source, Target };

struct ModelConfig {
    int input_dim = 2;
    std::vector<int> hidden_dims{32, 16};
    int feature_dim = 16;
    int num_classes = 3;
    double init_scale = 1.0;
    std::uint64_t seed = 0;
};

// Affine map; weights are out x in.
struct Layer {
    Matrix weights;
    std::vector<double> bias;

    std::size_t fan_in() const noexcept { return weights.cols; }
    std::size_t fan_out() const noexcept { return weights.rows; }
    std::size_t parameter_count() const noexcept { return weights.data.size() + bias.size(); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

// Shared feature generator G (affine layers with tanh in between, linear
// output) and the two classifier heads.
struct Model {
    std::vector<Layer> generator;
    Layer head_s;
    Layer head_t;

    std::size_t input_dim() const noexcept { return generator.front().fan_in(); }
    std::size_t feature_dim() const noexcept { return generator.back().fan_out(); }
    std::size_t num_classes() const noexcept { return head_s.fan_out(); }
    std::size_t parameter_count() const noexcept;
    bool all_finite() const noexcept;

    const Layer& head(Head h) const noexcept { return h == Head::Source ? head_s : head_t; }

    friend bool operator==(const Model&, const Model&) = default;
};

// Gradient (or velocity) buffers. A missing subset means "not touched".
struct Gradients {
    std::optional<std::vector<Layer>> generator;
    std::optional<Layer> head_s;
    std::optional<Layer> head_t;

    bool all_finite() const noexcept;
};

void validate(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);
Model init_model(const ModelConfig& config);

// Zero-valued gradient buffers shaped like the model's parameters.
Layer zeros_like(const Layer& layer);
std::vector<Layer> zeros_like(const std::vector<Layer>& layers);

std::vector<double> features(const Model& model, std::span<const double> x);
Matrix features(const Model& model, const Matrix& x);

std::vector<double> head_logits(const Layer& head, std::span<const double> z);
// Throws NumericError on a non-finite logit.
std::vector<double> softmax(std::span<const double> logits);

std::vector<double> predict(const Model& model, Head head, std::span<const double> x);
Matrix predict(const Model& model, Head head, const Matrix& x);

// Index of the largest entry; ties resolve to the smallest index.
ClassId argmax(std::span<const double> values);

inline constexpr double kProbabilityFloor = 1e-12;

double cross_entropy(std::span<const double> pred, ClassId target);
double cross_entropy(std::span<const double> pred, std::span<const double> target);

struct AugmentSpec {
    double weak_sigma = 0.05;
    double strong_sigma = 0.2;
    double strong_mask_prob = 0.1;
    std::uint64_t seed = 0;

    // Default noise levels relative to a characteristic feature scale.
    static AugmentSpec scaled(double feature_scale, std::uint64_t seed = 0) {
        return {0.05 * feature_scale, 0.2 * feature_scale, 0.1, seed};
    }
};

enum class Strength { Weak, Strong };

void validate(const AugmentSpec& aug);
std::vector<double> augment(std::span<const double> x, const AugmentSpec& aug, Strength strength,
                            std::uint64_t seed);

struct LossAndGrad {
    double loss = 0.0;
    Gradients grads;
};

// Target-head objective: supervised CE on corrected labels plus a consistency
// CE whose soft target is the (frozen) weak-branch prediction.
struct TargetBatch {
    Matrix inputs;
    Matrix weak;
    Matrix strong;
    std::vector<ClassId> labels;
};

// Row i of the weak/strong copies is augmented with seeds derived from (seed, i).
TargetBatch make_target_batch(Matrix inputs, std::vector<ClassId> labels, const AugmentSpec& aug,
                              std::uint64_t seed);

LossAndGrad loss_grad_target(const Model& model, const TargetBatch& batch, double consistency_weight = 1.0);

// Feature-space correction (1 - eta) * G(x) + eta * centroid, centroid constant.
struct FeatureCorrection {
    std::vector<double> centroid;
    double eta = 0.0;
};

struct SourceBatch {
    Matrix inputs;
    std::vector<ClassId> labels;
    std::vector<std::optional<FeatureCorrection>> corrections;  // empty, or one per row
};

// Source objective: CE through both heads, gradients into G and the source head only.
LossAndGrad loss_grad_source(const Model& model, const SourceBatch& batch);

// Plain CE through one head, gradients into G and that head (warm-up).
LossAndGrad loss_grad_supervised(const Model& model, Head head, const Matrix& inputs,
                                 std::span<const ClassId> labels);

// Momentum buffers persist across steps; subsets appear on first use.
struct SgdState {
    Gradients velocity;
};

// v <- momentum * v + g ; w <- w - lr * v, for each subset present in grads.
// Throws NumericError (model untouched) if any gradient is non-finite.
Model sgd_step(const Model& model, const Gradients& grads, double lr, double momentum, SgdState& state);
Model sgd_step(const Model& model, const Gradients& grads, double lr, double momentum);

}  // namespace dualcan::model

#include "dualcan/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dualcan/errors.hpp"
#include "dualcan/rng.hpp"

namespace dualcan::model {

namespace {

bool finite_layer(const Layer& l) {
    auto ok = [](double v) { return std::isfinite(v); };
    return std::all_of(l.weights.data.begin(), l.weights.data.end(), ok) &&
           std::all_of(l.bias.begin(), l.bias.end(), ok);
}

Layer random_layer(std::size_t in, std::size_t out, double scale, Rng& rng) {
    Layer l{Matrix(out, in), std::vector<double>(out, 0.0)};
    std::normal_distribution<double> normal(0.0, 1.0);
    const double std_dev = scale / std::sqrt(static_cast<double>(in));
    for (auto& w : l.weights.data) w = std_dev * normal(rng);
    return l;
}

void affine(const Layer& layer, std::span<const double> in, std::vector<double>& out) {
    out.resize(layer.fan_out());
    for (std::size_t j = 0; j < layer.fan_out(); ++j) {
        const auto w = layer.weights.row(j);
        double acc = 0.0;
        for (std::size_t i = 0; i < in.size(); ++i) acc += w[i] * in[i];
        out[j] = acc + layer.bias[j];
    }
}

// acts[0] is the input, acts[l + 1] the output of generator layer l.
using Trace = std::vector<std::vector<double>>;

Trace forward_trace(const Model& model, std::span<const double> x) {
    if (x.size() != model.input_dim()) {
        throw ShapeError("input width " + std::to_string(x.size()) + " != model input dim " +
                         std::to_string(model.input_dim()));
    }
    Trace acts(model.generator.size() + 1);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < model.generator.size(); ++l) {
        affine(model.generator[l], acts[l], acts[l + 1]);
        if (l + 1 < model.generator.size()) {
            for (auto& v : acts[l + 1]) v = std::tanh(v);
        }
    }
    return acts;
}

// Accumulates dL/dparams of G given dL/dG(x) for one traced input.
void backward_generator(const Model& model, const Trace& acts, std::vector<double> g,
                        std::vector<Layer>& grads) {
    const std::size_t depth = model.generator.size();
    std::vector<double> next;
    for (std::size_t l = depth; l-- > 0;) {
        if (l + 1 < depth) {
            const auto& a = acts[l + 1];
            for (std::size_t j = 0; j < g.size(); ++j) g[j] *= 1.0 - a[j] * a[j];
        }
        const auto& in = acts[l];
        auto& grad = grads[l];
        for (std::size_t j = 0; j < g.size(); ++j) {
            grad.bias[j] += g[j];
            auto row = grad.weights.row(j);
            for (std::size_t i = 0; i < in.size(); ++i) row[i] += g[j] * in[i];
        }
        if (l == 0) break;
        const auto& w = model.generator[l].weights;
        next.assign(in.size(), 0.0);
        for (std::size_t j = 0; j < g.size(); ++j) {
            const auto wrow = w.row(j);
            for (std::size_t i = 0; i < in.size(); ++i) next[i] += wrow[i] * g[j];
        }
        g.swap(next);
    }
}

// d(-sum_k t_k log max(p_k, floor)) / d logits, for p = softmax(logits).
std::vector<double> cross_entropy_logit_grad(std::span<const double> p, std::span<const double> t) {
    double active_mass = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] >= kProbabilityFloor) active_mass += t[k];
    }
    std::vector<double> g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        g[j] = p[j] * active_mass - (p[j] >= kProbabilityFloor ? t[j] : 0.0);
    }
    return g;
}

std::vector<double> one_hot(std::size_t k, ClassId y) {
    std::vector<double> t(k, 0.0);
    t[static_cast<std::size_t>(y)] = 1.0;
    return t;
}

void accumulate_head(const Layer& head, std::span<const double> z, std::span<const double> glogits,
                     Layer& grad, std::vector<double>* grad_z) {
    for (std::size_t k = 0; k < glogits.size(); ++k) {
        grad.bias[k] += glogits[k];
        auto row = grad.weights.row(k);
        for (std::size_t i = 0; i < z.size(); ++i) row[i] += glogits[k] * z[i];
    }
    if (grad_z) {
        for (std::size_t k = 0; k < glogits.size(); ++k) {
            const auto w = head.weights.row(k);
            for (std::size_t i = 0; i < z.size(); ++i) (*grad_z)[i] += w[i] * glogits[k];
        }
    }
}

void scale_layer(Layer& l, double s) {
    for (auto& v : l.weights.data) v *= s;
    for (auto& v : l.bias) v *= s;
}

void check_labels(std::span<const ClassId> labels, std::size_t num_classes) {
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ParameterError("label " + std::to_string(y) + " out of range");
        }
    }
}

void update_layer(Layer& w, Layer& v, const Layer& g, double lr, double momentum) {
    for (std::size_t i = 0; i < w.weights.data.size(); ++i) {
        v.weights.data[i] = momentum * v.weights.data[i] + g.weights.data[i];
        w.weights.data[i] -= lr * v.weights.data[i];
    }
    for (std::size_t i = 0; i < w.bias.size(); ++i) {
        v.bias[i] = momentum * v.bias[i] + g.bias[i];
        w.bias[i] -= lr * v.bias[i];
    }
}

void check_same_shape(const Layer& a, const Layer& b) {
    if (a.weights.rows != b.weights.rows || a.weights.cols != b.weights.cols || a.bias.size() != b.bias.size()) {
        throw ShapeError("gradient shape does not match parameters");
    }
}

}  // namespace

std::size_t Model::parameter_count() const noexcept {
    std::size_t n = head_s.parameter_count() + head_t.parameter_count();
    for (const auto& l : generator) n += l.parameter_count();
    return n;
}

bool Model::all_finite() const noexcept {
    return std::all_of(generator.begin(), generator.end(), finite_layer) && finite_layer(head_s) &&
           finite_layer(head_t);
}

bool Gradients::all_finite() const noexcept {
    if (generator && !std::all_of(generator->begin(), generator->end(), finite_layer)) return false;
    if (head_s && !finite_layer(*head_s)) return false;
    if (head_t && !finite_layer(*head_t)) return false;
    return true;
}

void validate(const ModelConfig& c) {
    if (c.input_dim < 1 || c.feature_dim < 1) throw ParameterError("model dims must be positive");
    if (c.num_classes < 2) throw ParameterError("num_classes must be >= 2");
    for (int h : c.hidden_dims) {
        if (h < 1) throw ParameterError("hidden dims must be positive");
    }
    if (!(c.init_scale > 0.0)) throw ParameterError("init_scale must be > 0");
}

std::size_t parameter_count(const ModelConfig& c) {
    validate(c);
    std::size_t n = 0;
    std::size_t fan_in = c.input_dim;
    for (int h : c.hidden_dims) {
        n += (fan_in + 1) * h;
        fan_in = h;
    }
    n += (fan_in + 1) * c.feature_dim;
    n += 2 * (static_cast<std::size_t>(c.feature_dim) + 1) * c.num_classes;
    return n;
}

Model init_model(const ModelConfig& c) {
    validate(c);
    Rng rng(c.seed);
    Model m;
    std::size_t fan_in = c.input_dim;
    for (int h : c.hidden_dims) {
        m.generator.push_back(random_layer(fan_in, h, c.init_scale, rng));
        fan_in = h;
    }
    m.generator.push_back(random_layer(fan_in, c.feature_dim, c.init_scale, rng));
    m.head_s = random_layer(c.feature_dim, c.num_classes, c.init_scale, rng);
    m.head_t = random_layer(c.feature_dim, c.num_classes, c.init_scale, rng);
    return m;
}

Layer zeros_like(const Layer& layer) {
    return {Matrix(layer.weights.rows, layer.weights.cols), std::vector<double>(layer.bias.size(), 0.0)};
}

std::vector<Layer> zeros_like(const std::vector<Layer>& layers) {
    std::vector<Layer> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(zeros_like(l));
    return out;
}

std::vector<double> features(const Model& model, std::span<const double> x) {
    auto acts = forward_trace(model, x);
    return std::move(acts.back());
}

Matrix features(const Model& model, const Matrix& x) {
    if (x.cols != model.input_dim()) throw ShapeError("batch width does not match model input dim");
    Matrix out(x.rows, model.feature_dim());
    for (std::size_t i = 0; i < x.rows; ++i) {
        const auto z = features(model, x.row(i));
        std::copy(z.begin(), z.end(), out.row(i).begin());
    }
    return out;
}

std::vector<double> head_logits(const Layer& head, std::span<const double> z) {
    if (z.size() != head.fan_in()) throw ShapeError("feature width does not match head");
    std::vector<double> out;
    affine(head, z, out);
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    for (double v : logits) {
        if (!std::isfinite(v)) throw NumericError("non-finite logit");
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - top);
        total += p[k];
    }
    for (auto& v : p) v /= total;
    return p;
}

std::vector<double> predict(const Model& model, Head head, std::span<const double> x) {
    return softmax(head_logits(model.head(head), features(model, x)));
}

Matrix predict(const Model& model, Head head, const Matrix& x) {
    if (x.cols != model.input_dim()) throw ShapeError("batch width does not match model input dim");
    Matrix out(x.rows, model.num_classes());
    for (std::size_t i = 0; i < x.rows; ++i) {
        const auto p = predict(model, head, x.row(i));
        std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
}

ClassId argmax(std::span<const double> values) {
    if (values.empty()) throw ParameterError("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] > values[best]) best = k;
    }
    return static_cast<ClassId>(best);
}

namespace {

void check_distribution(std::span<const double> p, const char* what) {
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError(std::string(what) + " has invalid entries");
        total += v;
    }
    if (p.empty() || std::abs(total - 1.0) > 1e-9) throw ParameterError(std::string(what) + " does not sum to 1");
}

}  // namespace

double cross_entropy(std::span<const double> pred, ClassId target) {
    check_distribution(pred, "prediction");
    if (target < 0 || static_cast<std::size_t>(target) >= pred.size()) throw ParameterError("target class out of range");
    return -std::log(std::max(pred[static_cast<std::size_t>(target)], kProbabilityFloor));
}

double cross_entropy(std::span<const double> pred, std::span<const double> target) {
    check_distribution(pred, "prediction");
    check_distribution(target, "soft target");
    if (pred.size() != target.size()) throw ShapeError("prediction and target widths differ");
    double loss = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (target[k] != 0.0) loss -= target[k] * std::log(std::max(pred[k], kProbabilityFloor));
    }
    return loss;
}

void validate(const AugmentSpec& aug) {
    if (!(aug.weak_sigma >= 0.0) || !(aug.strong_sigma >= 0.0)) throw ParameterError("augment sigmas must be >= 0");
    if (aug.weak_sigma > aug.strong_sigma) throw ParameterError("weak_sigma must not exceed strong_sigma");
    if (!(aug.strong_mask_prob >= 0.0 && aug.strong_mask_prob <= 1.0)) {
        throw ParameterError("strong_mask_prob must lie in [0,1]");
    }
}

std::vector<double> augment(std::span<const double> x, const AugmentSpec& aug, Strength strength,
                            std::uint64_t seed) {
    Rng rng(derive_seed(aug.seed, {seed, strength == Strength::Weak ? 0u : 1u}));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sigma = strength == Strength::Weak ? aug.weak_sigma : aug.strong_sigma;
    std::vector<double> out(x.begin(), x.end());
    for (auto& v : out) v += sigma * normal(rng);
    if (strength == Strength::Strong) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (auto& v : out) {
            if (unit(rng) < aug.strong_mask_prob) v = 0.0;
        }
    }
    return out;
}

TargetBatch make_target_batch(Matrix inputs, std::vector<ClassId> labels, const AugmentSpec& aug,
                              std::uint64_t seed) {
    validate(aug);
    if (labels.size() != inputs.rows) throw ShapeError("label count does not match batch rows");
    TargetBatch b{std::move(inputs), {}, {}, std::move(labels)};
    b.weak = Matrix(b.inputs.rows, b.inputs.cols);
    b.strong = Matrix(b.inputs.rows, b.inputs.cols);
    for (std::size_t i = 0; i < b.inputs.rows; ++i) {
        const auto row_seed = derive_seed(seed, {i});
        const auto w = augment(b.inputs.row(i), aug, Strength::Weak, row_seed);
        const auto s = augment(b.inputs.row(i), aug, Strength::Strong, row_seed);
        std::copy(w.begin(), w.end(), b.weak.row(i).begin());
        std::copy(s.begin(), s.end(), b.strong.row(i).begin());
    }
    return b;
}

LossAndGrad loss_grad_target(const Model& model, const TargetBatch& batch, double consistency_weight) {
    const std::size_t n = batch.inputs.rows;
    if (n == 0) throw ParameterError("empty target batch");
    if (batch.labels.size() != n || batch.weak.rows != n || batch.strong.rows != n) {
        throw ShapeError("target batch parts have inconsistent rows");
    }
    const std::size_t k = model.num_classes();
    check_labels(batch.labels, k);

    const Layer& head = model.head_t;
    Layer grad = zeros_like(head);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = features(model, batch.inputs.row(i));
        const auto p = softmax(head_logits(head, z));
        const auto t = one_hot(k, batch.labels[i]);
        loss += cross_entropy(p, batch.labels[i]);
        accumulate_head(head, z, cross_entropy_logit_grad(p, t), grad, nullptr);

        if (consistency_weight != 0.0) {
            const auto q_weak = softmax(head_logits(head, features(model, batch.weak.row(i))));
            const auto z_strong = features(model, batch.strong.row(i));
            const auto p_strong = softmax(head_logits(head, z_strong));
            loss += consistency_weight * cross_entropy(p_strong, q_weak);
            auto g = cross_entropy_logit_grad(p_strong, q_weak);
            for (auto& v : g) v *= consistency_weight;
            accumulate_head(head, z_strong, g, grad, nullptr);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    scale_layer(grad, inv_n);
    LossAndGrad out{loss * inv_n, {}};
    out.grads.head_t = std::move(grad);
    return out;
}

LossAndGrad loss_grad_source(const Model& model, const SourceBatch& batch) {
    const std::size_t n = batch.inputs.rows;
    if (n == 0) throw ParameterError("empty source batch");
    if (batch.labels.size() != n || (!batch.corrections.empty() && batch.corrections.size() != n)) {
        throw ShapeError("source batch parts have inconsistent rows");
    }
    const std::size_t k = model.num_classes();
    const std::size_t m = model.feature_dim();
    check_labels(batch.labels, k);

    auto grad_g = zeros_like(model.generator);
    Layer grad_s = zeros_like(model.head_s);
    Layer scratch_t = zeros_like(model.head_t);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto acts = forward_trace(model, batch.inputs.row(i));
        const auto& z = acts.back();
        const FeatureCorrection* fix =
            batch.corrections.empty() || !batch.corrections[i] ? nullptr : &*batch.corrections[i];
        std::vector<double> h = z;
        if (fix) {
            if (fix->centroid.size() != m) throw ShapeError("centroid width does not match feature dim");
            if (!(fix->eta >= 0.0 && fix->eta <= 1.0)) throw ParameterError("eta must lie in [0,1]");
            for (std::size_t j = 0; j < m; ++j) h[j] = (1.0 - fix->eta) * z[j] + fix->eta * fix->centroid[j];
        }
        const auto t = one_hot(k, batch.labels[i]);
        const auto ps = softmax(head_logits(model.head_s, h));
        const auto pt = softmax(head_logits(model.head_t, h));
        loss += cross_entropy(ps, batch.labels[i]) + cross_entropy(pt, batch.labels[i]);

        std::vector<double> grad_h(m, 0.0);
        accumulate_head(model.head_s, h, cross_entropy_logit_grad(ps, t), grad_s, &grad_h);
        // The target head is held fixed: its gradient is discarded, only dL/dh is kept.
        accumulate_head(model.head_t, h, cross_entropy_logit_grad(pt, t), scratch_t, &grad_h);
        if (fix) {
            if (fix->eta == 1.0) continue;
            for (auto& v : grad_h) v *= 1.0 - fix->eta;
        }
        backward_generator(model, acts, std::move(grad_h), grad_g);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& l : grad_g) scale_layer(l, inv_n);
    scale_layer(grad_s, inv_n);
    LossAndGrad out{loss * inv_n, {}};
    out.grads.generator = std::move(grad_g);
    out.grads.head_s = std::move(grad_s);
    return out;
}

LossAndGrad loss_grad_supervised(const Model& model, Head head, const Matrix& inputs,
                                 std::span<const ClassId> labels) {
    const std::size_t n = inputs.rows;
    if (n == 0) throw ParameterError("empty batch");
    if (labels.size() != n) throw ShapeError("label count does not match batch rows");
    const std::size_t k = model.num_classes();
    check_labels(labels, k);
    const Layer& h = model.head(head);

    auto grad_g = zeros_like(model.generator);
    Layer grad_h = zeros_like(h);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto acts = forward_trace(model, inputs.row(i));
        const auto& z = acts.back();
        const auto p = softmax(head_logits(h, z));
        loss += cross_entropy(p, labels[i]);
        std::vector<double> grad_z(z.size(), 0.0);
        accumulate_head(h, z, cross_entropy_logit_grad(p, one_hot(k, labels[i])), grad_h, &grad_z);
        backward_generator(model, acts, std::move(grad_z), grad_g);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& l : grad_g) scale_layer(l, inv_n);
    scale_layer(grad_h, inv_n);
    LossAndGrad out{loss * inv_n, {}};
    out.grads.generator = std::move(grad_g);
    (head == Head::Source ? out.grads.head_s : out.grads.head_t) = std::move(grad_h);
    return out;
}

Model sgd_step(const Model& model, const Gradients& grads, double lr, double momentum, SgdState& state) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0,1)");
    if (!grads.all_finite()) throw NumericError("non-finite gradient");

    Model next = model;
    auto& vel = state.velocity;
    if (grads.generator) {
        if (grads.generator->size() != next.generator.size()) throw ShapeError("generator gradient depth mismatch");
        if (!vel.generator) vel.generator = zeros_like(next.generator);
        for (std::size_t l = 0; l < next.generator.size(); ++l) {
            check_same_shape(next.generator[l], (*grads.generator)[l]);
            update_layer(next.generator[l], (*vel.generator)[l], (*grads.generator)[l], lr, momentum);
        }
    }
    if (grads.head_s) {
        check_same_shape(next.head_s, *grads.head_s);
        if (!vel.head_s) vel.head_s = zeros_like(next.head_s);
        update_layer(next.head_s, *vel.head_s, *grads.head_s, lr, momentum);
    }
    if (grads.head_t) {
        check_same_shape(next.head_t, *grads.head_t);
        if (!vel.head_t) vel.head_t = zeros_like(next.head_t);
        update_layer(next.head_t, *vel.head_t, *grads.head_t, lr, momentum);
    }
    return next;
}

Model sgd_step(const Model& model, const Gradients& grads, double lr, double momentum) {
    SgdState fresh;
    return sgd_step(model, grads, lr, momentum, fresh);
}

}  // namespace dualcan::model

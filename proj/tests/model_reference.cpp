#include "model_reference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "nic_reference.hpp"

namespace refimpl {

using dualcan::Matrix;
using dualcan::model::Head;
using dualcan::model::Layer;

namespace {

std::vector<double> row_of(const Matrix& m, std::size_t i) {
    return {m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols),
            m.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.cols)};
}

std::vector<double*> scalars(Model& m, Part part) {
    std::vector<double*> out;
    auto take = [&](Layer& l) {
        for (auto& v : l.weights.data) out.push_back(&v);
        for (auto& v : l.bias) out.push_back(&v);
    };
    if (part == Part::Generator) {
        for (auto& l : m.generator) take(l);
    } else {
        take(part == Part::HeadS ? m.head_s : m.head_t);
    }
    return out;
}

std::vector<double> flatten(const dualcan::model::Gradients& g, Part part) {
    std::vector<double> out;
    auto take = [&](const Layer& l) {
        out.insert(out.end(), l.weights.data.begin(), l.weights.data.end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    };
    if (part == Part::Generator) {
        if (!g.generator) throw std::runtime_error("no generator gradient");
        for (const auto& l : *g.generator) take(l);
    } else {
        const auto& h = part == Part::HeadS ? g.head_s : g.head_t;
        if (!h) throw std::runtime_error("no head gradient");
        take(*h);
    }
    return out;
}

}  // namespace

double ref_ce_hard(const std::vector<double>& p, int y) {
    return -std::log(std::max(p.at(static_cast<std::size_t>(y)), 1e-12));
}

double ref_ce_soft(const std::vector<double>& p, const std::vector<double>& t) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += t[k] * std::log(std::max(p[k], 1e-12));
    return -s;
}

std::vector<std::vector<double>> ref_weak_targets(const Model& m, const dualcan::model::TargetBatch& b) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < b.weak.rows; ++i) out.push_back(ref_probs(m.head_t, ref_features(m, row_of(b.weak, i))));
    return out;
}

double ref_target_objective(const Model& m, const dualcan::model::TargetBatch& b,
                            const std::vector<std::vector<double>>& weak_targets, double weight) {
    double total = 0.0;
    for (std::size_t i = 0; i < b.inputs.rows; ++i) {
        const auto p = ref_probs(m.head_t, ref_features(m, row_of(b.inputs, i)));
        const auto ps = ref_probs(m.head_t, ref_features(m, row_of(b.strong, i)));
        total += ref_ce_hard(p, b.labels[i]) + weight * ref_ce_soft(ps, weak_targets[i]);
    }
    return total / static_cast<double>(b.inputs.rows);
}

double ref_source_objective(const Model& m, const dualcan::model::SourceBatch& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < b.inputs.rows; ++i) {
        auto h = ref_features(m, row_of(b.inputs, i));
        if (!b.corrections.empty() && b.corrections[i]) {
            const auto& c = *b.corrections[i];
            for (std::size_t j = 0; j < h.size(); ++j) h[j] = (1.0 - c.eta) * h[j] + c.eta * c.centroid[j];
        }
        total += ref_ce_hard(ref_probs(m.head_s, h), b.labels[i]) + ref_ce_hard(ref_probs(m.head_t, h), b.labels[i]);
    }
    return total / static_cast<double>(b.inputs.rows);
}

double ref_supervised_objective(const Model& m, Head head, const Matrix& x, const std::vector<int>& y) {
    double total = 0.0;
    const Layer& h = head == Head::Source ? m.head_s : m.head_t;
    for (std::size_t i = 0; i < x.rows; ++i) total += ref_ce_hard(ref_probs(h, ref_features(m, row_of(x, i))), y[i]);
    return total / static_cast<double>(x.rows);
}

FdReport finite_difference_check(const Model& m, Part part, const dualcan::model::Gradients& analytic,
                                 const std::function<double(const Model&)>& objective, double step, double floor) {
    Model work = m;
    auto ptrs = scalars(work, part);
    const auto a = flatten(analytic, part);
    if (a.size() != ptrs.size()) throw std::runtime_error("gradient shape mismatch");
    FdReport rep;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const double saved = *ptrs[i];
        *ptrs[i] = saved + step;
        const double up = objective(work);
        *ptrs[i] = saved - step;
        const double down = objective(work);
        *ptrs[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double rel = std::abs(a[i] - numeric) / std::max({std::abs(a[i]), std::abs(numeric), floor});
        ++rep.checked;
        if (rel > rep.worst_rel) {
            rep.worst_rel = rel;
            rep.worst_where = "scalar " + std::to_string(i) + " analytic " + std::to_string(a[i]) + " numeric " +
                              std::to_string(numeric);
        }
    }
    return rep;
}

Model random_small_model(std::uint64_t seed, int input_dim, std::vector<int> hidden, int feature_dim, int k,
                         double head_scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto layer = [&](int in, int out, double scale) {
        Layer l{Matrix(static_cast<std::size_t>(out), static_cast<std::size_t>(in)),
                std::vector<double>(static_cast<std::size_t>(out))};
        for (auto& v : l.weights.data) v = scale * n01(rng) / std::sqrt(static_cast<double>(in));
        for (auto& v : l.bias) v = 0.1 * n01(rng);
        return l;
    };
    Model m;
    int prev = input_dim;
    for (int h : hidden) {
        m.generator.push_back(layer(prev, h, 1.0));
        prev = h;
    }
    m.generator.push_back(layer(prev, feature_dim, 1.0));
    m.head_s = layer(feature_dim, k, head_scale);
    m.head_t = layer(feature_dim, k, head_scale);
    return m;
}

}  // namespace refimpl

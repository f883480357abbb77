#include "dualcan/nic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dualcan/errors.hpp"

namespace dualcan::nic {

std::size_t trusted_count(std::size_t n, double p) {
    const double raw = static_cast<double>(n) * p;
    const double snapped = std::abs(raw - std::round(raw)) < 1e-9 ? std::round(raw) : std::ceil(raw);
    return std::clamp<std::size_t>(static_cast<std::size_t>(snapped), 1, n);
}

TrustSplit split_small_loss(std::span<const double> losses, double p) {
    const std::size_t n = losses.size();
    if (n < 2) throw ParameterError("small-loss split needs at least two instances");
    if (!(p > 0.0 && p < 1.0)) throw ParameterError("separation ratio must lie in (0,1)");
    for (double l : losses) {
        if (!std::isfinite(l)) throw NumericError("non-finite loss in small-loss split");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return losses[a] < losses[b]; });

    const std::size_t cut = trusted_count(n, p);
    TrustSplit split;
    split.gamma = losses[order[cut - 1]];
    split.losses.assign(losses.begin(), losses.end());
    split.trusted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    split.untrusted.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    std::sort(split.trusted.begin(), split.trusted.end());
    std::sort(split.untrusted.begin(), split.untrusted.end());
    return split;
}

bool ClusterModel::any_nonempty() const noexcept {
    return std::find(empty_mask.begin(), empty_mask.end(), false) != empty_mask.end();
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

ClusterModel build_clusters(const Matrix& trusted_features, std::span<const ClassId> trusted_labels,
                            int num_classes, double radius_percentile) {
    const std::size_t n = trusted_features.rows;
    const std::size_t m = trusted_features.cols;
    if (num_classes < 1) throw ParameterError("num_classes must be positive");
    if (trusted_labels.size() != n) throw ShapeError("trusted label count does not match feature rows");
    if (!(radius_percentile > 0.0 && radius_percentile <= 100.0)) {
        throw ParameterError("radius percentile must lie in (0,100]");
    }
    const auto k_count = static_cast<std::size_t>(num_classes);
    ClusterModel c;
    c.centroids = Matrix(k_count, m, 0.0);
    c.radii.assign(k_count, 0.0);
    c.members.assign(k_count, {});
    c.empty_mask.assign(k_count, true);

    for (std::size_t i = 0; i < n; ++i) {
        const ClassId y = trusted_labels[i];
        if (y < 0 || y >= num_classes) throw ParameterError("trusted label " + std::to_string(y) + " out of range");
        c.members[static_cast<std::size_t>(y)].push_back(i);
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        const auto& mem = c.members[k];
        auto mu = c.centroids.row(k);
        if (mem.empty()) {
            std::fill(mu.begin(), mu.end(), std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        c.empty_mask[k] = false;
        for (std::size_t i : mem) {
            const auto z = trusted_features.row(i);
            for (std::size_t j = 0; j < m; ++j) mu[j] += z[j];
        }
        for (std::size_t j = 0; j < m; ++j) mu[j] /= static_cast<double>(mem.size());

        std::vector<double> dist;
        dist.reserve(mem.size());
        for (std::size_t i : mem) dist.push_back(euclidean(trusted_features.row(i), mu));
        if (radius_percentile >= 100.0) {
            c.radii[k] = *std::max_element(dist.begin(), dist.end());
        } else {
            std::sort(dist.begin(), dist.end());
            const auto rank = static_cast<std::size_t>(std::ceil(radius_percentile / 100.0 * dist.size()));
            c.radii[k] = dist[std::clamp<std::size_t>(rank, 1, dist.size()) - 1];
        }
    }
    return c;
}

Assignment nearest_cluster(std::span<const double> z, const ClusterModel& clusters) {
    if (z.size() != clusters.centroids.cols) throw ShapeError("feature width does not match centroids");
    std::optional<Assignment> best;
    for (std::size_t k = 0; k < clusters.num_classes(); ++k) {
        if (clusters.empty_mask[k]) continue;
        const double d = euclidean(z, clusters.centroids.row(k));
        if (!best || d < best->distance) best = Assignment{static_cast<ClassId>(k), d};
    }
    if (!best) throw StateError("all clusters are empty");
    return *best;
}

const char* to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::Clean: return "clean";
        case Verdict::FeatureNoise: return "feature_noise";
        case Verdict::LabelNoise: return "label_noise";
    }
    return "?";
}

Identification identify(std::span<const double> z, ClassId observed_label, const ClusterModel& clusters) {
    const auto a = nearest_cluster(z, clusters);
    const double r = clusters.radii[static_cast<std::size_t>(a.cluster)];
    Verdict v = Verdict::Clean;
    if (a.distance > r) {
        v = Verdict::FeatureNoise;
    } else if (observed_label != a.cluster) {
        v = Verdict::LabelNoise;
    }
    return {v, a.cluster, a.distance};
}

std::vector<double> correct_feature(std::span<const double> z, std::span<const double> centroid, double eta) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta must lie in [0,1]");
    if (z.size() != centroid.size()) throw ShapeError("feature and centroid widths differ");
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = (1.0 - eta) * z[j] + eta * centroid[j];
    return out;
}

double eta_schedule(int epoch, int total_epochs, double eta0) {
    if (total_epochs <= 0) throw ParameterError("total_epochs must be positive");
    if (epoch < 0 || epoch > total_epochs) throw ParameterError("epoch outside [0, total_epochs]");
    if (!(eta0 >= 0.0 && eta0 <= 1.0)) throw ParameterError("eta0 must lie in [0,1]");
    return eta0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

std::vector<double> instance_losses(const model::Model& model, model::Head head, const Matrix& inputs,
                                    std::span<const ClassId> labels) {
    if (labels.size() != inputs.rows) throw ShapeError("label count does not match rows");
    std::vector<double> losses(inputs.rows);
    for (std::size_t i = 0; i < inputs.rows; ++i) {
        losses[i] = model::cross_entropy(model::predict(model, head, inputs.row(i)), labels[i]);
    }
    return losses;
}

namespace {

// Clusters from the trusted part; a class with no trusted member is seeded by
// its lowest-loss instance carrying that label, if any.
ClusterModel clusters_for_split(const Matrix& feats, std::span<const ClassId> labels, const TrustSplit& split,
                                int num_classes, double radius_percentile) {
    std::vector<std::size_t> seeds = split.trusted;
    std::vector<bool> covered(static_cast<std::size_t>(num_classes), false);
    for (auto i : split.trusted) covered[static_cast<std::size_t>(labels[i])] = true;
    for (int k = 0; k < num_classes; ++k) {
        if (covered[static_cast<std::size_t>(k)]) continue;
        std::optional<std::size_t> best;
        for (auto i : split.untrusted) {
            if (labels[i] != k) continue;
            if (!best || split.losses[i] < split.losses[*best]) best = i;
        }
        if (best) seeds.push_back(*best);
    }
    std::sort(seeds.begin(), seeds.end());

    std::vector<ClassId> seed_labels;
    seed_labels.reserve(seeds.size());
    for (auto i : seeds) seed_labels.push_back(labels[i]);
    auto clusters = build_clusters(select_rows(feats, seeds), seed_labels, num_classes, radius_percentile);
    for (auto& mem : clusters.members) {
        for (auto& pos : mem) pos = seeds[pos];
    }
    if (!clusters.any_nonempty()) throw StateError("all clusters empty after fallback");
    return clusters;
}

// A fallback seed is already a member of its cluster.
void add_member(std::vector<std::size_t>& members, std::size_t i) {
    if (std::find(members.begin(), members.end(), i) == members.end()) members.push_back(i);
}

void check_labels(std::span<const ClassId> labels, std::size_t rows, std::size_t num_classes) {
    if (labels.size() != rows) throw ShapeError("label count does not match rows");
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw ParameterError("label out of range");
    }
}

}  // namespace

SourceCorrection nic_source(const Matrix& inputs, std::span<const ClassId> observed_labels,
                            const model::Model& model, const NicOptions& options) {
    const auto num_classes = model.num_classes();
    check_labels(observed_labels, inputs.rows, num_classes);
    if (!(options.eta >= 0.0 && options.eta <= 1.0)) throw ParameterError("eta must lie in [0,1]");
    if (!model.all_finite()) throw NumericError("model has non-finite parameters");

    SourceCorrection out;
    const auto losses = instance_losses(model, model::Head::Source, inputs, observed_labels);
    out.split = split_small_loss(losses, options.separation_ratio);
    const Matrix feats = features(model, inputs);
    out.clusters = clusters_for_split(feats, observed_labels, out.split, static_cast<int>(num_classes),
                                      options.radius_percentile);

    out.labels.assign(observed_labels.begin(), observed_labels.end());
    out.features.assign(inputs.rows, std::nullopt);
    out.records.reserve(out.split.untrusted.size());
    for (auto i : out.split.untrusted) {
        const auto z = feats.row(i);
        const auto id = identify(z, observed_labels[i], out.clusters);
        const auto k = static_cast<std::size_t>(id.cluster);
        CorrectionRecord rec;
        rec.index = i;
        rec.verdict = id.verdict;
        rec.assigned_cluster = id.cluster;
        rec.distance = id.distance;
        rec.radius = out.clusters.radii[k];
        rec.corrected_label = observed_labels[i];
        if (id.verdict == Verdict::LabelNoise && options.label_correction) rec.corrected_label = id.cluster;
        if (id.verdict == Verdict::FeatureNoise && options.feature_correction) {
            rec.corrected_feature = correct_feature(z, out.clusters.centroids.row(k), options.eta);
            rec.eta_used = options.eta;
        }
        out.labels[i] = rec.corrected_label;
        out.features[i] = rec.corrected_feature;
        add_member(out.clusters.members[k], i);
        out.records.push_back(std::move(rec));
    }
    return out;
}

TargetCorrection nic_target(const Matrix& inputs, std::span<const ClassId> pseudo_labels,
                            const model::Model& model, double separation_ratio, double radius_percentile,
                            const ClusterModel* shared_clusters) {
    const auto num_classes = model.num_classes();
    check_labels(pseudo_labels, inputs.rows, num_classes);
    if (!model.all_finite()) throw NumericError("model has non-finite parameters");

    TargetCorrection out;
    const auto losses = instance_losses(model, model::Head::Target, inputs, pseudo_labels);
    out.split = split_small_loss(losses, separation_ratio);
    const Matrix feats = features(model, inputs);
    out.clusters = shared_clusters ? *shared_clusters
                                   : clusters_for_split(feats, pseudo_labels, out.split,
                                                        static_cast<int>(num_classes), radius_percentile);

    out.labels.assign(pseudo_labels.begin(), pseudo_labels.end());
    out.records.reserve(out.split.untrusted.size());
    for (auto i : out.split.untrusted) {
        const auto a = nearest_cluster(feats.row(i), out.clusters);
        const auto k = static_cast<std::size_t>(a.cluster);
        CorrectionRecord rec;
        rec.index = i;
        rec.verdict = Verdict::LabelNoise;
        rec.assigned_cluster = a.cluster;
        rec.distance = a.distance;
        rec.radius = out.clusters.radii[k];
        rec.corrected_label = a.cluster;
        out.labels[i] = a.cluster;
        if (!shared_clusters) add_member(out.clusters.members[k], i);
        out.records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace dualcan::nic

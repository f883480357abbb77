#include "dualcan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dualcan/errors.hpp"
#include "dualcan/rng.hpp"

namespace dualcan::trainer {

namespace {

enum StreamTag : std::uint64_t { kModelInit = 1, kWarmup = 2, kForward = 3, kBackward = 4, kAugment = 5 };

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, int batch_size, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    const auto bs = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start < n; start += bs) {
        const auto end = std::min(n, start + bs);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

template <typename T>
std::vector<T> gather(std::span<const T> values, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(values[i]);
    return out;
}

model::Model checked_step(const model::Model& m, const model::LossAndGrad& lg, double lr, double momentum,
                          model::SgdState& opt) {
    if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
    auto next = model::sgd_step(m, lg.grads, lr, momentum, opt);
    if (!next.all_finite()) throw NumericError("parameters became non-finite");
    return next;
}

}  // namespace

void validate(const TrainConfig& c) {
    if (c.max_epochs < 1) throw ParameterError("max_epochs must be >= 1");
    if (c.warmup_epochs < 0) throw ParameterError("warmup_epochs must be >= 0");
    if (c.warmup_epochs >= c.max_epochs) throw ParameterError("warmup_epochs must be < max_epochs");
    if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ParameterError("lr must be finite and >= 0");
    if (!(c.lr_decay_factor > 0.0 && c.lr_decay_factor <= 1.0)) throw ParameterError("lr_decay_factor must lie in (0,1]");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ParameterError("momentum must lie in [0,1)");
    if (c.batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (!(c.separation_ratio > 0.0 && c.separation_ratio < 1.0)) throw ParameterError("separation_ratio must lie in (0,1)");
    if (!(c.eta0 >= 0.0 && c.eta0 <= 1.0)) throw ParameterError("eta0 must lie in [0,1]");
    if (!(c.consistency_weight >= 0.0) || !std::isfinite(c.consistency_weight)) {
        throw ParameterError("consistency_weight must be finite and >= 0");
    }
    if (!(c.radius_percentile > 0.0 && c.radius_percentile <= 100.0)) {
        throw ParameterError("radius_percentile must lie in (0,100]");
    }
    model::validate(c.augment);
}

double learning_rate(const TrainConfig& c, int epoch) {
    const int step = c.max_epochs / 3;
    if (step == 0) return c.lr;
    return c.lr * std::pow(c.lr_decay_factor, epoch / step);
}

double eta_for_epoch(const TrainConfig& c, int epoch) {
    return nic::eta_schedule(epoch, std::max(1, c.max_epochs - 1), c.eta0);
}

NicCounts count_verdicts(std::span<const nic::CorrectionRecord> records) {
    NicCounts n;
    for (const auto& r : records) {
        switch (r.verdict) {
            case nic::Verdict::Clean: ++n.clean; break;
            case nic::Verdict::FeatureNoise: ++n.feature_noise; break;
            case nic::Verdict::LabelNoise: ++n.label_noise; break;
        }
    }
    return n;
}

std::vector<ClassId> pseudo_label(const model::Model& model, const Matrix& target_features) {
    std::vector<ClassId> labels(target_features.rows);
    for (std::size_t i = 0; i < target_features.rows; ++i) {
        labels[i] = model::argmax(model::predict(model, model::Head::Source, target_features.row(i)));
    }
    return labels;
}

WarmupResult warmup(const model::Model& model, const Matrix& source_x, std::span<const ClassId> observed,
                    const TrainConfig& config, model::SgdState& optimizer) {
    WarmupResult out{model, {}};
    const std::span<const ClassId> labels = observed;
    for (int e = 0; e < config.warmup_epochs; ++e) {
        double total = 0.0;
        const auto batches = shuffled_batches(source_x.rows, config.batch_size,
                                              derive_seed(config.seed, {kWarmup, static_cast<std::uint64_t>(e)}));
        for (const auto& b : batches) {
            const auto y = gather(labels, b);
            const auto lg = model::loss_grad_supervised(out.model, model::Head::Source, select_rows(source_x, b), y);
            out.model = checked_step(out.model, lg, config.lr, config.momentum, optimizer);
            total += lg.loss * static_cast<double>(b.size());
        }
        out.epoch_losses.push_back(total / static_cast<double>(source_x.rows));
    }
    out.model.head_t = out.model.head_s;
    return out;
}

StepResult st_step(const model::Model& model, const Matrix& target_x, const TrainConfig& config, int epoch,
                   model::SgdState& optimizer, const nic::ClusterModel* shared_clusters) {
    StepResult out{model, pseudo_label(model, target_x), {}, {}, 0.0, 0.0};
    out.labels_used = out.pseudo_labels;
    if (config.ablation.target_correction) {
        auto tc = nic::nic_target(target_x, out.pseudo_labels, model, config.separation_ratio,
                                  config.radius_percentile, shared_clusters);
        out.labels_used = std::move(tc.labels);
        out.records = std::move(tc.records);
    }

    const double lr = learning_rate(config, epoch);
    const auto ep = static_cast<std::uint64_t>(epoch);
    const auto batches = shuffled_batches(target_x.rows, config.batch_size, derive_seed(config.seed, {kForward, ep}));
    const std::span<const ClassId> labels = out.labels_used;
    double total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const auto& b = batches[bi];
        const auto batch = model::make_target_batch(select_rows(target_x, b), gather(labels, b), config.augment,
                                                    derive_seed(config.seed, {kAugment, ep, bi}));
        const auto lg = model::loss_grad_target(out.model, batch, config.consistency_weight);
        out.model = checked_step(out.model, lg, lr, config.momentum, optimizer);
        total += lg.loss * static_cast<double>(b.size());
    }
    out.train_loss = total / static_cast<double>(target_x.rows);
    return out;
}

StepResult ts_step(const model::Model& model, const Matrix& source_x, std::span<const ClassId> observed,
                   const TrainConfig& config, int epoch, model::SgdState& optimizer) {
    StepResult out{model, {}, {observed.begin(), observed.end()}, {}, 0.0, 0.0};
    std::vector<std::optional<model::FeatureCorrection>> corrections;
    const auto& ab = config.ablation;
    if (ab.source_correction) {
        nic::NicOptions opts;
        opts.separation_ratio = config.separation_ratio;
        opts.eta = ab.feature_correction ? eta_for_epoch(config, epoch) : 0.0;
        opts.feature_correction = ab.feature_correction;
        opts.label_correction = ab.label_correction;
        opts.radius_percentile = config.radius_percentile;
        auto sc = nic::nic_source(source_x, observed, model, opts);
        out.eta = opts.eta;
        out.labels_used = std::move(sc.labels);
        corrections.assign(source_x.rows, std::nullopt);
        for (const auto& r : sc.records) {
            if (!r.corrected_feature) continue;
            const auto mu = sc.clusters.centroids.row(static_cast<std::size_t>(r.assigned_cluster));
            corrections[r.index] = model::FeatureCorrection{{mu.begin(), mu.end()}, r.eta_used};
        }
        out.records = std::move(sc.records);
    }

    const double lr = learning_rate(config, epoch);
    const auto batches = shuffled_batches(source_x.rows, config.batch_size,
                                          derive_seed(config.seed, {kBackward, static_cast<std::uint64_t>(epoch)}));
    const std::span<const ClassId> labels = out.labels_used;
    double total = 0.0;
    for (const auto& b : batches) {
        model::SourceBatch batch{select_rows(source_x, b), gather(labels, b), {}};
        if (!corrections.empty()) {
            batch.corrections = gather(std::span<const std::optional<model::FeatureCorrection>>(corrections), b);
        }
        const auto lg = model::loss_grad_source(out.model, batch);
        out.model = checked_step(out.model, lg, lr, config.momentum, optimizer);
        total += lg.loss * static_cast<double>(b.size());
    }
    out.train_loss = total / static_cast<double>(source_x.rows);
    return out;
}

RunResult run(const TrainConfig& config, const datagen::NoisyDataset& source, const datagen::NoisyDataset& target,
              std::span<EpochObserver* const> observers) {
    validate(config);
    if (!source.has_observed_labels()) throw StateError("source dataset has no observed labels");
    if (source.dim() != target.dim()) throw ShapeError("source and target feature dims differ");
    if (source.num_classes() != target.num_classes()) throw ShapeError("source and target class counts differ");
    if (source.size() < 2 || target.size() < 2) throw ParameterError("datasets need at least two instances");

    model::ModelConfig mc = config.model;
    mc.input_dim = static_cast<int>(source.dim());
    mc.num_classes = source.num_classes();
    mc.seed = derive_seed(config.seed, {kModelInit});

    const Matrix& xs = source.features();
    const Matrix& xt = target.features();
    const std::span<const ClassId> observed = *source.observed_labels();

    RunResult result;
    result.model = model::init_model(mc);
    model::SgdState source_opt;
    model::SgdState target_opt;
    try {
        auto w = warmup(result.model, xs, observed, config, source_opt);
        result.model = std::move(w.model);
        result.warmup_losses = std::move(w.epoch_losses);

        for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
            std::optional<nic::ClusterModel> shared;
            if (config.ablation.target_correction && config.target_clusters == TargetClusters::Source) {
                nic::NicOptions opts;
                opts.separation_ratio = config.separation_ratio;
                opts.radius_percentile = config.radius_percentile;
                shared = nic::nic_source(xs, observed, result.model, opts).clusters;
            }
            auto st = st_step(result.model, xt, config, epoch, target_opt, shared ? &*shared : nullptr);
            result.model = st.model;
            auto ts = ts_step(result.model, xs, observed, config, epoch, source_opt);
            result.model = ts.model;

            EpochMetrics m;
            m.epoch = epoch;
            m.source_train_loss = ts.train_loss;
            m.target_train_loss = st.train_loss;
            m.source_counts = count_verdicts(ts.records);
            m.target_counts = count_verdicts(st.records);
            m.detected_source_noise_ratio =
                static_cast<double>(m.source_counts.feature_noise + m.source_counts.label_noise) /
                static_cast<double>(xs.rows);
            m.eta = ts.eta;
            m.lr = learning_rate(config, epoch);

            EpochSnapshot snap{epoch, &result.model, st.pseudo_labels, st.labels_used, ts.labels_used,
                               ts.records, st.records};
            for (auto* obs : observers) obs->on_epoch(snap, m);
            result.history.push_back(m);
        }
    } catch (const NumericError& e) {
        result.aborted = true;
        result.error = e.what();
    }
    return result;
}

}  // namespace dualcan::trainer

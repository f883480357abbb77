#include "dualcan/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "dualcan/csv.hpp"
#include "dualcan/errors.hpp"
#include "dualcan/ground_truth.hpp"
#include "dualcan/rng.hpp"

namespace dualcan::eval {

using datagen::GroundTruth;

namespace {

std::size_t vi(nic::Verdict v) { return static_cast<std::size_t>(v); }

constexpr std::array<nic::Verdict, 3> kVerdicts{nic::Verdict::Clean, nic::Verdict::FeatureNoise,
                                                nic::Verdict::LabelNoise};

double mismatch_ratio(std::span<const ClassId> a, std::span<const ClassId> b) {
    if (a.size() != b.size()) throw ShapeError("label vectors differ in length");
    if (a.empty()) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < a.size(); ++i) wrong += a[i] != b[i];
    return static_cast<double>(wrong) / static_cast<double>(a.size());
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

double accuracy(const model::Model& model, model::Head head, const Matrix& features,
                std::span<const ClassId> clean_labels) {
    if (features.rows == 0) throw ParameterError("accuracy of an empty set");
    if (clean_labels.size() != features.rows) throw ShapeError("label count does not match rows");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < features.rows; ++i) {
        hits += model::argmax(model::predict(model, head, features.row(i))) == clean_labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(features.rows);
}

double accuracy(const model::Model& model, model::Head head, const datagen::NoisyDataset& dataset) {
    return accuracy(model, head, dataset.features(), GroundTruth::clean_labels(dataset));
}

nic::Verdict ground_truth_verdict(const datagen::NoiseFlags& flags) noexcept {
    if (flags.label_corrupted) return nic::Verdict::LabelNoise;
    if (flags.feature_corrupted) return nic::Verdict::FeatureNoise;
    return nic::Verdict::Clean;
}

VerdictQuality verdict_quality(std::span<const nic::CorrectionRecord> records,
                               std::span<const datagen::NoiseFlags> flags) {
    VerdictQuality q;
    for (const auto& r : records) {
        if (r.index >= flags.size()) throw ParameterError("record index outside flag range");
        const auto truth = vi(ground_truth_verdict(flags[r.index]));
        const auto said = vi(r.verdict);
        ++q.confusion[truth][said];
        ++q.truth_counts[truth];
        ++q.verdict_counts[said];
    }
    for (std::size_t v = 0; v < 3; ++v) {
        if (q.verdict_counts[v] > 0) {
            q.precision[v] = static_cast<double>(q.confusion[v][v]) / static_cast<double>(q.verdict_counts[v]);
        }
        if (q.truth_counts[v] > 0) {
            q.recall[v] = static_cast<double>(q.confusion[v][v]) / static_cast<double>(q.truth_counts[v]);
        }
    }
    return q;
}

VerdictQuality verdict_quality(std::span<const nic::CorrectionRecord> records, const datagen::NoisyDataset& dataset) {
    return verdict_quality(records, GroundTruth::flags(dataset));
}

std::string VerdictQuality::to_csv() const {
    std::ostringstream out;
    out << "truth,pred_clean,pred_feature_noise,pred_label_noise,count,precision,recall\n";
    for (auto v : kVerdicts) {
        const auto i = vi(v);
        out << nic::to_string(v) << ',' << confusion[i][0] << ',' << confusion[i][1] << ',' << confusion[i][2] << ','
            << truth_counts[i] << ',' << opt_text(precision[i]) << ',' << opt_text(recall[i]) << '\n';
    }
    return out.str();
}

CorrectionCurves correction_curves(std::span<const trainer::EpochMetrics> history) {
    if (history.empty()) throw ParameterError("correction curves need a non-empty history");
    CorrectionCurves c;
    for (const auto& m : history) {
        c.points.push_back({m.epoch, m.residual_source_noise_ratio, m.pseudo_label_error, m.detected_source_noise_ratio});
    }
    c.residual_delta = c.points.back().residual_source_noise_ratio - c.points.front().residual_source_noise_ratio;
    c.pseudo_label_delta = c.points.back().pseudo_label_error - c.points.front().pseudo_label_error;
    return c;
}

std::string CorrectionCurves::to_csv() const {
    std::ostringstream out;
    out << "epoch,residual_source_noise_ratio,pseudo_label_error,detected_source_noise_ratio\n";
    for (const auto& p : points) {
        out << p.epoch << ',' << format_double(p.residual_source_noise_ratio) << ','
            << format_double(p.pseudo_label_error) << ',' << format_double(p.detected_source_noise_ratio) << '\n';
    }
    return out.str();
}

DistanceHistogram distance_histogram(const Matrix& inputs, const model::Model& model,
                                     const nic::ClusterModel& clusters, std::span<const datagen::NoiseFlags> flags,
                                     int bins) {
    if (bins < 1) throw ParameterError("histogram needs at least one bin");
    if (flags.size() != inputs.rows) throw ShapeError("flag count does not match rows");
    const Matrix feats = model::features(model, inputs);
    std::vector<double> dist(inputs.rows);
    double top = 0.0;
    for (std::size_t i = 0; i < inputs.rows; ++i) {
        dist[i] = nic::nearest_cluster(feats.row(i), clusters).distance;
        top = std::max(top, dist[i]);
    }
    const std::size_t nb = top > 0.0 ? static_cast<std::size_t>(bins) : 1;
    DistanceHistogram h;
    h.edges.resize(nb + 1);
    for (std::size_t b = 0; b <= nb; ++b) h.edges[b] = top * static_cast<double>(b) / static_cast<double>(nb);
    std::array<double, 3> sums{};
    for (auto& c : h.counts) c.assign(nb, 0);
    for (std::size_t i = 0; i < inputs.rows; ++i) {
        const auto g = vi(ground_truth_verdict(flags[i]));
        std::size_t b = 0;
        if (top > 0.0) b = std::min(nb - 1, static_cast<std::size_t>(dist[i] / top * static_cast<double>(nb)));
        ++h.counts[g][b];
        ++h.group_sizes[g];
        sums[g] += dist[i];
    }
    for (std::size_t g = 0; g < 3; ++g) {
        if (h.group_sizes[g] > 0) h.mean_distance[g] = sums[g] / static_cast<double>(h.group_sizes[g]);
    }
    return h;
}

DistanceHistogram distance_histogram(const datagen::NoisyDataset& dataset, const model::Model& model,
                                     const nic::ClusterModel& clusters, int bins) {
    return distance_histogram(dataset.features(), model, clusters, GroundTruth::flags(dataset), bins);
}

std::string DistanceHistogram::to_csv() const {
    std::ostringstream out;
    out << "bin_lo,bin_hi,clean,feature_noise,label_noise\n";
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        out << format_double(edges[b]) << ',' << format_double(edges[b + 1]) << ',' << counts[0][b] << ','
            << counts[1][b] << ',' << counts[2][b] << '\n';
    }
    return out.str();
}

GroundTruthProbe::GroundTruthProbe(const datagen::NoisyDataset& source, const datagen::NoisyDataset& target)
    : source_(source), target_(target) {}

void GroundTruthProbe::on_epoch(const trainer::EpochSnapshot& snap, trainer::EpochMetrics& m) {
    m.source_accuracy = accuracy(*snap.model, model::Head::Source, source_);
    m.target_accuracy = accuracy(*snap.model, model::Head::Target, target_);
    m.residual_source_noise_ratio = mismatch_ratio(snap.source_labels_used, GroundTruth::clean_labels(source_));
    m.pseudo_label_error = mismatch_ratio(snap.target_labels_used, GroundTruth::clean_labels(target_));
}

trainer::RunResult run_scored(const trainer::TrainConfig& config, const datagen::NoisyDataset& source,
                              const datagen::NoisyDataset& target,
                              std::span<trainer::EpochObserver* const> extra_observers) {
    GroundTruthProbe probe(source, target);
    std::vector<trainer::EpochObserver*> observers{&probe};
    observers.insert(observers.end(), extra_observers.begin(), extra_observers.end());
    return trainer::run(config, source, target, observers);
}

std::vector<Method> ablation_presets() {
    using trainer::Ablation;
    Ablation no_feature;
    no_feature.feature_correction = false;
    Ablation no_label;
    no_label.label_correction = false;
    Ablation no_source;
    no_source.source_correction = false;
    Ablation no_target;
    no_target.target_correction = false;
    return {{"full", Ablation::full()},
            {"wo_feature_correction", no_feature},
            {"wo_label_correction", no_label},
            {"wo_source_correction", no_source},
            {"wo_target_correction", no_target}};
}

Method baseline_method() { return {"no_correction", trainer::Ablation::none()}; }

std::optional<Method> method_by_name(const std::string& name) {
    for (auto& m : ablation_presets()) {
        if (m.name == name) return m;
    }
    if (name == baseline_method().name) return baseline_method();
    return std::nullopt;
}

ExperimentSpec reference_experiment() {
    ExperimentSpec e;
    e.domain.num_classes = 3;
    e.domain.feature_dim = 2;
    e.domain.samples_per_class = 200;
    e.domain.class_center_scale = 3.0;
    e.domain.class_spread = 1.0;
    e.domain.shift_rotation = std::numbers::pi / 6.0;
    e.domain.shift_translation = {0.5, 0.5};
    e.domain.seed = 20240601;
    e.noise.kind = datagen::NoiseKind::Mixed;
    e.noise.p_noise = 0.4;
    e.noise.feature_noise_sigma = 2.0;
    e.noise.feature_mask_fraction = 0.5;
    e.noise.seed = 20240602;
    e.train.seed = 20240603;
    return e;
}

Replicate make_replicate(const ExperimentSpec& base, double noise_level, std::uint64_t seed) {
    auto domain = base.domain;
    domain.seed = derive_seed(base.domain.seed, {seed});
    auto pair = datagen::make_domain_pair(domain);
    auto noise = base.noise;
    noise.p_noise = noise_level;
    noise.seed = derive_seed(base.noise.seed, {seed});
    Replicate r{datagen::corrupt(pair.source, noise), std::move(pair.target), base.train};
    if (base.target_noise) {
        auto tn = *base.target_noise;
        tn.seed = derive_seed(tn.seed, {seed});
        r.target = datagen::corrupt(r.target, tn);
    }
    r.train.seed = derive_seed(base.train.seed, {seed});
    return r;
}

CellResult run_cell(const ExperimentSpec& base, double level, const Method& method, std::uint64_t seed) {
    CellResult cell;
    cell.level = level;
    cell.method = method.name;
    cell.seed = seed;
    try {
        auto rep = make_replicate(base, level, seed);
        rep.train.ablation = method.ablation;
        auto result = run_scored(rep.train, rep.source, rep.target);
        cell.history = std::move(result.history);
        if (result.aborted) {
            cell.error = result.error;
        } else {
            cell.ok = true;
            cell.final_metrics = cell.history.back();
        }
    } catch (const std::exception& e) {
        cell.error = e.what();
    }
    return cell;
}

namespace {

template <typename Job>
void run_parallel(std::size_t count, int jobs, Job&& job) {
    const auto workers = static_cast<std::size_t>(std::clamp<int>(jobs, 1, 64));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) job(i);
        });
    }
}

Aggregate aggregate_cells(std::span<const CellResult> cells, double level, const std::string& method) {
    Aggregate a;
    a.level = level;
    a.method = method;
    double sum = 0.0;
    for (const auto& c : cells) {
        if (c.ok) {
            ++a.n_ok;
            sum += c.final_metrics.target_accuracy;
        } else {
            ++a.n_failed;
        }
    }
    a.complete = a.n_failed == 0 && a.n_ok > 0;
    if (a.n_ok == 0) return a;
    a.mean = sum / static_cast<double>(a.n_ok);
    if (a.n_ok > 1) {
        double ss = 0.0;
        for (const auto& c : cells) {
            if (c.ok) ss += (c.final_metrics.target_accuracy - a.mean) * (c.final_metrics.target_accuracy - a.mean);
        }
        a.stddev = std::sqrt(ss / static_cast<double>(a.n_ok - 1));
    }
    return a;
}

SweepResult run_grid(const ExperimentSpec& base, std::span<const double> levels, std::span<const Method> methods,
                     std::span<const std::uint64_t> seeds, int jobs) {
    if (levels.empty() || methods.empty() || seeds.empty()) throw ParameterError("sweep grid has an empty axis");
    SweepResult r;
    r.levels.assign(levels.begin(), levels.end());
    for (const auto& m : methods) r.methods.push_back(m.name);
    r.seeds.assign(seeds.begin(), seeds.end());
    const std::size_t per_level = methods.size() * seeds.size();
    r.cells.resize(levels.size() * per_level);
    run_parallel(r.cells.size(), jobs, [&](std::size_t i) {
        const auto li = i / per_level;
        const auto mi = (i % per_level) / seeds.size();
        const auto si = i % seeds.size();
        r.cells[i] = run_cell(base, levels[li], methods[mi], seeds[si]);
    });
    for (std::size_t li = 0; li < levels.size(); ++li) {
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const auto offset = li * per_level + mi * seeds.size();
            r.aggregates.push_back(aggregate_cells(std::span<const CellResult>(r.cells).subspan(offset, seeds.size()),
                                                   levels[li], methods[mi].name));
        }
    }
    return r;
}

}  // namespace

const Aggregate& SweepResult::aggregate(std::size_t level_idx, std::size_t method_idx) const {
    return aggregates.at(level_idx * methods.size() + method_idx);
}

const Aggregate* SweepResult::find(double level, const std::string& method) const {
    for (const auto& a : aggregates) {
        if (a.method == method && std::abs(a.level - level) < 1e-12) return &a;
    }
    return nullptr;
}

bool SweepResult::any_failed() const noexcept {
    return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok; });
}

std::string SweepResult::cells_csv() const {
    std::ostringstream out;
    out << "level,method,seed,status,target_acc,source_acc,src_noise_ratio,pl_error,error\n";
    for (const auto& c : cells) {
        out << format_double(c.level) << ',' << c.method << ',' << c.seed << ',' << (c.ok ? "ok" : "failed") << ',';
        if (c.ok) {
            out << format_double(c.final_metrics.target_accuracy) << ',' << format_double(c.final_metrics.source_accuracy)
                << ',' << format_double(c.final_metrics.residual_source_noise_ratio) << ','
                << format_double(c.final_metrics.pseudo_label_error) << ',';
        } else {
            std::string msg = c.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            out << ",,,," << msg;
        }
        out << '\n';
    }
    return out.str();
}

std::string SweepResult::aggregate_csv() const {
    std::ostringstream out;
    out << "level,method,n_seeds,n_failed,mean_target_acc,std_target_acc\n";
    for (const auto& a : aggregates) {
        out << format_double(a.level) << ',' << a.method << ',' << a.n_ok << ',' << a.n_failed << ','
            << format_double(a.mean) << ',' << format_double(a.stddev) << '\n';
    }
    return out.str();
}

SweepResult noise_sweep(const ExperimentSpec& base, std::span<const double> levels, std::span<const Method> methods,
                        std::span<const std::uint64_t> seeds, int jobs) {
    for (double l : levels) {
        if (!(l >= 0.0 && l <= 1.6 + 1e-12)) throw ParameterError("sweep levels must lie in [0, 1.6]");
    }
    auto mixed = base;
    mixed.noise.kind = datagen::NoiseKind::Mixed;
    return run_grid(mixed, levels, methods, seeds, jobs);
}

SweepResult ablation_battery(const ExperimentSpec& base, std::span<const std::uint64_t> seeds, int jobs) {
    const auto presets = ablation_presets();
    const double level = base.noise.p_noise;
    return run_grid(base, std::span<const double>(&level, 1), presets, seeds, jobs);
}

std::string ablation_table_csv(const SweepResult& battery) {
    std::ostringstream out;
    out << "method,feature_correction,label_correction,source_correction,target_correction,n_seeds,mean_target_acc,"
           "std_target_acc\n";
    for (std::size_t mi = 0; mi < battery.methods.size(); ++mi) {
        const auto& a = battery.aggregate(0, mi);
        const auto m = method_by_name(a.method);
        const auto ab = m ? m->ablation : trainer::Ablation::none();
        out << a.method << ',' << ab.feature_correction << ',' << ab.label_correction << ',' << ab.source_correction
            << ',' << ab.target_correction << ',' << a.n_ok << ',' << format_double(a.mean) << ','
            << format_double(a.stddev) << '\n';
    }
    return out.str();
}

bool AssertionReport::all_passed() const noexcept {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
}

std::string AssertionReport::to_text() const {
    std::ostringstream out;
    for (const auto& a : assertions) {
        out << (a.passed ? "PASS " : "FAIL ") << a.name;
        if (!a.detail.empty()) out << " :: " << a.detail;
        out << '\n';
    }
    out << (all_passed() ? "ALL PASS" : "SOME FAILED") << " (" << assertions.size() << " checks)\n";
    return out.str();
}

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << std::fixed << v;
    return s.str();
}

}  // namespace

AssertionReport sweep_assertions(const SweepResult& sweep) {
    AssertionReport rep;
    std::vector<std::size_t> order(sweep.levels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return sweep.levels[a] < sweep.levels[b]; });
    for (std::size_t mi = 0; mi < sweep.methods.size(); ++mi) {
        for (std::size_t s = 0; s + 1 < order.size(); ++s) {
            const auto& lo = sweep.aggregate(order[s], mi);
            const auto& hi = sweep.aggregate(order[s + 1], mi);
            const double pooled = std::sqrt((lo.stddev * lo.stddev + hi.stddev * hi.stddev) / 2.0);
            Assertion a;
            a.name = "monotone[" + sweep.methods[mi] + "] " + fmt(lo.level) + "->" + fmt(hi.level);
            a.passed = lo.complete && hi.complete && hi.mean <= lo.mean + pooled;
            a.detail = "mean " + fmt(lo.mean) + " -> " + fmt(hi.mean) + ", pooled std " + fmt(pooled);
            rep.assertions.push_back(a);
        }
        if (order.size() >= 2) {
            const auto& first = sweep.aggregate(order.front(), mi);
            const auto& last = sweep.aggregate(order.back(), mi);
            rep.assertions.push_back({"endpoints[" + sweep.methods[mi] + "] acc(" + fmt(first.level) + ") >= acc(" +
                                          fmt(last.level) + ")",
                                      first.complete && last.complete && first.mean >= last.mean,
                                      fmt(first.mean) + " vs " + fmt(last.mean)});
        }
    }
    const auto* full = sweep.find(0.4, "full");
    const auto* base = sweep.find(0.4, baseline_method().name);
    if (full && base) {
        rep.assertions.push_back({"full > no_correction at level 0.4",
                                  full->complete && base->complete && full->mean > base->mean,
                                  fmt(full->mean) + " vs " + fmt(base->mean)});
    }
    return rep;
}

AssertionReport ablation_assertions(const SweepResult& battery) {
    AssertionReport rep;
    const double level = battery.levels.front();
    auto get = [&](const char* name) { return battery.find(level, name); };
    const auto *full = get("full"), *no_src = get("wo_source_correction"), *no_label = get("wo_label_correction"),
               *no_feat = get("wo_feature_correction");
    if (!full || !no_src || !no_label || !no_feat) throw ParameterError("ablation battery is missing rows");
    rep.assertions.push_back({"mean(full) >= mean(wo_source_correction)",
                              full->complete && no_src->complete && full->mean >= no_src->mean,
                              fmt(full->mean) + " vs " + fmt(no_src->mean)});
    rep.assertions.push_back({"mean(wo_label_correction) <= mean(wo_feature_correction)",
                              no_label->complete && no_feat->complete && no_label->mean <= no_feat->mean,
                              fmt(no_label->mean) + " vs " + fmt(no_feat->mean)});
    return rep;
}

AssertionReport curve_assertions(std::span<const CellResult> runs, double injected_label_ratio) {
    AssertionReport rep;
    for (const auto& run : runs) {
        const std::string tag = "[" + run.method + " seed " + std::to_string(run.seed) + "]";
        if (!run.ok) {
            rep.assertions.push_back({"run completed " + tag, false, run.error});
            continue;
        }
        const auto curves = correction_curves(run.history);
        const auto& first = curves.points.front();
        const auto& last = curves.points.back();
        rep.assertions.push_back({"residual source noise < 0.5 x injected " + tag,
                                  last.residual_source_noise_ratio < 0.5 * injected_label_ratio,
                                  fmt(last.residual_source_noise_ratio) + " vs injected " + fmt(injected_label_ratio)});
        rep.assertions.push_back({"pseudo-label error decreases " + tag,
                                  last.pseudo_label_error < first.pseudo_label_error,
                                  fmt(first.pseudo_label_error) + " -> " + fmt(last.pseudo_label_error)});
    }
    return rep;
}

WarmupDiagnosis diagnose_after_warmup(const ExperimentSpec& base, std::uint64_t seed) {
    auto rep = make_replicate(base, base.noise.p_noise, seed);
    auto mc = rep.train.model;
    mc.input_dim = static_cast<int>(rep.source.dim());
    mc.num_classes = rep.source.num_classes();
    mc.seed = derive_seed(rep.train.seed, {1});
    model::SgdState opt;
    const auto warm = trainer::warmup(model::init_model(mc), rep.source.features(), *rep.source.observed_labels(),
                                      rep.train, opt);
    nic::NicOptions opts;
    opts.separation_ratio = rep.train.separation_ratio;
    opts.eta = rep.train.eta0;
    opts.radius_percentile = rep.train.radius_percentile;
    const auto sc = nic::nic_source(rep.source.features(), *rep.source.observed_labels(), warm.model, opts);
    return {distance_histogram(rep.source, warm.model, sc.clusters), verdict_quality(sc.records, rep.source)};
}

}  // namespace dualcan::eval

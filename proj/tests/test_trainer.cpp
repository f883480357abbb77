#include <doctest.h>

#include <cmath>

#include "dualcan/errors.hpp"
#include "dualcan/eval.hpp"
#include "dualcan/ground_truth.hpp"
#include "dualcan/rng.hpp"
#include "dualcan/trainer.hpp"

using namespace dualcan;
using namespace dualcan::trainer;

namespace {

datagen::DomainPair make_pair(std::uint64_t seed, double p_noise, double rotation = 0.5235987755982988,
                              int per_class = 200) {
    datagen::DomainSpec s;
    s.samples_per_class = per_class;
    s.shift_rotation = rotation;
    if (rotation != 0.0) s.shift_translation = {0.5, 0.5};
    s.seed = seed;
    auto pair = datagen::make_domain_pair(s);
    if (p_noise > 0.0) {
        pair.source = datagen::corrupt(pair.source, {p_noise, datagen::NoiseKind::Mixed, 2.0, 0.5, seed + 1});
    }
    return pair;
}

TrainConfig quick_config(std::uint64_t seed, int epochs = 6, int warm = 2) {
    TrainConfig c;
    c.max_epochs = epochs;
    c.warmup_epochs = warm;
    c.seed = seed;
    return c;
}

model::Model fresh_model(const TrainConfig& c, std::size_t d, int k) {
    auto mc = c.model;
    mc.input_dim = static_cast<int>(d);
    mc.num_classes = k;
    mc.seed = derive_seed(c.seed, {1});
    return model::init_model(mc);
}

model::Model warmed(const TrainConfig& c, const datagen::NoisyDataset& src) {
    model::SgdState st;
    return warmup(fresh_model(c, src.dim(), src.num_classes()), src.features(), *src.observed_labels(), c, st).model;
}

double label_noise_ratio(const datagen::NoisyDataset& ds) {
    double n = 0.0;
    for (const auto& f : datagen::GroundTruth::flags(ds)) n += f.label_corrupted;
    return n / static_cast<double>(ds.size());
}

class CountingObserver : public EpochObserver {
public:
    std::vector<int> epochs;
    void on_epoch(const EpochSnapshot& s, EpochMetrics&) override { epochs.push_back(s.epoch); }
};

}  // namespace

TEST_CASE("learning rate decays by the factor at each third") {
    TrainConfig c;
    c.max_epochs = 90;
    CHECK(learning_rate(c, 0) == 2e-3);
    CHECK(learning_rate(c, 29) == 2e-3);
    CHECK(learning_rate(c, 30) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(learning_rate(c, 59) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(learning_rate(c, 60) == doctest::Approx(2e-5).epsilon(1e-12));
    CHECK(learning_rate(c, 89) == doctest::Approx(2e-5).epsilon(1e-12));
    CHECK(c.lr == 2e-3);
}

TEST_CASE("eta and learning rate are non-increasing; eta reaches 0 on the last epoch") {
    for (int epochs : {1, 2, 5, 90}) {
        TrainConfig c;
        c.max_epochs = epochs;
        c.warmup_epochs = 0;
        CHECK(eta_for_epoch(c, 0) == c.eta0);
        if (epochs > 1) CHECK(eta_for_epoch(c, epochs - 1) == 0.0);
        for (int e = 1; e < epochs; ++e) {
            CHECK(eta_for_epoch(c, e) <= eta_for_epoch(c, e - 1));
            CHECK(learning_rate(c, e) <= learning_rate(c, e - 1));
        }
    }
}

TEST_CASE("config validation") {
    auto c = quick_config(1);
    c.warmup_epochs = c.max_epochs;
    CHECK_THROWS_AS(validate(c), ParameterError);
    c = quick_config(1);
    c.separation_ratio = 1.0;
    CHECK_THROWS_AS(validate(c), ParameterError);
    c = quick_config(1);
    c.momentum = 1.0;
    CHECK_THROWS_AS(validate(c), ParameterError);
    c = quick_config(1);
    c.batch_size = 0;
    CHECK_THROWS_AS(validate(c), ParameterError);
    CHECK_NOTHROW(validate(quick_config(1)));
}

TEST_CASE("pseudo labels are the source-head argmax, uniform goes to class 0") {
    const auto pair = make_pair(3, 0.0, 0.0, 20);
    const auto c = quick_config(3);
    auto m = warmed(c, pair.source);
    const auto y = pseudo_label(m, pair.target.features());
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] == model::argmax(model::predict(m, model::Head::Source, pair.target.features().row(i))));
    }
    std::fill(m.head_s.weights.data.begin(), m.head_s.weights.data.end(), 0.0);
    std::fill(m.head_s.bias.begin(), m.head_s.bias.end(), 0.0);
    for (auto v : pseudo_label(m, pair.target.features())) CHECK(v == 0);
}

TEST_CASE("zero warm-up epochs: target head is the initial source head") {
    const auto pair = make_pair(4, 0.4, 0.5, 20);
    auto c = quick_config(4);
    c.warmup_epochs = 0;
    const auto m0 = fresh_model(c, 2, 3);
    model::SgdState st;
    const auto w = warmup(m0, pair.source.features(), *pair.source.observed_labels(), c, st);
    CHECK(w.model.head_s == m0.head_s);
    CHECK(w.model.head_t == m0.head_s);
    CHECK(w.model.generator == m0.generator);
    CHECK(w.epoch_losses.empty());
}

TEST_CASE("warm-up on clean separable data: high accuracy, loss non-increasing within 5%") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto pair = make_pair(seed, 0.0);
        auto c = quick_config(seed, 11, 10);
        model::SgdState st;
        const auto w = warmup(fresh_model(c, 2, 3), pair.source.features(), *pair.source.observed_labels(), c, st);
        CHECK(w.model.head_t == w.model.head_s);
        CHECK(eval::accuracy(w.model, model::Head::Source, pair.source) >= 0.95);
        REQUIRE(w.epoch_losses.size() == 10);
        for (std::size_t e = 1; e < w.epoch_losses.size(); ++e) CHECK(w.epoch_losses[e] <= 1.05 * w.epoch_losses[e - 1]);
    }
}

TEST_CASE("forward step changes only the target head; backward step leaves it alone") {
    const auto pair = make_pair(5, 0.4, 0.5, 30);
    const auto c = quick_config(5);
    const auto m = warmed(c, pair.source);
    model::SgdState opt;
    const auto st = st_step(m, pair.target.features(), c, 0, opt);
    CHECK(st.model.generator == m.generator);
    CHECK(st.model.head_s == m.head_s);
    CHECK_FALSE(st.model.head_t == m.head_t);

    model::SgdState opt2;
    const auto ts = ts_step(st.model, pair.source.features(), *pair.source.observed_labels(), c, 0, opt2);
    CHECK(ts.model.head_t == st.model.head_t);
    CHECK_FALSE(ts.model.head_s == st.model.head_s);
    CHECK_FALSE(ts.model.generator == st.model.generator);
}

TEST_CASE("forward step: records cover the untrusted target set, or nothing when switched off") {
    const auto pair = make_pair(6, 0.4, 0.5, 30);
    auto c = quick_config(6);
    const auto m = warmed(c, pair.source);
    model::SgdState opt;
    const auto on = st_step(m, pair.target.features(), c, 0, opt);
    const auto n = pair.target.size();
    CHECK(on.records.size() == n - nic::trusted_count(n, c.separation_ratio));
    for (const auto& r : on.records) CHECK(on.labels_used[r.index] == r.corrected_label);

    c.ablation.target_correction = false;
    model::SgdState opt2;
    const auto off = st_step(m, pair.target.features(), c, 0, opt2);
    CHECK(off.records.empty());
    CHECK(off.labels_used == off.pseudo_labels);
    CHECK(off.pseudo_labels == pseudo_label(m, pair.target.features()));
}

TEST_CASE("backward step switches") {
    const auto pair = make_pair(7, 0.4, 0.5, 30);
    auto c = quick_config(7);
    const auto m = warmed(c, pair.source);
    const auto& y = *pair.source.observed_labels();

    auto off = c;
    off.ablation.source_correction = false;
    model::SgdState o1;
    const auto raw = ts_step(m, pair.source.features(), y, off, 0, o1);
    CHECK(raw.records.empty());
    CHECK(raw.labels_used == y);

    auto nofeat = c;
    nofeat.ablation.feature_correction = false;
    model::SgdState o2;
    const auto nf = ts_step(m, pair.source.features(), y, nofeat, 0, o2);
    CHECK_FALSE(nf.records.empty());
    for (const auto& r : nf.records) CHECK_FALSE(r.corrected_feature.has_value());

    auto nolabel = c;
    nolabel.ablation.label_correction = false;
    model::SgdState o3;
    const auto nl = ts_step(m, pair.source.features(), y, nolabel, 0, o3);
    CHECK(nl.labels_used == y);

    model::SgdState o4;
    const auto full = ts_step(m, pair.source.features(), y, c, 0, o4);
    CHECK(full.eta == c.eta0);
    CHECK(full.records.size() == y.size() - nic::trusted_count(y.size(), c.separation_ratio));
}

TEST_CASE("all switches off: no correction records at all") {
    const auto pair = make_pair(8, 0.4, 0.5, 30);
    auto c = quick_config(8);
    c.ablation = Ablation::none();
    const auto r = eval::run_scored(c, pair.source, pair.target);
    REQUIRE(r.history.size() == 6);
    for (const auto& m : r.history) {
        CHECK(m.source_counts.total() == 0);
        CHECK(m.target_counts.total() == 0);
        CHECK(m.detected_source_noise_ratio == 0.0);
    }
}

TEST_CASE("runs are bit-reproducible and metrics stay in range") {
    const auto pair = make_pair(9, 0.4, 0.5, 40);
    const auto c = quick_config(9, 8, 3);
    CountingObserver obs;
    EpochObserver* list[] = {&obs};
    const auto a = eval::run_scored(c, pair.source, pair.target, list);
    const auto b = eval::run_scored(c, pair.source, pair.target);
    CHECK_FALSE(a.aborted);
    CHECK(a.history == b.history);
    CHECK(a.model == b.model);
    CHECK(a.warmup_losses == b.warmup_losses);
    CHECK(obs.epochs == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    REQUIRE(a.history.size() == 8);
    for (const auto& m : a.history) {
        for (double v : {m.source_accuracy, m.target_accuracy, m.residual_source_noise_ratio,
                         m.detected_source_noise_ratio, m.pseudo_label_error, m.eta}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(m.eta == eta_for_epoch(c, m.epoch));
        CHECK(m.lr == learning_rate(c, m.epoch));
    }
    auto other = c;
    other.seed = 10;
    CHECK_FALSE(eval::run_scored(other, pair.source, pair.target).history == a.history);
}

TEST_CASE("numeric blow-up aborts with a partial history and a finite model") {
    const auto pair = make_pair(10, 0.4, 0.5, 20);
    auto c = quick_config(10, 4, 1);
    c.lr = 1e300;
    const auto r = run(c, pair.source, pair.target);
    CHECK(r.aborted);
    CHECK_FALSE(r.error.empty());
    CHECK(r.history.size() < 4);
    CHECK(r.model.all_finite());
}

TEST_CASE("run input checks") {
    const auto pair = make_pair(11, 0.0, 0.5, 10);
    CHECK_THROWS_AS(run(quick_config(11), pair.target, pair.target), StateError);
    auto bad = quick_config(11);
    bad.max_epochs = 0;
    CHECK_THROWS_AS(run(bad, pair.source, pair.target), ParameterError);
}

TEST_CASE("clean, unshifted task: target accuracy within 2 points of source accuracy") {
    const auto pair = make_pair(12, 0.0, 0.0);
    auto c = quick_config(12, 30, 10);
    const auto r = eval::run_scored(c, pair.source, pair.target);
    REQUIRE_FALSE(r.aborted);
    const auto& last = r.history.back();
    CHECK(std::abs(last.target_accuracy - last.source_accuracy) <= 0.02);
}

TEST_CASE("converged model on a clean target: corrected pseudo-labels are right for >= 99%") {
    auto pair = make_pair(13, 0.0, 0.0);
    auto c = quick_config(13, 31, 30);
    const auto m = warmed(c, pair.source);
    model::SgdState opt;
    const auto st = st_step(m, pair.target.features(), c, 0, opt);
    const auto clean = datagen::GroundTruth::clean_labels(pair.target);
    double right = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) right += st.labels_used[i] == clean[i];
    CAPTURE(eval::accuracy(m, model::Head::Source, pair.target));
    CHECK(right / static_cast<double>(clean.size()) >= 0.99);
}

TEST_CASE("reference task: final residual label noise is below the injected ratio") {
    const auto ex = eval::reference_experiment();
    const auto rep = eval::make_replicate(ex, ex.noise.p_noise, 1);
    const auto r = eval::run_scored(rep.train, rep.source, rep.target);
    REQUIRE_FALSE(r.aborted);
    CHECK(r.history.back().residual_source_noise_ratio < label_noise_ratio(rep.source));
}

// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dualcan/datagen.hpp"
#include "dualcan/eval.hpp"
#include "dualcan/ground_truth.hpp"
#include "dualcan/nic.hpp"
#include "oracle_cases.hpp"

namespace fs = std::filesystem;
using namespace dualcan;

namespace {

// Tolerances and budgets, fixed here and nowhere else.
constexpr int kOracleCases = 200;
constexpr double kOracleBudget = 5.0;
constexpr int kFdSeeds = 25;
constexpr double kFdStep = 1e-5;
constexpr double kFdTolerance = 1e-4;
constexpr double kFdBudget = 10.0;
constexpr double kEndpointBudget = 1.0;
constexpr std::size_t kCalibrationN = 10000;
constexpr double kCalibrationSigmas = 3.0;
constexpr double kCalibrationBudget = 5.0;
constexpr int kSeeds = 5;
constexpr int kSeedsRequired = 4;
constexpr double kResidualFactor = 0.5;
constexpr double kCurvesBudget = 300.0;
constexpr double kAblationBudget = 900.0;
constexpr double kSweepBudget = 1800.0;
constexpr double kDistanceBudget = 120.0;
constexpr double kDeterminismBudget = 120.0;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

int failures = 0;

void criterion(const char* id, const char* name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        o.pass = false;
        o.detail += "; over budget";
    }
    if (!o.pass) ++failures;
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << name << "  [" << o.detail << "; " << fmt(secs, 3)
              << " s / " << budget_s << " s]" << std::endl;
}

std::vector<std::uint64_t> seeds() {
    std::vector<std::uint64_t> s;
    for (int i = 1; i <= kSeeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
    return s;
}

double injected_label_ratio(const eval::ExperimentSpec& ex) {
    return ex.noise.kind == datagen::NoiseKind::Mixed ? ex.noise.p_noise / 2.0 : ex.noise.p_noise;
}

Outcome oracle_equivalence() {
    int same = 0;
    std::string first_bad;
    for (int s = 0; s < kOracleCases; ++s) {
        const auto why = refimpl::nic_mismatch(refimpl::random_nic_case(static_cast<std::uint64_t>(s)));
        if (why.empty()) {
            ++same;
        } else if (first_bad.empty()) {
            first_bad = " first mismatch seed " + std::to_string(s) + ": " + why;
        }
    }
    return {same == kOracleCases, std::to_string(same) + "/" + std::to_string(kOracleCases) + " bit-identical" + first_bad};
}

Outcome gradient_check() {
    double worst = 0.0;
    std::string where;
    std::size_t checked = 0;
    for (int s = 0; s < kFdSeeds; ++s) {
        const auto r = refimpl::fd_check_seed(static_cast<std::uint64_t>(s), kFdStep);
        checked += r.checked;
        if (r.worst_rel >= worst) {
            worst = r.worst_rel;
            where = r.where;
        }
    }
    return {worst < kFdTolerance, std::to_string(checked) + " partials over " + std::to_string(kFdSeeds) +
                                      " seeds, worst rel " + fmt(worst, 3) + " at " + where};
}

Outcome endpoints_and_boundary() {
    const std::vector<double> z{0.3, -7.25, 1e-3};
    const std::vector<double> mu{2.0, 0.5, -4.0};
    const bool identity = nic::correct_feature(z, mu, 0.0) == z;
    const bool onto = nic::correct_feature(z, mu, 1.0) == mu;
    // class 0 at (0,0),(2,0): centroid (1,0), radius 1; class 1 at (10,0)
    Matrix f(3, 2);
    f(1, 0) = 2.0;
    f(2, 0) = 10.0;
    const auto c = nic::build_clusters(f, std::vector<nic::ClassId>{0, 0, 1}, 2);
    const std::vector<double> edge{1.0, 1.0};
    const std::vector<double> past{1.0, std::nextafter(1.0, 2.0)};
    const bool inclusive = nic::identify(edge, 0, c).verdict == nic::Verdict::Clean &&
                           nic::identify(edge, 1, c).verdict == nic::Verdict::LabelNoise;
    const bool outside = nic::identify(past, 0, c).verdict == nic::Verdict::FeatureNoise;
    return {identity && onto && inclusive && outside, std::string("eta0 identity ") + (identity ? "ok" : "BAD") +
                                                          ", eta1 centroid " + (onto ? "ok" : "BAD") +
                                                          ", dist == r inside " + (inclusive ? "ok" : "BAD") +
                                                          ", just outside " + (outside ? "ok" : "BAD")};
}

Outcome calibration() {
    datagen::DomainSpec d;
    d.num_classes = 4;
    d.samples_per_class = static_cast<int>(kCalibrationN / 4);
    d.seed = 777;
    const auto clean = datagen::make_domain_pair(d).source;
    const double n = static_cast<double>(clean.size());
    bool ok = true;
    std::string worst;
    double worst_z = 0.0;
    auto check_rate = [&](const std::string& what, double got, double p) {
        const double sd = std::sqrt(p * (1.0 - p) / n);
        const double z = sd > 0.0 ? std::abs(got - p) / sd : (got == p ? 0.0 : INFINITY);
        if (z > kCalibrationSigmas) ok = false;
        if (z >= worst_z) {
            worst_z = z;
            worst = what;
        }
    };
    auto rates = [&](const datagen::NoisyDataset& ds, double& label, double& feature) {
        const auto flags = datagen::GroundTruth::flags(ds);
        const auto truth = datagen::GroundTruth::clean_labels(ds);
        const auto& obs = *ds.observed_labels();
        double l = 0.0, f = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            l += flags[i].label_corrupted;
            f += flags[i].feature_corrupted;
            // a flagged label really is wrong, an unflagged one really is right
            if (flags[i].label_corrupted != (obs[i] != truth[i])) ok = false;
        }
        label = l / n;
        feature = f / n;
    };
    std::uint64_t seed = 900;
    for (double p : {0.0, 0.2, 0.4, 0.8, 1.0}) {
        double l = 0.0, f = 0.0;
        rates(datagen::corrupt(clean, {p, datagen::NoiseKind::LabelOnly, 2.0, 0.5, ++seed}), l, f);
        check_rate("label p=" + fmt(p), l, p);
        if (f != 0.0) ok = false;
        rates(datagen::corrupt(clean, {p, datagen::NoiseKind::FeatureOnly, 2.0, 0.5, ++seed}), l, f);
        check_rate("feature p=" + fmt(p), f, p);
        if (l != 0.0) ok = false;
        rates(datagen::corrupt(clean, {p, datagen::NoiseKind::Mixed, 2.0, 0.5, ++seed}), l, f);
        check_rate("mixed label p=" + fmt(p), l, p / 2.0);
        check_rate("mixed feature p=" + fmt(p), f, p / 2.0);
    }
    return {ok, "N=" + std::to_string(clean.size()) + ", worst " + worst + " at " + fmt(worst_z, 3) + " sd (limit " +
                    fmt(kCalibrationSigmas) + "), p=0/1 exact"};
}

Outcome correction_curves(const std::vector<eval::CellResult>& full_runs, double injected) {
    int good = 0;
    std::string per_seed;
    for (const auto& run : full_runs) {
        const auto rep = eval::curve_assertions(std::span(&run, 1), injected);
        good += rep.all_passed();
        if (run.ok) {
            const auto& first = run.history.front();
            const auto& last = run.history.back();
            per_seed += " s" + std::to_string(run.seed) + "(res " + fmt(last.residual_source_noise_ratio, 3) + ", pl " +
                        fmt(first.pseudo_label_error, 3) + "->" + fmt(last.pseudo_label_error, 3) + ")";
        } else {
            per_seed += " s" + std::to_string(run.seed) + "(failed)";
        }
    }
    return {good >= kSeedsRequired, std::to_string(good) + "/" + std::to_string(full_runs.size()) +
                                        " seeds with residual < " + fmt(kResidualFactor * injected) +
                                        " and falling pseudo-label error;" + per_seed};
}

Outcome ablation_direction(const eval::ExperimentSpec& ex) {
    const auto s = seeds();
    const auto battery = eval::ablation_battery(ex, s);
    const auto rep = eval::ablation_assertions(battery);
    std::string detail;
    for (const auto& a : rep.assertions) detail += (detail.empty() ? "" : "; ") + a.name + " " + a.detail;
    return {rep.all_passed() && !battery.any_failed(), detail};
}

Outcome sweep_direction(const eval::SweepResult& sweep) {
    const auto rep = eval::sweep_assertions(sweep);
    std::size_t ok = 0;
    std::string failed;
    for (const auto& a : rep.assertions) {
        ok += a.passed;
        if (!a.passed) failed += "; failed: " + a.name + " " + a.detail;
    }
    std::string means;
    for (const auto& a : sweep.aggregates) means += " " + a.method + "@" + fmt(a.level) + "=" + fmt(a.mean, 3);
    return {rep.all_passed() && !sweep.any_failed(),
            std::to_string(ok) + "/" + std::to_string(rep.assertions.size()) + " checks;" + means + failed};
}

Outcome distance_direction(const eval::ExperimentSpec& ex) {
    constexpr auto F = static_cast<std::size_t>(nic::Verdict::FeatureNoise);
    constexpr auto L = static_cast<std::size_t>(nic::Verdict::LabelNoise);
    int good = 0;
    std::string per_seed;
    for (auto s : seeds()) {
        const auto d = eval::diagnose_after_warmup(ex, s);
        const auto& md = d.histogram.mean_distance;
        const bool ok = md[F] && md[L] && *md[F] > *md[L];
        good += ok;
        per_seed += " s" + std::to_string(s) + "(" + (md[F] ? fmt(*md[F], 3) : "-") + " vs " +
                    (md[L] ? fmt(*md[L], 3) : "-") + ")";
    }
    return {good >= kSeedsRequired, std::to_string(good) + "/" + std::to_string(kSeeds) +
                                        " seeds with feature-noise mean distance > label-noise;" + per_seed};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + DUALCAN_BIN + "\" " + args + " >\"" + log.string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / ("dualcan_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cfg = std::string("--config \"") + DUALCAN_CONFIGS + "/reference.yaml\"";
    const auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
    Outcome o{false, ""};
    if (run("gen " + cfg + " --out-dir " + q(dir / "data"), dir / "log.txt") != 0) {
        o.detail = "gen failed: " + slurp(dir / "log.txt");
    } else if (run("train " + cfg + " --data-dir " + q(dir / "data") + " --out-dir " + q(dir / "a"), dir / "log.txt") != 0 ||
               run("train " + cfg + " --data-dir " + q(dir / "data") + " --out-dir " + q(dir / "b"), dir / "log.txt") != 0) {
        o.detail = "train failed: " + slurp(dir / "log.txt");
    } else {
        const auto a = slurp(dir / "a" / "metrics.csv");
        const auto b = slurp(dir / "b" / "metrics.csv");
        o.pass = !a.empty() && a == b;
        o.detail = "metrics.csv " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " bytes, " +
                   (a == b ? "identical" : "DIFFERENT");
    }
    fs::remove_all(dir);
    return o;
}

}  // namespace

int main() {
    const auto ex = eval::reference_experiment();
    const auto s = seeds();

    criterion("C1", "noise identification/correction matches the brute-force oracle", kOracleBudget, oracle_equivalence);
    criterion("C2", "analytic gradients match central differences", kFdBudget, gradient_check);
    criterion("C3", "correction endpoints and inclusive radius boundary", kEndpointBudget, endpoints_and_boundary);
    criterion("C4", "corruption rates calibrated", kCalibrationBudget, calibration);

    // The sweep's full-method cells at the reference level double as the correction-curve runs.
    eval::SweepResult sweep;
    const std::vector<double> levels{0.0, 0.4, 0.8, 1.2, 1.6};
    const std::vector<eval::Method> methods{*eval::method_by_name("full"), eval::baseline_method()};
    const auto t0 = std::chrono::steady_clock::now();
    sweep = eval::noise_sweep(ex, levels, methods, s);
    const double sweep_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<eval::CellResult> full_runs;
    for (const auto& c : sweep.cells) {
        if (c.method == "full" && c.level == ex.noise.p_noise) full_runs.push_back(c);
    }
    const double per_run = sweep_secs / static_cast<double>(sweep.cells.size());
    criterion("C5", "source noise shrinks and pseudo-labels improve over training", kCurvesBudget, [&] {
        auto o = correction_curves(full_runs, injected_label_ratio(ex));
        // charge the five runs this criterion consumed
        if (per_run * static_cast<double>(full_runs.size()) > kCurvesBudget) {
            o.pass = false;
            o.detail += "; over budget";
        }
        return o;
    });
    criterion("C6", "ablation ordering", kAblationBudget, [&] { return ablation_direction(ex); });
    criterion("C7", "accuracy falls with noise; full beats no correction at 0.4", kSweepBudget, [&] {
        auto o = sweep_direction(sweep);
        o.detail += "; sweep took " + fmt(sweep_secs, 3) + " s";
        if (sweep_secs > kSweepBudget) o.pass = false;
        return o;
    });
    criterion("C8", "feature noise sits farther from centroids than label noise after warm-up", kDistanceBudget,
              [&] { return distance_direction(ex); });
    criterion("C9", "train is byte-deterministic", kDeterminismBudget, determinism);

    std::cout << (failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << " (" << 9 - failures << "/9)" << std::endl;
    return failures == 0 ? 0 : 1;
}

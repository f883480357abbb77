#include "dualcan/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dualcan/checkpoint.hpp"
#include "dualcan/config.hpp"
#include "dualcan/csv.hpp"
#include "dualcan/dataset_io.hpp"
#include "dualcan/digest.hpp"
#include "dualcan/eval.hpp"
#include "dualcan/rng.hpp"

namespace dualcan::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::ostream& out_of(const Options& o) { return o.out ? *o.out : std::cout; }
std::ostream& err_of(const Options& o) { return o.err ? *o.err : std::cerr; }

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

class PhaseTimer {
public:
    void start(std::string name) {
        stop();
        name_ = std::move(name);
        t0_ = std::chrono::steady_clock::now();
    }
    void stop() {
        if (name_.empty()) return;
        times_[name_] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        name_.clear();
    }
    json to_json() {
        stop();
        json j = json::object();
        for (const auto& [k, v] : times_) j[k] = v;
        return j;
    }

private:
    std::string name_;
    std::chrono::steady_clock::time_point t0_;
    std::map<std::string, double> times_;
};

// Collects what a command wrote and assembles manifest.json.
class Manifest {
public:
    Manifest(std::string command, const config::RunConfig& cfg) {
        j_["tool"] = "dualcan";
        j_["version"] = kToolVersion;
        j_["command"] = std::move(command);
        j_["started_utc"] = utc_now();
        j_["config_yaml"] = config::to_yaml(cfg);
        j_["datasets"] = json::object();
        j_["outputs"] = json::array();
    }

    void dataset(const std::string& role, const fs::path& path) {
        j_["datasets"][role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
    }

    void write(const fs::path& path, std::string_view contents) {
        write_file_atomic(path, contents);
        j_["outputs"].push_back(
            {{"file", path.filename().string()}, {"bytes", contents.size()}, {"sha256", sha256_hex(contents)}});
    }

    json& extra() { return j_; }

    void finish(const fs::path& out_dir, PhaseTimer& timer, const std::string& status) {
        j_["status"] = status;
        j_["finished_utc"] = utc_now();
        j_["timings_s"] = timer.to_json();
        write_file_atomic(out_dir / "manifest.json", j_.dump(2) + "\n");
    }

private:
    json j_;
};

config::RunConfig load(const Options& o) {
    auto cfg = config::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    return cfg;
}

// Maps library exceptions onto exit codes; every command body runs through this.
template <typename Body>
int guarded(const Options& o, Body&& body) {
    auto& err = err_of(o);
    try {
        return body();
    } catch (const config::ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const FormatError& e) {
        err << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const VersionError& e) {
        err << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumericAbort;
    } catch (const ParameterError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ShapeError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
}

void require_out_dir(const Options& o) {
    if (o.out_dir.empty()) throw config::ConfigError("--out-dir is required", "out_dir", 0);
    std::error_code ec;
    fs::create_directories(o.out_dir, ec);
    if (ec) throw IoError("cannot create " + o.out_dir.string() + ": " + ec.message());
}

// Per-epoch NIC verdict dump, streamed into memory as the run proceeds.
class NicReporter : public trainer::EpochObserver {
public:
    void on_epoch(const trainer::EpochSnapshot& s, trainer::EpochMetrics&) override {
        out_ << nic_report_rows(s.epoch, "source", s.source_records);
        out_ << nic_report_rows(s.epoch, "target", s.target_records);
    }
    std::string csv() const { return nic_report_header() + out_.str(); }

private:
    std::ostringstream out_;
};

json metrics_json(std::span<const trainer::EpochMetrics> history) {
    json rows = json::array();
    for (const auto& m : history) {
        rows.push_back({{"epoch", m.epoch},
                        {"source_acc", m.source_accuracy},
                        {"target_acc", m.target_accuracy},
                        {"src_noise_ratio", m.residual_source_noise_ratio},
                        {"pl_error", m.pseudo_label_error},
                        {"eta", m.eta},
                        {"lr", m.lr}});
    }
    return rows;
}

std::vector<trainer::EpochMetrics> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty metrics file", 0);
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* need : {"epoch", "src_noise_ratio", "pl_error", "detected_src_noise_ratio"}) {
        if (!col.count(need)) throw FormatError(std::string("metrics file lacks column ") + need, 0);
    }
    std::vector<trainer::EpochMetrics> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) throw FormatError("ragged metrics row", static_cast<std::size_t>(in.tellg()));
        trainer::EpochMetrics m;
        m.epoch = std::stoi(f[col["epoch"]]);
        m.residual_source_noise_ratio = std::stod(f[col["src_noise_ratio"]]);
        m.pseudo_label_error = std::stod(f[col["pl_error"]]);
        m.detected_source_noise_ratio = std::stod(f[col["detected_src_noise_ratio"]]);
        out.push_back(m);
    }
    return out;
}

std::string fixed4(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

}  // namespace

std::string metrics_csv(std::span<const trainer::EpochMetrics> history) {
    std::ostringstream out;
    out << "epoch,source_acc,target_acc,src_noise_ratio,pl_error,eta,lr,detected_src_noise_ratio,"
           "source_loss,target_loss,src_clean,src_feature_noise,src_label_noise,tgt_relabeled\n";
    for (const auto& m : history) {
        out << m.epoch << ',' << format_double(m.source_accuracy) << ',' << format_double(m.target_accuracy) << ','
            << format_double(m.residual_source_noise_ratio) << ',' << format_double(m.pseudo_label_error) << ','
            << format_double(m.eta) << ',' << format_double(m.lr) << ','
            << format_double(m.detected_source_noise_ratio) << ',' << format_double(m.source_train_loss) << ','
            << format_double(m.target_train_loss) << ',' << m.source_counts.clean << ','
            << m.source_counts.feature_noise << ',' << m.source_counts.label_noise << ','
            << m.target_counts.label_noise << '\n';
    }
    return out.str();
}

std::string nic_report_header() { return "epoch,domain,index,verdict,k_star,dist,radius,corrected_label,eta\n"; }

std::string nic_report_rows(int epoch, const char* domain, std::span<const nic::CorrectionRecord> records) {
    std::ostringstream out;
    for (const auto& r : records) {
        out << epoch << ',' << domain << ',' << r.index << ',' << nic::to_string(r.verdict) << ','
            << r.assigned_cluster << ',' << format_double(r.distance) << ',' << format_double(r.radius) << ','
            << r.corrected_label << ',' << format_double(r.eta_used) << '\n';
    }
    return out.str();
}

int cmd_gen(const Options& o) {
    return guarded(o, [&] {
        PhaseTimer timer;
        timer.start("config");
        const auto cfg = load(o);
        require_out_dir(o);
        timer.start("generate");
        const auto& ex = cfg.experiment;
        auto rep = eval::make_replicate(ex, ex.noise.p_noise, cfg.seed);
        timer.start("write");
        Manifest man("gen", cfg);
        const auto src = o.out_dir / "source.dcds";
        const auto tgt = o.out_dir / "target.dcds";
        man.write(src, datagen::serialize_dataset(rep.source));
        man.write(tgt, datagen::serialize_dataset(rep.target));
        man.dataset("source", src);
        man.dataset("target", tgt);
        auto& out = out_of(o);
        out << man.extra()["datasets"]["source"]["sha256"].get<std::string>() << "  " << src.string() << '\n';
        out << man.extra()["datasets"]["target"]["sha256"].get<std::string>() << "  " << tgt.string() << '\n';
        man.finish(o.out_dir, timer, "ok");
        return static_cast<int>(kOk);
    });
}

int cmd_train(const Options& o) {
    return guarded(o, [&] {
        PhaseTimer timer;
        timer.start("config");
        const auto cfg = load(o);
        if (o.data_dir.empty()) throw config::ConfigError("--data-dir is required", "data_dir", 0);
        require_out_dir(o);

        timer.start("load");
        const auto src_path = o.data_dir / "source.dcds";
        const auto tgt_path = o.data_dir / "target.dcds";
        const auto source = datagen::load_dataset(src_path);
        const auto target = datagen::load_dataset(tgt_path);
        Manifest man("train", cfg);
        man.dataset("source", src_path);
        man.dataset("target", tgt_path);

        timer.start("train");
        auto tc = cfg.experiment.train;
        tc.seed = derive_seed(tc.seed, {cfg.seed});
        NicReporter reporter;
        trainer::EpochObserver* extra[] = {&reporter};
        const auto result = eval::run_scored(tc, source, target, extra);

        timer.start("write");
        man.write(o.out_dir / "metrics.csv", metrics_csv(result.history));
        man.write(o.out_dir / "nic_report.csv", reporter.csv());
        man.write(o.out_dir / "model.dcmd", model::serialize_model(result.model));
        man.extra()["resolved_train_seed"] = tc.seed;
        man.extra()["epochs_completed"] = result.history.size();
        man.extra()["metrics"] = metrics_json(result.history);
        auto& out = out_of(o);
        if (result.aborted) {
            err_of(o) << "numeric abort: " << result.error << '\n';
            man.finish(o.out_dir, timer, "aborted: " + result.error);
            return static_cast<int>(kNumericAbort);
        }
        if (!result.history.empty()) {
            const auto& last = result.history.back();
            out << "epochs " << result.history.size() << "  target_acc " << fixed4(last.target_accuracy)
                << "  source_acc " << fixed4(last.source_accuracy) << "  src_noise_ratio "
                << fixed4(last.residual_source_noise_ratio) << "  pl_error " << fixed4(last.pseudo_label_error)
                << '\n';
        }
        man.finish(o.out_dir, timer, "ok");
        return static_cast<int>(kOk);
    });
}

int cmd_sweep(const Options& o) {
    return guarded(o, [&] {
        PhaseTimer timer;
        timer.start("config");
        const auto cfg = load(o);
        if (!cfg.sweep) throw config::ConfigError("missing required section", "sweep", 0);
        require_out_dir(o);
        std::vector<eval::Method> methods;
        for (const auto& name : cfg.sweep->methods) methods.push_back(*eval::method_by_name(name));

        timer.start("sweep");
        const auto result = eval::noise_sweep(cfg.experiment, cfg.sweep->levels, methods, cfg.sweep->seeds, o.jobs);
        const auto report = eval::sweep_assertions(result);

        timer.start("write");
        Manifest man("sweep", cfg);
        man.write(o.out_dir / "sweep_cells.csv", result.cells_csv());
        man.write(o.out_dir / "sweep_aggregate.csv", result.aggregate_csv());
        man.write(o.out_dir / "sweep_assertions.txt", report.to_text());
        out_of(o) << result.aggregate_csv() << report.to_text();
        const bool failed = result.any_failed();
        man.finish(o.out_dir, timer, failed ? "partial: some cells failed" : "ok");
        return static_cast<int>(failed ? kSweepFailure : kOk);
    });
}

int cmd_ablate(const Options& o) {
    return guarded(o, [&] {
        PhaseTimer timer;
        timer.start("config");
        const auto cfg = load(o);
        if (!cfg.ablate) throw config::ConfigError("missing required section", "ablate", 0);
        require_out_dir(o);

        timer.start("ablate");
        const auto result = eval::ablation_battery(cfg.experiment, cfg.ablate->seeds, o.jobs);
        const auto report = eval::ablation_assertions(result);

        timer.start("write");
        Manifest man("ablate", cfg);
        const auto table = eval::ablation_table_csv(result);
        man.write(o.out_dir / "ablation_table.csv", table);
        man.write(o.out_dir / "ablation_cells.csv", result.cells_csv());
        man.write(o.out_dir / "ablation_assertions.txt", report.to_text());
        out_of(o) << table << report.to_text();
        const bool failed = result.any_failed();
        man.finish(o.out_dir, timer, failed ? "partial: some cells failed" : "ok");
        return static_cast<int>(failed ? kSweepFailure : kOk);
    });
}

int cmd_report(const Options& o) {
    return guarded(o, [&] {
        PhaseTimer timer;
        timer.start("config");
        const auto cfg = load(o);
        require_out_dir(o);
        Manifest man("report", cfg);

        timer.start("diagnose");
        const auto diag = eval::diagnose_after_warmup(cfg.experiment, cfg.seed);
        eval::AssertionReport report;
        const auto& md = diag.histogram.mean_distance;
        const auto feat = static_cast<std::size_t>(nic::Verdict::FeatureNoise);
        const auto lab = static_cast<std::size_t>(nic::Verdict::LabelNoise);
        if (md[feat] && md[lab]) {
            report.assertions.push_back({"after warm-up, mean distance of feature noise > label noise",
                                         *md[feat] > *md[lab], fixed4(*md[feat]) + " vs " + fixed4(*md[lab])});
        }

        timer.start("write");
        man.write(o.out_dir / "warmup_distance_histogram.csv", diag.histogram.to_csv());
        man.write(o.out_dir / "warmup_verdict_quality.csv", diag.quality.to_csv());

        const auto metrics_path = o.out_dir / "metrics.csv";
        if (fs::exists(metrics_path)) {
            const auto history = parse_metrics_csv(read_file(metrics_path));
            if (!history.empty()) {
                const auto curves = eval::correction_curves(history);
                man.write(o.out_dir / "correction_curves.csv", curves.to_csv());
                eval::CellResult run;
                run.method = "train";
                run.seed = cfg.seed;
                run.ok = true;
                run.history = history;
                run.final_metrics = history.back();
                const double injected = cfg.experiment.noise.kind == datagen::NoiseKind::Mixed
                                            ? cfg.experiment.noise.p_noise / 2.0
                                            : cfg.experiment.noise.p_noise;
                for (auto& a : eval::curve_assertions(std::span(&run, 1), injected).assertions) {
                    report.assertions.push_back(std::move(a));
                }
            }
        }
        std::string text = report.to_text();
        for (const char* name : {"sweep_assertions.txt", "ablation_assertions.txt"}) {
            if (fs::exists(o.out_dir / name)) text += "\n# " + std::string(name) + "\n" + read_file(o.out_dir / name);
        }
        man.write(o.out_dir / "report.txt", text);
        out_of(o) << text;
        man.finish(o.out_dir, timer, "ok");
        return static_cast<int>(kOk);
    });
}

}  // namespace dualcan::cli

#include "dualcan/config.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "dualcan/csv.hpp"

namespace dualcan::config {

ConfigError::ConfigError(const std::string& message, std::string field, int line)
    : Error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
            (field.empty() ? std::string() : field + ": ") + message),
      field_(std::move(field)),
      line_(line) {}

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

// One mapping section; tracks which keys were consumed so leftovers can be reported.
class Section {
public:
    // A missing or null node is an absent section.
    Section(std::optional<YAML::Node> node, std::string path) : path_(std::move(path)) {
        if (node && !node->IsNull()) {
            if (!node->IsMap()) throw ConfigError("expected a mapping", path_, line_of(*node));
            node_ = std::move(*node);
        }
    }

    bool present() const { return node_.has_value(); }

    template <typename T>
    void read(const std::string& key, T& out, bool required = false) {
        used_.insert(key);
        const auto v = lookup(key);
        if (!v) {
            if (required) throw ConfigError("missing required field", field(key), present() ? line_of(*node_) : 0);
            return;
        }
        try {
            out = v->as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError("invalid value", field(key), line_of(*v));
        }
    }

    Section child(const std::string& key) {
        used_.insert(key);
        return Section(lookup(key), field(key));
    }

    int line(const std::string& key) const {
        const auto v = lookup(key);
        if (v) return line_of(*v);
        return present() ? line_of(*node_) : 0;
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void reject_unknown() const {
        if (!present()) return;
        for (const auto& kv : *node_) {
            const auto key = kv.first.as<std::string>();
            if (!used_.count(key)) throw ConfigError("unknown field", field(key), line_of(kv.first));
        }
    }

private:
    std::optional<YAML::Node> lookup(const std::string& key) const {
        if (!node_) return std::nullopt;
        const YAML::Node& map = *node_;
        const auto v = map[key];
        if (!v.IsDefined()) return std::nullopt;
        return v;
    }

    std::optional<YAML::Node> node_;
    std::string path_;
    std::set<std::string> used_;
};

datagen::NoiseKind parse_kind(const std::string& s, const Section& sec) {
    if (s == "label") return datagen::NoiseKind::LabelOnly;
    if (s == "feature") return datagen::NoiseKind::FeatureOnly;
    if (s == "mixed") return datagen::NoiseKind::Mixed;
    throw ConfigError("expected one of label, feature, mixed", sec.field("kind"), sec.line("kind"));
}

const char* kind_name(datagen::NoiseKind k) {
    switch (k) {
        case datagen::NoiseKind::LabelOnly: return "label";
        case datagen::NoiseKind::FeatureOnly: return "feature";
        case datagen::NoiseKind::Mixed: return "mixed";
    }
    return "?";
}

// Runs a library validator and maps its complaint onto a config field.
template <typename F>
void check(F&& fn, const std::string& field, int line) {
    try {
        fn();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what(), field, line);
    } catch (const StateError& e) {
        throw ConfigError(e.what(), field, line);
    }
}

void read_noise(Section& s, datagen::NoiseSpec& n) {
    std::string kind = kind_name(n.kind);
    s.read("kind", kind);
    n.kind = parse_kind(kind, s);
    s.read("p_noise", n.p_noise, true);
    s.read("feature_noise_sigma", n.feature_noise_sigma);
    s.read("feature_mask_fraction", n.feature_mask_fraction);
    s.read("seed", n.seed, true);
    s.reject_unknown();
    check([&] { datagen::validate(n); }, s.field("p_noise"), s.line("p_noise"));
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(e.msg, "", e.mark.line + 1);
    }
    if (!root || root.IsNull()) throw ConfigError("empty config", "", 0);
    if (!root.IsMap()) throw ConfigError("top level must be a mapping", "", line_of(root));

    RunConfig c;
    c.experiment = eval::reference_experiment();
    auto& ex = c.experiment;
    Section top(std::optional<YAML::Node>(root), "");
    top.read("seed", c.seed);

    auto dom = top.child("domain");
    if (!dom.present()) throw ConfigError("missing required section", "domain", 0);
    dom.read("num_classes", ex.domain.num_classes);
    dom.read("feature_dim", ex.domain.feature_dim);
    dom.read("samples_per_class", ex.domain.samples_per_class);
    dom.read("class_center_scale", ex.domain.class_center_scale);
    dom.read("class_spread", ex.domain.class_spread);
    dom.read("shift_rotation", ex.domain.shift_rotation);
    dom.read("shift_translation", ex.domain.shift_translation);
    dom.read("seed", ex.domain.seed, true);
    dom.reject_unknown();
    check([&] { datagen::validate(ex.domain); }, "domain", top.line("domain"));

    auto noise = top.child("noise");
    if (!noise.present()) throw ConfigError("missing required section", "noise", 0);
    read_noise(noise, ex.noise);

    auto tnoise = top.child("target_noise");
    if (tnoise.present()) {
        datagen::NoiseSpec tn;
        tn.kind = datagen::NoiseKind::FeatureOnly;
        read_noise(tnoise, tn);
        if (tn.kind != datagen::NoiseKind::FeatureOnly) {
            throw ConfigError("target corruption must be feature-only", "target_noise.kind",
                              tnoise.line("kind"));
        }
        ex.target_noise = tn;
    } else {
        ex.target_noise.reset();
    }

    auto& tr = ex.train;
    auto mod = top.child("model");
    mod.read("hidden_dims", tr.model.hidden_dims);
    mod.read("feature_dim", tr.model.feature_dim);
    mod.read("init_scale", tr.model.init_scale);
    mod.reject_unknown();

    auto aug = top.child("augment");
    aug.read("weak_sigma", tr.augment.weak_sigma);
    aug.read("strong_sigma", tr.augment.strong_sigma);
    aug.read("strong_mask_prob", tr.augment.strong_mask_prob);
    aug.read("seed", tr.augment.seed);
    aug.reject_unknown();

    auto trs = top.child("train");
    trs.read("max_epochs", tr.max_epochs);
    trs.read("warmup_epochs", tr.warmup_epochs);
    trs.read("lr", tr.lr);
    trs.read("lr_decay_factor", tr.lr_decay_factor);
    trs.read("momentum", tr.momentum);
    trs.read("batch_size", tr.batch_size);
    trs.read("consistency_weight", tr.consistency_weight);
    trs.read("seed", tr.seed, true);
    auto abl = trs.child("ablation");
    abl.read("feature_correction", tr.ablation.feature_correction);
    abl.read("label_correction", tr.ablation.label_correction);
    abl.read("source_correction", tr.ablation.source_correction);
    abl.read("target_correction", tr.ablation.target_correction);
    abl.reject_unknown();
    trs.reject_unknown();

    auto nic = top.child("nic");
    nic.read("separation_ratio", tr.separation_ratio);
    nic.read("eta0", tr.eta0);
    nic.read("radius_percentile", tr.radius_percentile);
    std::string clusters = tr.target_clusters == trainer::TargetClusters::Own ? "own" : "source";
    nic.read("target_clusters", clusters);
    if (clusters == "own") {
        tr.target_clusters = trainer::TargetClusters::Own;
    } else if (clusters == "source") {
        tr.target_clusters = trainer::TargetClusters::Source;
    } else {
        throw ConfigError("expected own or source", "nic.target_clusters", nic.line("target_clusters"));
    }
    nic.reject_unknown();

    // Surface model/train validation as config errors naming the section.
    check(
        [&] {
            auto mc = tr.model;
            mc.input_dim = ex.domain.feature_dim;
            mc.num_classes = ex.domain.num_classes;
            model::validate(mc);
        },
        "model", top.line("model"));
    check([&] { trainer::validate(tr); }, "train", top.line("train"));

    auto sw = top.child("sweep");
    if (sw.present()) {
        SweepSection s;
        sw.read("levels", s.levels, true);
        sw.read("methods", s.methods, true);
        sw.read("seeds", s.seeds, true);
        sw.reject_unknown();
        if (s.levels.empty()) throw ConfigError("needs at least one level", "sweep.levels", sw.line("levels"));
        if (s.seeds.empty()) throw ConfigError("needs at least one seed", "sweep.seeds", sw.line("seeds"));
        if (s.methods.empty()) throw ConfigError("needs at least one method", "sweep.methods", sw.line("methods"));
        for (double l : s.levels) {
            if (!(l >= 0.0 && l <= 1.6)) throw ConfigError("levels must lie in [0, 1.6]", "sweep.levels", sw.line("levels"));
        }
        for (const auto& m : s.methods) {
            if (!eval::method_by_name(m)) throw ConfigError("unknown method '" + m + "'", "sweep.methods", sw.line("methods"));
        }
        c.sweep = s;
    }

    auto ab = top.child("ablate");
    if (ab.present()) {
        AblateSection a;
        ab.read("seeds", a.seeds, true);
        ab.reject_unknown();
        if (a.seeds.empty()) throw ConfigError("needs at least one seed", "ablate.seeds", ab.line("seeds"));
        c.ablate = a;
    }
    top.reject_unknown();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file(path));
}

namespace {

void emit_noise(YAML::Emitter& out, const datagen::NoiseSpec& n) {
    out << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << kind_name(n.kind);
    out << YAML::Key << "p_noise" << YAML::Value << n.p_noise;
    out << YAML::Key << "feature_noise_sigma" << YAML::Value << n.feature_noise_sigma;
    out << YAML::Key << "feature_mask_fraction" << YAML::Value << n.feature_mask_fraction;
    out << YAML::Key << "seed" << YAML::Value << n.seed;
    out << YAML::EndMap;
}

}  // namespace

std::string to_yaml(const RunConfig& c) {
    const auto& ex = c.experiment;
    const auto& tr = ex.train;
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "seed" << YAML::Value << c.seed;

    out << YAML::Key << "domain" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "num_classes" << YAML::Value << ex.domain.num_classes;
    out << YAML::Key << "feature_dim" << YAML::Value << ex.domain.feature_dim;
    out << YAML::Key << "samples_per_class" << YAML::Value << ex.domain.samples_per_class;
    out << YAML::Key << "class_center_scale" << YAML::Value << ex.domain.class_center_scale;
    out << YAML::Key << "class_spread" << YAML::Value << ex.domain.class_spread;
    out << YAML::Key << "shift_rotation" << YAML::Value << ex.domain.shift_rotation;
    out << YAML::Key << "shift_translation" << YAML::Value << YAML::Flow << ex.domain.shift_translation;
    out << YAML::Key << "seed" << YAML::Value << ex.domain.seed;
    out << YAML::EndMap;

    out << YAML::Key << "noise" << YAML::Value;
    emit_noise(out, ex.noise);
    if (ex.target_noise) {
        out << YAML::Key << "target_noise" << YAML::Value;
        emit_noise(out, *ex.target_noise);
    }

    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "hidden_dims" << YAML::Value << YAML::Flow << tr.model.hidden_dims;
    out << YAML::Key << "feature_dim" << YAML::Value << tr.model.feature_dim;
    out << YAML::Key << "init_scale" << YAML::Value << tr.model.init_scale;
    out << YAML::EndMap;

    out << YAML::Key << "augment" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "weak_sigma" << YAML::Value << tr.augment.weak_sigma;
    out << YAML::Key << "strong_sigma" << YAML::Value << tr.augment.strong_sigma;
    out << YAML::Key << "strong_mask_prob" << YAML::Value << tr.augment.strong_mask_prob;
    out << YAML::Key << "seed" << YAML::Value << tr.augment.seed;
    out << YAML::EndMap;

    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "max_epochs" << YAML::Value << tr.max_epochs;
    out << YAML::Key << "warmup_epochs" << YAML::Value << tr.warmup_epochs;
    out << YAML::Key << "lr" << YAML::Value << tr.lr;
    out << YAML::Key << "lr_decay_factor" << YAML::Value << tr.lr_decay_factor;
    out << YAML::Key << "momentum" << YAML::Value << tr.momentum;
    out << YAML::Key << "batch_size" << YAML::Value << tr.batch_size;
    out << YAML::Key << "consistency_weight" << YAML::Value << tr.consistency_weight;
    out << YAML::Key << "seed" << YAML::Value << tr.seed;
    out << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "feature_correction" << YAML::Value << tr.ablation.feature_correction;
    out << YAML::Key << "label_correction" << YAML::Value << tr.ablation.label_correction;
    out << YAML::Key << "source_correction" << YAML::Value << tr.ablation.source_correction;
    out << YAML::Key << "target_correction" << YAML::Value << tr.ablation.target_correction;
    out << YAML::EndMap << YAML::EndMap;

    out << YAML::Key << "nic" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "separation_ratio" << YAML::Value << tr.separation_ratio;
    out << YAML::Key << "eta0" << YAML::Value << tr.eta0;
    out << YAML::Key << "radius_percentile" << YAML::Value << tr.radius_percentile;
    out << YAML::Key << "target_clusters" << YAML::Value
        << (tr.target_clusters == trainer::TargetClusters::Own ? "own" : "source");
    out << YAML::EndMap;

    if (c.sweep) {
        out << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "levels" << YAML::Value << YAML::Flow << c.sweep->levels;
        out << YAML::Key << "methods" << YAML::Value << YAML::Flow << c.sweep->methods;
        out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.sweep->seeds;
        out << YAML::EndMap;
    }
    if (c.ablate) {
        out << YAML::Key << "ablate" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.ablate->seeds;
        out << YAML::EndMap;
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace dualcan::config

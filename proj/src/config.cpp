#include "mola/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mola/adapt.hpp"
#include "mola/digest.hpp"
#include "mola/error.hpp"

namespace mola {

namespace pt = boost::property_tree;

const char* to_string(ParadigmKind k) {
    switch (k) {
        case ParadigmKind::arf: return "arf";
        case ParadigmKind::mtf: return "mtf";
        case ParadigmKind::mola: return "mola";
    }
    return "?";
}

ParadigmKind paradigm_from_string(const std::string& s) {
    if (s == "arf") return ParadigmKind::arf;
    if (s == "mtf") return ParadigmKind::mtf;
    if (s == "mola") return ParadigmKind::mola;
    throw ConfigError("unknown paradigm '" + s + "' (expected arf, mtf or mola)");
}

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(key + ": expected a number, got '" + raw + "'");
    return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
    return v;
}

bool to_bool(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

// Reads one section and rejects keys outside `allowed` (a trailing '*'
// matches any suffix).
class Section {
public:
    Section(const pt::ptree& root, std::string name, std::set<std::string> allowed)
        : name_(std::move(name)) {
        if (const auto child = root.get_child_optional(name_)) {
            present_ = true;
            for (const auto& [key, node] : *child) {
                if (!node.empty()) throw ConfigError("[" + name_ + "] " + key + ": nested keys are not allowed");
                const bool ok = allowed.count(key) > 0 ||
                                std::any_of(allowed.begin(), allowed.end(), [&](const std::string& a) {
                                    return !a.empty() && a.back() == '*' &&
                                           key.compare(0, a.size() - 1, a, 0, a.size() - 1) == 0;
                                });
                if (!ok) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
                values_[key] = node.data();
            }
        }
    }

    bool present() const { return present_; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string label(const std::string& key) const { return name_ + "." + key; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string str(const std::string& key, std::string fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : trim(it->second);
    }
    double real(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : to_double(label(key), it->second);
    }
    std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : to_uint(label(key), it->second);
    }
    bool flag(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : to_bool(label(key), it->second);
    }

private:
    std::string name_;
    bool present_ = false;
    std::map<std::string, std::string> values_;
};

const std::set<std::string> kSections{"dataset", "synth", "model", "paradigm", "train", "output"};

void apply_override(pt::ptree& root, const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + text + "' must look like section.key=value");
    const std::string path = trim(text.substr(0, eq));
    const auto dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size() || path.find('.', dot + 1) != std::string::npos)
        throw ConfigError("override key '" + path + "' must look like section.key");
    if (!kSections.count(path.substr(0, dot))) throw ConfigError("override names unknown section '" + path + "'");
    root.put(pt::ptree::path_type(path, '.'), trim(text.substr(eq + 1)));
}

RunConfig from_tree(const pt::ptree& root) {
    for (const auto& [name, node] : root) {
        if (!kSections.count(name)) throw ConfigError("unknown section [" + name + "]");
        if (node.empty() && !node.data().empty()) throw ConfigError("key '" + name + "' must live inside a section");
    }
    RunConfig cfg;

    const Section ds(root, "dataset",
                     {"source", "csv", "lookback", "horizon", "train_ratio", "val_ratio", "test_ratio", "train_count",
                      "val_count", "test_count", "standardize"});
    const Section sy(root, "synth", {"n_points", "channels", "noise_std", "seed", "component*"});
    const Section md(root, "model", {"encoder", "hidden", "activation"});
    const Section pd(root, "paradigm", {"kind", "segments", "experts", "rank", "home_logit", "placement"});
    const Section tr(root, "train",
                     {"lr", "batch_size", "max_epochs", "patience", "seed", "beta1", "beta2", "eps", "pretrain_lr",
                      "pretrain_epochs", "pretrain_patience", "adapt_lr", "adapt_epochs", "adapt_patience"});
    const Section out(root, "output", {"run_dir", "destandardize"});

    // dataset
    DatasetConfig& d = cfg.dataset;
    d.lookback = ds.count("lookback", d.lookback);
    d.horizon = ds.count("horizon", d.horizon);
    d.standardize = ds.flag("standardize", d.standardize);
    d.schema.train_ratio = ds.real("train_ratio", d.schema.train_ratio);
    d.schema.val_ratio = ds.real("val_ratio", d.schema.val_ratio);
    d.schema.test_ratio = ds.real("test_ratio", d.schema.test_ratio);
    const int counts = ds.has("train_count") + ds.has("val_count") + ds.has("test_count");
    if (counts != 0 && counts != 3) throw ConfigError("dataset: give all of train_count, val_count, test_count or none");
    if (counts == 3) {
        d.schema.train_count = ds.count("train_count", 0);
        d.schema.val_count = ds.count("val_count", 0);
        d.schema.test_count = ds.count("test_count", 0);
    }
    const std::string source = ds.str("source", ds.has("csv") ? "csv" : "synth");
    if (source == "csv") {
        if (!ds.has("csv")) throw ConfigError("dataset.source = csv needs dataset.csv = <path>");
        if (sy.present()) throw ConfigError("exactly one dataset source: remove [synth] or set dataset.source = synth");
        d.csv = ds.str("csv", "");
    } else if (source == "synth") {
        if (ds.has("csv")) throw ConfigError("exactly one dataset source: dataset.csv is set but source is synth");
        if (counts) throw ConfigError("split counts apply to CSV input only; use ratios for synthetic data");
        SynthSpec spec = default_case_study_spec(sy.count("n_points", 2400), sy.count("seed", 2024));
        spec.d_channels = sy.count("channels", spec.d_channels);
        spec.noise_std = sy.real("noise_std", spec.noise_std);
        spec.train_ratio = d.schema.train_ratio;
        spec.val_ratio = d.schema.val_ratio;
        spec.test_ratio = d.schema.test_ratio;
        std::map<std::uint64_t, SynthComponent> numbered;
        for (const auto& [key, value] : sy.values()) {
            if (key.rfind("component", 0) != 0) continue;
            const std::uint64_t idx = to_uint("synth." + key, key.substr(9));
            numbered[idx] = parse_component(value);
        }
        if (!numbered.empty()) {
            spec.components.clear();
            for (auto& [idx, comp] : numbered) spec.components.push_back(comp);
        }
        d.synth = spec;
    } else {
        throw ConfigError("dataset.source must be synth or csv, got '" + source + "'");
    }

    // model
    cfg.model.kind = encoder_kind_from_string(md.str("encoder", to_string(cfg.model.kind)));
    if (md.has("hidden")) {
        cfg.model.hidden.clear();
        for (const auto& w : split_list(md.str("hidden", ""))) cfg.model.hidden.push_back(to_uint("model.hidden", w));
    } else if (cfg.model.kind == EncoderKind::linear) {
        cfg.model.hidden.clear();
    }
    cfg.model.activation = activation_from_string(md.str("activation", to_string(cfg.model.activation)));
    cfg.model.lookback = d.lookback;

    // paradigm
    ParadigmConfig& p = cfg.paradigm;
    p.kind = paradigm_from_string(pd.str("kind", to_string(p.kind)));
    if (p.kind != ParadigmKind::mola) {
        for (const char* key : {"segments", "experts", "rank", "home_logit", "placement"})
            if (pd.has(key))
                throw ConfigError(std::string("paradigm.") + key + " only applies when paradigm.kind = mola");
    }
    p.segments = pd.count("segments", p.segments);
    p.experts = pd.count("experts", p.experts);
    p.rank = pd.count("rank", p.rank);
    p.home_logit = pd.real("home_logit", p.home_logit);
    if (pd.has("placement")) p.placement = split_list(pd.str("placement", ""));

    // train
    TrainConfig base;
    base.learning_rate = tr.real("lr", base.learning_rate);
    base.batch_size = tr.count("batch_size", base.batch_size);
    base.max_epochs = tr.count("max_epochs", base.max_epochs);
    base.patience = tr.count("patience", base.patience);
    base.seed = tr.count("seed", base.seed);
    base.adam.beta1 = tr.real("beta1", base.adam.beta1);
    base.adam.beta2 = tr.real("beta2", base.adam.beta2);
    base.adam.eps = tr.real("eps", base.adam.eps);
    cfg.train = base;

    cfg.pretrain = base;
    const TrainConfig pre_defaults = TrainConfig::pretrain_defaults();
    cfg.pretrain.max_epochs = tr.count("pretrain_epochs", pre_defaults.max_epochs);
    cfg.pretrain.patience = tr.count("pretrain_patience", pre_defaults.patience);
    cfg.pretrain.learning_rate = tr.real("pretrain_lr", base.learning_rate);

    cfg.adapt = base;
    cfg.adapt.max_epochs = tr.count("adapt_epochs", base.max_epochs);
    cfg.adapt.patience = tr.count("adapt_patience", base.patience);
    cfg.adapt.learning_rate = tr.real("adapt_lr", cfg.pretrain.learning_rate);

    // output
    if (out.has("run_dir")) cfg.output.run_dir = out.str("run_dir", "");
    cfg.output.destandardize = out.flag("destandardize", cfg.output.destandardize);

    cfg.validate();
    return cfg;
}

pt::ptree parse_tree(const std::string& text) {
    pt::ptree root;
    std::istringstream in(text);
    try {
        pt::read_ini(in, root);
    } catch (const pt::ini_parser_error& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    }
    return root;
}

}  // namespace

// ---- synthetic components ------------------------------------------------------

SynthComponent parse_component(const std::string& text) {
    std::istringstream in(text);
    std::string kind;
    if (!(in >> kind)) throw ConfigError("empty synthetic component");
    SynthComponent c;
    try {
        c.kind = component_kind_from_string(kind);
    } catch (const Error& ex) {
        throw ConfigError(ex.what());
    }
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw ConfigError("component field '" + token + "' must look like name=value");
        const std::string key = token.substr(0, eq);
        const double v = to_double("component " + key, token.substr(eq + 1));
        if (key == "amplitude") c.amplitude = v;
        else if (key == "period") c.period = v;
        else if (key == "phase") c.phase = v;
        else if (key == "ar_coeff") c.ar_coeff = v;
        else throw ConfigError("unknown component field '" + key + "'");
    }
    return c;
}

std::string format_component(const SynthComponent& c) {
    nlohmann::json a = c.amplitude;
    std::string out = std::string(to_string(c.kind)) + " amplitude=" + a.dump();
    switch (c.kind) {
        case ComponentKind::sine:
            out += " period=" + nlohmann::json(c.period).dump() + " phase=" + nlohmann::json(c.phase).dump();
            break;
        case ComponentKind::ar1: out += " ar_coeff=" + nlohmann::json(c.ar_coeff).dump(); break;
        case ComponentKind::trend: break;
    }
    return out;
}

nlohmann::json synth_spec_to_json(const SynthSpec& spec) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : spec.components) {
        comps.push_back({{"kind", to_string(c.kind)},
                         {"amplitude", c.amplitude},
                         {"period", c.period},
                         {"phase", c.phase},
                         {"ar_coeff", c.ar_coeff}});
    }
    return {{"n_points", spec.n_points},
            {"channels", spec.d_channels},
            {"noise_std", spec.noise_std},
            {"seed", spec.seed},
            {"ratios", {spec.train_ratio, spec.val_ratio, spec.test_ratio}},
            {"components", comps}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec spec;
        spec.n_points = j.at("n_points").get<std::size_t>();
        spec.d_channels = j.at("channels").get<std::size_t>();
        spec.noise_std = j.at("noise_std").get<double>();
        spec.seed = j.at("seed").get<std::uint64_t>();
        const auto& r = j.at("ratios");
        spec.train_ratio = r.at(0).get<double>();
        spec.val_ratio = r.at(1).get<double>();
        spec.test_ratio = r.at(2).get<double>();
        for (const auto& c : j.at("components")) {
            spec.components.push_back({component_kind_from_string(c.at("kind").get<std::string>()),
                                       c.at("amplitude").get<double>(), c.at("period").get<double>(),
                                       c.at("phase").get<double>(), c.at("ar_coeff").get<double>()});
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed synthetic spec: ") + ex.what());
    }
}

// ---- RunConfig -------------------------------------------------------------------

void RunConfig::validate() const {
    if (dataset.csv.has_value() == dataset.synth.has_value())
        throw ConfigError("exactly one dataset source (csv or synth) is required");
    if (dataset.lookback < 1) throw ConfigError("dataset.lookback must be >= 1");
    if (dataset.horizon < 1) throw ConfigError("dataset.horizon must be >= 1");
    if (dataset.synth) dataset.synth->validate();
    if (model.lookback != dataset.lookback) throw ConfigError("model lookback differs from dataset.lookback");
    model.validate();
    train.validate();
    pretrain.validate();
    adapt.validate();
    if (paradigm.kind == ParadigmKind::mola) {
        make_segment_plan(dataset.horizon, paradigm.segments);
        if (paradigm.experts < 1) throw ConfigError("paradigm.experts must be >= 1");
        if (paradigm.rank < 1) throw ConfigError("paradigm.rank must be >= 1");
        if (!std::isfinite(paradigm.home_logit)) throw ConfigError("paradigm.home_logit must be finite");
        const auto names = model.layer_names();
        for (const auto& layer : paradigm.placement) {
            if (layer == kHeadLayer) throw ConfigError("paradigm.placement: the head is frozen and cannot be adapted");
            if (std::find(names.begin(), names.end(), layer) == names.end())
                throw ConfigError("paradigm.placement: unknown encoder layer '" + layer + "'");
        }
    }
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json ds{{"lookback", dataset.lookback},
                      {"horizon", dataset.horizon},
                      {"standardize", dataset.standardize},
                      {"ratios", {dataset.schema.train_ratio, dataset.schema.val_ratio, dataset.schema.test_ratio}}};
    if (dataset.schema.train_count) {
        ds["counts"] = {*dataset.schema.train_count, *dataset.schema.val_count, *dataset.schema.test_count};
    }
    if (dataset.csv) ds["csv"] = *dataset.csv;
    if (dataset.synth) ds["synth"] = synth_spec_to_json(*dataset.synth);

    nlohmann::json par{{"kind", to_string(paradigm.kind)}};
    if (paradigm.kind == ParadigmKind::mola) {
        par["segments"] = paradigm.segments;
        par["experts"] = paradigm.experts;
        par["rank"] = paradigm.rank;
        par["home_logit"] = paradigm.home_logit;
        par["placement"] = paradigm.placement;
    }
    nlohmann::json outj{{"destandardize", output.destandardize}};
    if (output.run_dir) outj["run_dir"] = *output.run_dir;
    return {{"dataset", ds},
            {"model", encoder_spec_to_json(model)},
            {"paradigm", par},
            {"train", train_config_to_json(train)},
            {"pretrain", train_config_to_json(pretrain)},
            {"adapt", train_config_to_json(adapt)},
            {"output", outj}};
}

std::string RunConfig::hash() const {
    // run_dir is where results go, not what produced them
    nlohmann::json j = to_json();
    j["output"].erase("run_dir");
    return sha256_hex(j.dump());
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
    pt::ptree root = parse_tree(text);
    for (const auto& o : overrides) apply_override(root, o);
    return from_tree(root);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), overrides);
}

RunConfig default_run_config(const std::vector<std::string>& overrides) { return parse_run_config("", overrides); }

LoadedData load_dataset(const DatasetConfig& cfg) {
    LoadedData out;
    if (cfg.csv) {
        CsvLoadResult r = load_csv(*cfg.csv, cfg.schema);
        out.dataset = std::move(r.dataset);
        out.warnings = std::move(r.warnings);
    } else if (cfg.synth) {
        out.dataset = generate_synthetic(*cfg.synth);
    } else {
        throw ConfigError("no dataset source configured");
    }
    if (cfg.standardize) out.dataset = standardize(out.dataset);
    return out;
}

}  // namespace mola

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vflbed/errors.hpp"
#include "vflbed/hijack.hpp"
#include "vflbed/lia.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("field '") + key + "' has the wrong type");
    }
}

template <typename T>
T get_required(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": field '" + key + "' has the wrong type");
    }
}

} // namespace detail

struct DatasetConfig {
    std::string kind = "synth";  // synth | income | cache
    std::string path;            // income csv or cache file
    std::size_t n = 2000;
    int classes = 10;
    std::size_t features = 64;
    double cluster_std = 0.6;
    std::uint64_t seed = 1;  // dataset generation seed (shared across run seeds)
};

struct PartitionConfig {
    std::size_t parties = 2;
    std::vector<double> ratios;  // empty = equal
    std::size_t adversary = 1;
    bool proportional_embeddings = false;
};

struct ModelConfig {
    std::size_t embedding_dim = 10;
    std::size_t bottom_hidden = 64;
    std::size_t top_layers = 2;
    std::size_t top_hidden = 64;
};

struct TrainingConfig {
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    int epochs = 10;
};

struct AttackConfig {
    std::string mode = "none";  // none | replace | grad | ssl-grad
    int target_class = 1;
    long long known_id = -1;  // -1: seeded pick among target-class train samples
    int attack_epoch = 2;
    int filter_ratio = 8;
    std::string scoring = "averaged";  // averaged | single-epoch
    std::optional<bool> ssl_init;      // default: mode == ssl-grad

    AttackMode mode_enum() const {
        if (mode == "none") return AttackMode::kNone;
        if (mode == "replace") return AttackMode::kReplace;
        if (mode == "grad") return AttackMode::kGrad;
        if (mode == "ssl-grad") return AttackMode::kSslGrad;
        throw ConfigError("attack.mode must be one of none|replace|grad|ssl-grad");
    }

    ScoringMode scoring_enum() const {
        if (scoring == "averaged") return ScoringMode::kAveraged;
        if (scoring == "single-epoch") return ScoringMode::kSingleEpoch;
        throw ConfigError("attack.scoring must be averaged|single-epoch");
    }

    bool effective_ssl_init() const {
        return ssl_init.value_or(mode_enum() == AttackMode::kSslGrad);
    }
};

struct DefenseConfig {
    std::string kind;  // identity|dpsgd|gc|abl|anp|vflip|ep|limit|anomaly
    double clip = 0.2;       // dpsgd
    double sigma = 0.0;      // dpsgd
    double lambda = 0.25;    // gc kept fraction
    double gamma = 0.5;      // abl loss floor
    int flag_epoch = 5;      // abl
    double epsilon = 0.4;    // anp budget
    std::size_t prune = 10;  // anp neurons
    double z = 1.0;          // ep noise multiple
    int trials = 100;        // ep votes
};

struct ExperimentConfig {
    int version = 1;
    DatasetConfig dataset;
    PartitionConfig partition;
    ModelConfig model;
    TrainingConfig training;
    AttackConfig attack;
    SSLConfig ssl;
    std::vector<DefenseConfig> defenses;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string trace_dir;  // empty = no trace export

    const DefenseConfig* find_defense(const std::string& kind) const {
        for (const auto& d : defenses)
            if (d.kind == kind) return &d;
        return nullptr;
    }

    void validate() const {
        if (version != 1) throw ConfigError("config version must be 1");
        if (dataset.kind != "synth" && dataset.kind != "income" && dataset.kind != "cache")
            throw ConfigError("dataset.kind must be synth|income|cache");
        if ((dataset.kind == "income" || dataset.kind == "cache") && dataset.path.empty())
            throw ConfigError("dataset.path is required for kind '" + dataset.kind + "'");
        if (partition.parties < 2) throw ConfigError("partition.parties must be >= 2");
        if (!partition.ratios.empty() && partition.ratios.size() != partition.parties)
            throw ConfigError("partition.ratios length must equal partition.parties");
        if (partition.adversary == 0)
            throw ConfigError("partition.adversary must be a passive party (party 0 is active)");
        if (partition.adversary >= partition.parties)
            throw ConfigError("partition.adversary out of range");
        if (model.embedding_dim == 0 || model.bottom_hidden == 0 || model.top_hidden == 0)
            throw ConfigError("model dims must be positive");
        if (model.top_layers < 1 || model.top_layers > 5)
            throw ConfigError("model.top_layers must be in [1,5]");
        if (training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
        if (training.learning_rate <= 0.0) throw ConfigError("training.learning_rate must be positive");
        if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
        attack.mode_enum();
        attack.scoring_enum();
        if (attack.mode_enum() != AttackMode::kNone) {
            if (attack.attack_epoch < 2) throw ConfigError("attack.attack_epoch must be >= 2");
            if (attack.attack_epoch >= training.epochs)
                throw ConfigError("attack.attack_epoch must leave at least one poisoning epoch");
            if (attack.filter_ratio < 1) throw ConfigError("attack.filter_ratio must be >= 1");
        }
        ssl.validate();
        std::set<std::string> seen;
        for (const auto& d : defenses) {
            static const std::set<std::string> kinds = {"identity", "dpsgd", "gc",    "abl",    "anp",
                                                        "vflip",    "ep",    "limit", "anomaly"};
            if (!kinds.count(d.kind)) throw ConfigError("unknown defense kind '" + d.kind + "'");
            if (!seen.insert(d.kind).second)
                throw ConfigError("defense '" + d.kind + "' appears more than once");
            if (d.kind == "dpsgd" && d.clip <= 0.0) throw ConfigError("dpsgd.clip must be positive");
            if (d.kind == "dpsgd" && d.sigma < 0.0) throw ConfigError("dpsgd.sigma must be >= 0");
            if (d.kind == "gc" && (d.lambda <= 0.0 || d.lambda > 1.0))
                throw ConfigError("gc.lambda must be in (0,1]");
            if (d.kind == "abl" && d.gamma <= 0.0) throw ConfigError("abl.gamma must be positive");
            if (d.kind == "abl" && (d.flag_epoch < 1 || d.flag_epoch >= training.epochs))
                throw ConfigError("abl.flag_epoch must be in [1, epochs)");
            if (d.kind == "anp" && d.epsilon < 0.0) throw ConfigError("anp.epsilon must be >= 0");
            if (d.kind == "ep" && d.z < 0.0) throw ConfigError("ep.z must be >= 0");
            if (d.kind == "ep" && d.trials < 1) throw ConfigError("ep.trials must be >= 1");
        }
        if (seeds.empty()) throw ConfigError("seeds must not be empty");
    }
};

inline ExperimentConfig parse_config(const json& j) {
    using detail::check_keys;
    using detail::get_or;
    using detail::get_required;
    check_keys(j, {"version", "dataset", "partition", "model", "training", "attack", "ssl", "defenses",
                   "seeds", "trace_dir"},
               "config");
    ExperimentConfig c;
    c.version = get_or(j, "version", 1);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, {"kind", "path", "n", "classes", "features", "cluster_std", "seed"},
                   "dataset");
        c.dataset.kind = get_required<std::string>(d, "kind", "dataset");
        c.dataset.path = get_or<std::string>(d, "path", "");
        c.dataset.n = get_or<std::size_t>(d, "n", c.dataset.n);
        c.dataset.classes = get_or<int>(d, "classes", c.dataset.classes);
        c.dataset.features = get_or<std::size_t>(d, "features", c.dataset.features);
        c.dataset.cluster_std = get_or<double>(d, "cluster_std", c.dataset.cluster_std);
        c.dataset.seed = get_or<std::uint64_t>(d, "seed", c.dataset.seed);
    }
    if (j.contains("partition")) {
        const json& p = j.at("partition");
        check_keys(p, {"parties", "ratios", "adversary", "proportional_embeddings"}, "partition");
        c.partition.parties = get_or<std::size_t>(p, "parties", c.partition.parties);
        c.partition.ratios = get_or<std::vector<double>>(p, "ratios", {});
        c.partition.adversary = get_or<std::size_t>(p, "adversary", c.partition.adversary);
        c.partition.proportional_embeddings =
            get_or<bool>(p, "proportional_embeddings", c.partition.proportional_embeddings);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"embedding_dim", "bottom_hidden", "top_layers", "top_hidden"}, "model");
        c.model.embedding_dim = get_or<std::size_t>(m, "embedding_dim", c.model.embedding_dim);
        c.model.bottom_hidden = get_or<std::size_t>(m, "bottom_hidden", c.model.bottom_hidden);
        c.model.top_layers = get_or<std::size_t>(m, "top_layers", c.model.top_layers);
        c.model.top_hidden = get_or<std::size_t>(m, "top_hidden", c.model.top_hidden);
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        check_keys(t, {"batch_size", "learning_rate", "epochs"}, "training");
        c.training.batch_size = get_or<std::size_t>(t, "batch_size", c.training.batch_size);
        c.training.learning_rate = get_or<double>(t, "learning_rate", c.training.learning_rate);
        c.training.epochs = get_or<int>(t, "epochs", c.training.epochs);
    }
    if (j.contains("attack")) {
        const json& a = j.at("attack");
        check_keys(a, {"mode", "target_class", "known_id", "attack_epoch", "filter_ratio", "scoring",
                       "ssl_init"},
                   "attack");
        c.attack.mode = get_or<std::string>(a, "mode", c.attack.mode);
        c.attack.target_class = get_or<int>(a, "target_class", c.attack.target_class);
        c.attack.known_id = get_or<long long>(a, "known_id", c.attack.known_id);
        c.attack.attack_epoch = get_or<int>(a, "attack_epoch", c.attack.attack_epoch);
        c.attack.filter_ratio = get_or<int>(a, "filter_ratio", c.attack.filter_ratio);
        c.attack.scoring = get_or<std::string>(a, "scoring", c.attack.scoring);
        if (a.contains("ssl_init") && !a.at("ssl_init").is_null())
            c.attack.ssl_init = get_or<bool>(a, "ssl_init", false);
    }
    if (j.contains("ssl")) {
        const json& s = j.at("ssl");
        check_keys(s, {"corruption_rate", "temperature", "projection_dim", "epochs", "batch_size",
                       "learning_rate"},
                   "ssl");
        c.ssl.corruption_rate = get_or<double>(s, "corruption_rate", c.ssl.corruption_rate);
        c.ssl.temperature = get_or<double>(s, "temperature", c.ssl.temperature);
        c.ssl.projection_dim = get_or<std::size_t>(s, "projection_dim", c.ssl.projection_dim);
        c.ssl.epochs = get_or<int>(s, "epochs", c.ssl.epochs);
        c.ssl.batch_size = get_or<std::size_t>(s, "batch_size", c.ssl.batch_size);
        c.ssl.learning_rate = get_or<double>(s, "learning_rate", c.ssl.learning_rate);
    }
    if (j.contains("defenses")) {
        if (!j.at("defenses").is_array()) throw ConfigError("defenses must be an array");
        for (const json& d : j.at("defenses")) {
            check_keys(d, {"kind", "clip", "sigma", "lambda", "gamma", "flag_epoch", "epsilon", "prune",
                           "z", "trials"},
                       "defense");
            DefenseConfig dc;
            dc.kind = get_required<std::string>(d, "kind", "defense");
            dc.clip = get_or<double>(d, "clip", dc.clip);
            dc.sigma = get_or<double>(d, "sigma", dc.sigma);
            dc.lambda = get_or<double>(d, "lambda", dc.lambda);
            dc.gamma = get_or<double>(d, "gamma", dc.gamma);
            dc.flag_epoch = get_or<int>(d, "flag_epoch", dc.flag_epoch);
            dc.epsilon = get_or<double>(d, "epsilon", dc.epsilon);
            dc.prune = get_or<std::size_t>(d, "prune", dc.prune);
            dc.z = get_or<double>(d, "z", dc.z);
            dc.trials = get_or<int>(d, "trials", dc.trials);
            c.defenses.push_back(dc);
        }
    }
    c.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", c.seeds);
    c.trace_dir = detail::get_or<std::string>(j, "trace_dir", "");
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

/// Fully resolved config (all defaults materialized). Key order is canonical
/// (nlohmann objects sort keys), so the dump and its hash are stable.
inline json resolved_config(const ExperimentConfig& c) {
    json j;
    j["version"] = c.version;
    j["dataset"] = {{"kind", c.dataset.kind},        {"path", c.dataset.path},
                    {"n", c.dataset.n},              {"classes", c.dataset.classes},
                    {"features", c.dataset.features}, {"cluster_std", c.dataset.cluster_std},
                    {"seed", c.dataset.seed}};
    j["partition"] = {{"parties", c.partition.parties},
                      {"ratios", c.partition.ratios},
                      {"adversary", c.partition.adversary},
                      {"proportional_embeddings", c.partition.proportional_embeddings}};
    j["model"] = {{"embedding_dim", c.model.embedding_dim},
                  {"bottom_hidden", c.model.bottom_hidden},
                  {"top_layers", c.model.top_layers},
                  {"top_hidden", c.model.top_hidden}};
    j["training"] = {{"batch_size", c.training.batch_size},
                     {"learning_rate", c.training.learning_rate},
                     {"epochs", c.training.epochs}};
    j["attack"] = {{"mode", c.attack.mode},
                   {"target_class", c.attack.target_class},
                   {"known_id", c.attack.known_id},
                   {"attack_epoch", c.attack.attack_epoch},
                   {"filter_ratio", c.attack.filter_ratio},
                   {"scoring", c.attack.scoring},
                   {"ssl_init", c.attack.effective_ssl_init()}};
    j["ssl"] = {{"corruption_rate", c.ssl.corruption_rate}, {"temperature", c.ssl.temperature},
                {"projection_dim", c.ssl.projection_dim},   {"epochs", c.ssl.epochs},
                {"batch_size", c.ssl.batch_size},           {"learning_rate", c.ssl.learning_rate}};
    j["defenses"] = json::array();
    for (const auto& d : c.defenses) {
        json dj = {{"kind", d.kind}};
        if (d.kind == "dpsgd") dj.update(json{{"clip", d.clip}, {"sigma", d.sigma}});
        if (d.kind == "gc") dj.update(json{{"lambda", d.lambda}});
        if (d.kind == "abl") dj.update(json{{"gamma", d.gamma}, {"flag_epoch", d.flag_epoch}});
        if (d.kind == "anp") dj.update(json{{"epsilon", d.epsilon}, {"prune", d.prune}});
        if (d.kind == "ep") dj.update(json{{"z", d.z}, {"trials", d.trials}});
        j["defenses"].push_back(dj);
    }
    j["seeds"] = c.seeds;
    j["trace_dir"] = c.trace_dir;
    return j;
}

/// FNV-1a 64 over the canonical dump, as fixed-width hex.
inline std::string config_hash(const ExperimentConfig& c) {
    const std::uint64_t h = detail::fnv1a64(resolved_config(c).dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace vflbed

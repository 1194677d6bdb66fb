#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <thread>

#include "vflbed/config.hpp"
#include "vflbed/dataset.hpp"
#include "vflbed/defenses.hpp"
#include "vflbed/hijack.hpp"
#include "vflbed/income.hpp"
#include "vflbed/protocol.hpp"

namespace vflbed {

inline constexpr double kNA = std::numeric_limits<double>::quiet_NaN();

/// Dataset plus partition geometry, shared (read-only) by every seed.
struct PreparedData {
    TrainTest data;
    PartitionSpec spec;
};

inline PreparedData prepare_data(const ExperimentConfig& c) {
    PreparedData pd;
    if (c.dataset.kind == "synth") {
        pd.data = synth_blobs(c.dataset.n, c.dataset.classes, c.dataset.features, c.dataset.cluster_std,
                              c.dataset.seed);
    } else if (c.dataset.kind == "income") {
        pd.data = load_income(c.dataset.path);
    } else {
        pd.data = load_dataset_cache(c.dataset.path);
    }
    const std::size_t dim = pd.data.train.dim();
    if (c.partition.ratios.empty()) {
        if (c.partition.proportional_embeddings) {
            std::vector<double> equal(c.partition.parties, 1.0 / static_cast<double>(c.partition.parties));
            pd.spec = make_partition(dim, equal, c.model.embedding_dim, true);
        } else {
            pd.spec = make_equal_partition(dim, c.partition.parties, c.model.embedding_dim);
        }
    } else {
        pd.spec = make_partition(dim, c.partition.ratios, c.model.embedding_dim,
                                 c.partition.proportional_embeddings);
    }
    return pd;
}

/// One seed's outcome. NaN / negative sentinels mean "not applicable".
struct RunResult {
    std::uint64_t seed = 0;
    std::string status = "ok";  // ok | failed
    std::string error;
    std::string mode = "none";

    double mta = kNA;
    double f1 = kNA;
    double accuracy = kNA;
    double clean_mta = kNA;  // paired no-attack twin, same seed
    double asr = kNA;
    double lia_precision = kNA;
    long long selected_count = -1;
    long long poisoned_total = -1;
    double final_train_loss = kNA;
    std::vector<double> epoch_losses;
    std::vector<double> saliency;  // per-epoch adversary/active saliency ratio
    double ssl_initial_loss = kNA;
    double ssl_final_loss = kNA;

    bool has_anomaly = false;
    DetectorStats pca;
    DetectorStats mahal;
    long long abl_flagged = -1;
    long long abl_overlap = -1;  // flagged ∩ selected
    double mae_flag_rate = kNA;  // clean test rows whose adversary block gets purified

    double saliency_final() const { return saliency.empty() ? kNA : saliency.back(); }
};

namespace detail {

inline std::size_t resolve_known_id(const ExperimentConfig& c, const LabeledDataset& train,
                                    const Rng& root) {
    if (c.attack.known_id >= 0) {
        const auto id = static_cast<std::size_t>(c.attack.known_id);
        if (id >= train.size()) throw ConfigError("attack.known_id out of range");
        if (train.labels[id] != c.attack.target_class)
            throw ConfigError("attack.known_id is not a target-class sample");
        return id;
    }
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (train.labels[i] == c.attack.target_class) pool.push_back(i);
    if (pool.empty()) throw ConfigError("attack: no target-class sample to pick known_id from");
    return pool[root.stream("known-pick").uniform_index(pool.size())];
}

} // namespace detail

/// Train + attack + defend + evaluate for one seed. Deterministic in
/// (config, prepared data, seed); every random draw comes from a named
/// stream of Rng(seed).
inline RunResult run_single(const ExperimentConfig& c, const PreparedData& pd, std::uint64_t seed) {
    RunResult row;
    row.seed = seed;
    row.mode = c.attack.mode;

    const LabeledDataset& train = pd.data.train;
    const LabeledDataset& test = pd.data.test;
    const std::size_t n = train.size();
    const AttackMode mode = c.attack.mode_enum();
    const std::size_t adv_party = c.partition.adversary;
    const std::size_t adv_off = pd.spec.embedding_offset(adv_party);
    const std::size_t adv_w = pd.spec.embedding_dims[adv_party];

    const Rng root(seed);
    const std::size_t batches = (n + c.training.batch_size - 1) / c.training.batch_size;
    const std::size_t total_steps = batches * static_cast<std::size_t>(c.training.epochs);
    const SystemShape shape{c.model.bottom_hidden, c.model.top_layers, c.model.top_hidden};
    VFLSystem sys =
        make_system(pd.spec, train.num_classes, shape, c.training.learning_rate, total_steps, root);

    if (c.attack.effective_ssl_init()) {
        const DenseMatrix xa = party_features(train.features, pd.spec, adv_party);
        const SSLResult ssl =
            ssl_pretrain(xa, {xa.cols, c.model.bottom_hidden, adv_w}, c.ssl, root.stream("ssl"));
        sys.parties[adv_party].bottom = ssl.encoder;
        row.ssl_initial_loss = ssl.initial_loss;
        row.ssl_final_loss = ssl.final_epoch_loss;
    }

    AttackPlan plan;
    std::unique_ptr<AttackController> controller;
    if (mode != AttackMode::kNone) {
        plan.mode = mode;
        plan.target_class = c.attack.target_class;
        plan.attack_epoch = c.attack.attack_epoch;
        plan.filter_ratio = c.attack.filter_ratio;
        plan.scoring = c.attack.scoring_enum();
        plan.known_id = detail::resolve_known_id(c, train, root);
        plan.validate(c.training.epochs, n);
        controller = std::make_unique<AttackController>(
            plan, n, adv_w, train.num_classes, [&sys, &pd, &train, adv_party, id = plan.known_id]() {
                const auto& fs = pd.spec.feature_slices[adv_party];
                DenseMatrix x(1, fs.width());
                for (std::size_t j = 0; j < x.cols; ++j) x.at(0, j) = train.features.at(id, fs.begin + j);
                const DenseMatrix h = mlp_forward(sys.parties[adv_party].bottom, x);
                return std::vector<double>(h.data.begin(), h.data.end());
            });
    }

    TrainHooks hooks;
    if (controller) {
        hooks.attacker = controller.get();
        hooks.attacker_party = adv_party;
    }

    // Gradient-space defenses run in config order on the full returned matrix.
    std::vector<std::function<void(DenseMatrix&)>> chain;
    for (const auto& d : c.defenses) {
        if (d.kind == "dpsgd") {
            auto rng = std::make_shared<Rng>(root.stream("defense-dpsgd"));
            chain.push_back([rng, clip = d.clip, sigma = d.sigma](DenseMatrix& dh) {
                dpsgd_transform(dh, clip, sigma, *rng);
            });
        } else if (d.kind == "gc") {
            chain.push_back([lambda = d.lambda](DenseMatrix& dh) { gc_transform(dh, lambda); });
        }
    }
    if (!chain.empty())
        hooks.gradient_transform = [chain](int, DenseMatrix& dh) {
            for (const auto& f : chain) f(dh);
        };

    std::shared_ptr<ABLShaper> abl;
    if (const DefenseConfig* d = c.find_defense("abl")) {
        abl = std::make_shared<ABLShaper>(n, d->gamma, d->flag_epoch);
        hooks.loss_scale = [abl](int epoch, std::span<const std::size_t> ids,
                                 const std::vector<double>& losses) {
            return abl->loss_scale(epoch, ids, losses);
        };
    }

    // During the first poisoning epoch, split the adversary's submissions into
    // injected rows and the clean remainder for the detector study.
    std::vector<double> pop_buf, sus_buf;
    if (controller && is_training_time_attack(mode)) {
        const int capture_epoch = c.attack.attack_epoch + 1;
        hooks.on_embeddings = [&, capture_epoch](int epoch, std::span<const std::size_t> ids,
                                                 const DenseMatrix& fused) {
            if (epoch != capture_epoch) return;
            for (std::size_t i = 0; i < fused.rows; ++i) {
                std::vector<double>& buf = controller->is_selected(ids[i]) ? sus_buf : pop_buf;
                for (std::size_t j = 0; j < adv_w; ++j) buf.push_back(fused.at(i, adv_off + j));
            }
        };
    }

    row.poisoned_total = 0;
    for (int epoch = 1; epoch <= c.training.epochs; ++epoch) {
        const EpochStats st = train_epoch(sys, train, epoch, c.training.batch_size, root, hooks);
        row.epoch_losses.push_back(st.mean_loss);
        row.poisoned_total += static_cast<long long>(st.poisoned_rows);
        const std::vector<double> sal = saliency_by_party(sys, test.features, test.labels);
        row.saliency.push_back(sal[0] > 0.0 ? sal[adv_party] / sal[0] : kNA);
    }
    row.final_train_loss = row.epoch_losses.back();

    if (abl) {
        row.abl_flagged = static_cast<long long>(abl->flagged_count());
        if (controller && is_training_time_attack(mode)) {
            const std::vector<bool>& fl = abl->flagged();
            long long overlap = 0;
            for (std::size_t id : controller->selected())
                if (fl[id]) ++overlap;
            row.abl_overlap = overlap;
        }
    }

    if (controller && is_training_time_attack(mode)) {
        row.selected_count = static_cast<long long>(controller->selected().size());
        row.lia_precision = selection_precision(controller->selected(), train.labels, plan.target_class);
    }

    // Post-training defense fits, on clean train embeddings under final weights.
    std::optional<DenseMatrix> cached_fused;
    const auto fused_train = [&]() -> const DenseMatrix& {
        if (!cached_fused) cached_fused = system_embeddings(sys, train.features);
        return *cached_fused;
    };

    if (const DefenseConfig* d = c.find_defense("anp")) {
        const std::size_t want = std::min(n, std::max<std::size_t>(64, n / 100));
        std::vector<std::size_t> ids = root.stream("anp-sample").permutation(n);
        ids.resize(want);
        std::vector<int> sub_labels(want);
        for (std::size_t i = 0; i < want; ++i) sub_labels[i] = train.labels[ids[i]];
        anp_prune(sys.top, gather_rows(fused_train(), ids), sub_labels, d->epsilon, d->prune,
                  root.stream("anp"));
    }

    MAEPurifier mae;
    const bool has_mae = c.find_defense("vflip") != nullptr;
    if (has_mae) mae.fit(fused_train(), pd.spec, root.stream("mae"));

    EPVote ep;
    const DefenseConfig* epd = c.find_defense("ep");
    if (epd) ep.fit(slice_cols(fused_train(), adv_off, adv_off + adv_w));

    LimitGuard limit;
    const DefenseConfig* limitd = c.find_defense("limit");
    if (limitd) limit.fit(sys, adv_party);

    InferencePipeline pipe;
    if (has_mae) pipe.mae = &mae;
    if (limitd) pipe.limit = &limit;
    if (epd) {
        pipe.ep = &ep;
        pipe.ep_z = epd->z;
        pipe.ep_trials = epd->trials;
    }
    pipe.suspected_party = adv_party;
    pipe.batch_size = c.training.batch_size;

    const EvalResult ev = evaluate_defended(sys, test, pipe, root.stream("ep-eval"));
    row.mta = ev.mta;
    row.f1 = ev.f1;
    row.accuracy = ev.accuracy;

    if (controller) {
        if (!controller->adv().initialized)
            throw InternalError("run: adversarial embedding never initialized");
        row.asr = evaluate_asr(sys, test, adv_party, controller->adv().value, plan.target_class, pipe,
                               root.stream("ep-asr"));
    }

    if (has_mae) {
        std::vector<std::size_t> counts;
        mae.purify(system_embeddings(sys, test.features), &counts);
        row.mae_flag_rate = static_cast<double>(counts[adv_party]) / static_cast<double>(test.size());
    }

    if (!pop_buf.empty() && !sus_buf.empty()) {
        DenseMatrix pop(pop_buf.size() / adv_w, adv_w);
        pop.data = std::move(pop_buf);
        DenseMatrix sus(sus_buf.size() / adv_w, adv_w);
        sus.data = std::move(sus_buf);
        // Fit on everything the active party received that epoch: a deployed
        // screen cannot exclude the injected rows it is trying to find.
        DenseMatrix all(pop.rows + sus.rows, adv_w);
        std::copy(pop.data.begin(), pop.data.end(), all.data.begin());
        std::copy(sus.data.begin(), sus.data.end(), all.data.begin() + pop.data.size());
        PCADetector pca;
        pca.fit(all);
        MahalanobisDetector mahal;
        mahal.fit(all);
        row.pca = detector_stats(pca, pop, sus);
        row.mahal = detector_stats(mahal, pop, sus);
        row.has_anomaly = true;
    }

    if (!c.trace_dir.empty() && controller && is_training_time_attack(mode)) {
        std::filesystem::create_directories(c.trace_dir);
        const std::string base = c.trace_dir + "/seed" + std::to_string(seed);
        export_trace(controller->trace(), base + "-trace.vflt");
        std::vector<EnvelopeSection> sections;
        DenseMatrix h(1, adv_w);
        std::copy(controller->adv().value.begin(), controller->adv().value.end(), h.data.begin());
        sections.push_back({"attack/h_adv", std::move(h)});
        DenseMatrix sel(1, controller->selected().size());
        for (std::size_t i = 0; i < sel.cols; ++i)
            sel.at(0, i) = static_cast<double>(controller->selected()[i]);
        sections.push_back({"attack/selected_ids", std::move(sel)});
        write_envelope(base + "-attack.vfld", kDatasetMagic, sections);
    }

    return row;
}

/// run_single plus the paired clean twin (same seed, attack off, stock
/// initialization) that anchors the hijacking cost measurement.
inline RunResult run_point(const ExperimentConfig& c, const PreparedData& pd, std::uint64_t seed) {
    RunResult row;
    try {
        row = run_single(c, pd, seed);
        if (c.attack.mode_enum() != AttackMode::kNone) {
            ExperimentConfig twin = c;
            twin.attack.mode = "none";
            twin.attack.ssl_init = false;
            twin.trace_dir.clear();
            row.clean_mta = run_single(twin, pd, seed).mta;
        }
    } catch (const std::exception& e) {
        row.seed = seed;
        row.mode = c.attack.mode;
        row.status = "failed";
        row.error = e.what();
    }
    return row;
}

inline std::size_t worker_count() {
    if (const char* env = std::getenv("VFLBED_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
        throw ConfigError("VFLBED_WORKERS must be a positive integer");
    }
    return 1;
}

/// Index-stable parallel map: task i always lands in slot i, so reports are
/// byte-identical regardless of scheduling.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_count(), count > 0 ? count : std::size_t{1});
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    for (std::thread& t : pool) t.join();
}

struct ExperimentReport {
    json config;  // resolved
    std::string config_hash;
    std::vector<RunResult> rows;
};

inline ExperimentReport run_experiment(const ExperimentConfig& c, const PreparedData* shared = nullptr) {
    c.validate();
    ExperimentReport rep;
    rep.config = resolved_config(c);
    rep.config_hash = config_hash(c);
    std::optional<PreparedData> owned;
    if (!shared) {
        owned = prepare_data(c);
        shared = &*owned;
    }
    rep.rows.resize(c.seeds.size());
    parallel_for(c.seeds.size(), [&](std::size_t i) {
        const auto t0 = std::chrono::steady_clock::now();
        rep.rows[i] = run_point(c, *shared, c.seeds[i]);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "[vflbed] seed " << c.seeds[i] << ": " << rep.rows[i].status << " in " << secs
                  << "s\n";
    });
    return rep;
}

// ---------------------------------------------------------------------------
// Sweeps: one axis, several values, shared dataset.
// ---------------------------------------------------------------------------

inline ExperimentConfig apply_axis(ExperimentConfig c, const std::string& axis, double value) {
    const auto as_int = [&](const char* what) {
        if (value != std::floor(value)) throw ConfigError(std::string("axis ") + what + " needs an integer");
        return static_cast<long long>(value);
    };
    const auto defense_ref = [&](const std::string& kind) -> DefenseConfig& {
        for (auto& d : c.defenses)
            if (d.kind == kind) return d;
        throw ConfigError("axis targets defense '" + kind + "' which is not in the stack");
    };
    if (axis == "filter_ratio") {
        c.attack.filter_ratio = static_cast<int>(as_int("filter_ratio"));
    } else if (axis == "attack_epoch") {
        c.attack.attack_epoch = static_cast<int>(as_int("attack_epoch"));
    } else if (axis == "top_layers") {
        c.model.top_layers = static_cast<std::size_t>(as_int("top_layers"));
    } else if (axis == "embedding_dim") {
        c.model.embedding_dim = static_cast<std::size_t>(as_int("embedding_dim"));
    } else if (axis == "epochs") {
        c.training.epochs = static_cast<int>(as_int("epochs"));
    } else if (axis == "parties") {
        c.partition.parties = static_cast<std::size_t>(as_int("parties"));
        c.partition.ratios.clear();
    } else if (axis == "feature_ratio") {
        if (c.partition.parties != 2) throw ConfigError("axis feature_ratio needs exactly 2 parties");
        if (value <= 0.0 || value >= 1.0) throw ConfigError("axis feature_ratio needs values in (0,1)");
        c.partition.ratios = {1.0 - value, value};
    } else if (axis == "dpsgd_sigma") {
        defense_ref("dpsgd").sigma = value;
    } else if (axis == "dpsgd_clip") {
        defense_ref("dpsgd").clip = value;
    } else if (axis == "gc_lambda") {
        defense_ref("gc").lambda = value;
    } else if (axis == "abl_flag_epoch") {
        defense_ref("abl").flag_epoch = static_cast<int>(as_int("abl_flag_epoch"));
    } else if (axis == "anp_prune") {
        defense_ref("anp").prune = static_cast<std::size_t>(as_int("anp_prune"));
    } else if (axis == "ep_z") {
        defense_ref("ep").z = value;
    } else {
        throw ConfigError("unknown sweep axis '" + axis + "'");
    }
    c.validate();
    return c;
}

struct SweepPoint {
    double value = 0.0;
    ExperimentReport report;
};

struct SweepReport {
    std::string axis;
    std::vector<SweepPoint> points;
};

inline SweepReport run_sweep(const ExperimentConfig& base, const std::string& axis,
                             const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    SweepReport sweep;
    sweep.axis = axis;
    // Partition geometry may change along the axis, but the raw dataset never
    // does; load it once.
    const bool geometry_axis =
        axis == "parties" || axis == "feature_ratio" || axis == "embedding_dim";
    std::optional<PreparedData> shared;
    if (!geometry_axis) shared = prepare_data(base);
    for (double v : values) {
        const ExperimentConfig point_cfg = apply_axis(base, axis, v);
        SweepPoint p;
        p.value = v;
        if (geometry_axis) {
            PreparedData pd = prepare_data(point_cfg);
            p.report = run_experiment(point_cfg, &pd);
        } else {
            p.report = run_experiment(point_cfg, &*shared);
        }
        sweep.points.push_back(std::move(p));
    }
    return sweep;
}

} // namespace vflbed

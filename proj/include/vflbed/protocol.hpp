#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vflbed/dataset.hpp"
#include "vflbed/envelope.hpp"
#include "vflbed/errors.hpp"
#include "vflbed/matrix.hpp"
#include "vflbed/mlp.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

/// One party's local state: bottom model plus its optimizer schedule.
struct PartyState {
    MLPModel bottom;
    SGDSchedule schedule;
};

/// The split system. Party 0 is the active party by convention: it also owns
/// the fusion (top) model and the labels. Every party, active included, holds
/// a feature slice and a bottom model.
struct VFLSystem {
    PartitionSpec partition;
    std::vector<PartyState> parties;
    MLPModel top;
    SGDSchedule top_schedule;
    int num_classes = 0;

    std::size_t party_count() const { return parties.size(); }
    std::size_t total_embedding_dim() const { return partition.total_embedding_dim(); }

    void validate() const {
        if (parties.size() < 2) throw ConfigError("VFLSystem: need at least 2 parties");
        if (parties.size() != partition.parties())
            throw ConfigError("VFLSystem: party count != partition");
        for (std::size_t k = 0; k < parties.size(); ++k) {
            if (parties[k].bottom.in_dim() != partition.feature_slices[k].width())
                throw ConfigError("VFLSystem: party " + std::to_string(k) + " bottom input dim mismatch");
            if (parties[k].bottom.out_dim() != partition.embedding_dims[k])
                throw ConfigError("VFLSystem: party " + std::to_string(k) + " embedding dim mismatch");
        }
        if (top.in_dim() != partition.total_embedding_dim())
            throw ConfigError("VFLSystem: top input dim != concatenated embedding dim");
        if (top.out_dim() != static_cast<std::size_t>(num_classes))
            throw ConfigError("VFLSystem: top output dim != class count");
    }
};

struct SystemShape {
    std::size_t bottom_hidden = 64;
    std::size_t top_layers = 2;   // affine layer count in the fusion model
    std::size_t top_hidden = 64;
};

/// Build a freshly initialized system. Initialization draws come from named
/// streams of `root` ("init/party<k>", "init/top"), so other consumers of the
/// same root seed cannot perturb them.
inline VFLSystem make_system(const PartitionSpec& partition, int num_classes, const SystemShape& shape,
                             double base_lr, std::size_t total_steps, const Rng& root) {
    if (num_classes < 2) throw ConfigError("make_system: need at least 2 classes");
    if (shape.top_layers < 1 || shape.top_layers > 5)
        throw ConfigError("make_system: top_layers must be in [1,5]");
    VFLSystem sys;
    sys.partition = partition;
    sys.num_classes = num_classes;
    const Rng init = root.stream("init");
    for (std::size_t k = 0; k < partition.parties(); ++k) {
        PartyState p;
        p.bottom = MLPModel::init(
            {partition.feature_slices[k].width(), shape.bottom_hidden, partition.embedding_dims[k]},
            init.stream("party").stream(k));
        p.schedule = SGDSchedule(base_lr, total_steps);
        sys.parties.push_back(std::move(p));
    }
    std::vector<std::size_t> top_dims{partition.total_embedding_dim()};
    for (std::size_t l = 0; l + 1 < shape.top_layers; ++l) top_dims.push_back(shape.top_hidden);
    top_dims.push_back(static_cast<std::size_t>(num_classes));
    sys.top = MLPModel::init(top_dims, init.stream("top"));
    sys.top_schedule = SGDSchedule(base_lr, total_steps);
    sys.validate();
    return sys;
}

/// Cut party k's block out of a concatenated embedding-space matrix
/// (embeddings or returned gradients alike).
inline DenseMatrix slice_embedding(const DenseMatrix& concat, const PartitionSpec& spec, std::size_t k) {
    if (k >= spec.parties()) throw InputError("slice_embedding: party index out of range");
    if (concat.cols != spec.total_embedding_dim())
        throw InputError("slice_embedding: width != concatenated embedding dim");
    const std::size_t off = spec.embedding_offset(k);
    return slice_cols(concat, off, off + spec.embedding_dims[k]);
}

/// What a passive adversary legitimately sees each batch on the way up: the
/// sample ids and its *own* embedding block, which it may overwrite before
/// submission.
struct AttackerSubmitView {
    int epoch;  // 1-based
    std::span<const std::size_t> ids;
    DenseMatrix& own_embeddings;  // batch x H_adv, mutable
};

/// ...and on the way down: the returned gradient block for its own slice.
struct AttackerGradientView {
    int epoch;
    std::span<const std::size_t> ids;
    const DenseMatrix& own_gradients;  // batch x H_adv
};

/// Adversary-side hook. The interface is the isolation boundary: nothing
/// reachable from these callbacks exposes labels, other parties' features or
/// embeddings, or the fusion model.
class AttackerHook {
public:
    virtual ~AttackerHook() = default;
    /// May overwrite rows of its own block; returns the batch-row indices it
    /// replaced (so the protocol can skip bottom backprop for those rows).
    virtual std::vector<std::size_t> on_submit(AttackerSubmitView view) = 0;
    virtual void on_gradient(AttackerGradientView view) = 0;
    virtual void on_epoch_end(int epoch) { (void)epoch; }
};

/// Hooks installed around one training run. All optional; an empty struct
/// reproduces the plain protocol bit-for-bit.
struct TrainHooks {
    AttackerHook* attacker = nullptr;
    std::size_t attacker_party = 1;

    /// Active-side transform of the full returned per-sample gradients
    /// (defenses). Applied after the top model consumed the clean gradient,
    /// before slices are sent back.
    std::function<void(int epoch, DenseMatrix& dh)> gradient_transform;

    /// Active-side per-sample loss-gradient scaling (loss-shaping defenses).
    /// Receives sample ids and this batch's per-sample losses; returns one
    /// multiplicative factor per sample.
    std::function<std::vector<double>(int epoch, std::span<const std::size_t> ids,
                                      const std::vector<double>& losses)>
        loss_scale;

    /// Active-side observer of submitted embeddings (detector studies).
    std::function<void(int epoch, std::span<const std::size_t> ids, const DenseMatrix& embeddings)>
        on_embeddings;

    std::ostream* event_log = nullptr;
};

struct EpochStats {
    double mean_loss = 0.0;
    std::size_t batches = 0;
    std::size_t poisoned_rows = 0;
};

/// One synchronized pass over the training split. Batch order comes from the
/// run root's "shuffle/<epoch>" stream, so it is a function of (seed, epoch)
/// only. Epochs are 1-based. Throws DivergedError on a non-finite batch loss.
inline EpochStats train_epoch(VFLSystem& sys, const LabeledDataset& train, int epoch,
                              std::size_t batch_size, const Rng& run_root, const TrainHooks& hooks = {}) {
    sys.validate();
    train.validate("train_epoch");
    if (batch_size == 0) throw ConfigError("train_epoch: batch_size must be positive");
    if (train.dim() != sys.partition.feature_slices.back().end)
        throw InputError("train_epoch: dataset width != partition feature dim");
    if (hooks.attacker && (hooks.attacker_party == 0 || hooks.attacker_party >= sys.party_count()))
        throw ConfigError("train_epoch: attacker must be a passive party");

    const std::size_t n = train.size();
    const std::vector<std::size_t> order =
        run_root.stream("shuffle").stream(static_cast<std::uint64_t>(epoch)).permutation(n);

    EpochStats stats;
    double loss_sum = 0.0;
    const std::size_t parties = sys.party_count();
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t bsz = std::min(batch_size, n - begin);
        const std::span<const std::size_t> ids(order.data() + begin, bsz);
        const DenseMatrix batch_features = gather_rows(train.features, ids);
        std::vector<int> batch_labels(bsz);
        for (std::size_t i = 0; i < bsz; ++i) batch_labels[i] = train.labels[ids[i]];

        // Up: every party embeds its slice.
        std::vector<ForwardCache> caches(parties);
        std::vector<DenseMatrix> embeddings(parties);
        std::vector<std::size_t> poisoned_rows;
        for (std::size_t k = 0; k < parties; ++k) {
            const auto& fs = sys.partition.feature_slices[k];
            const DenseMatrix xk = slice_cols(batch_features, fs.begin, fs.end);
            embeddings[k] = mlp_forward(sys.parties[k].bottom, xk, &caches[k]);
            if (hooks.attacker && k == hooks.attacker_party)
                poisoned_rows = hooks.attacker->on_submit({epoch, ids, embeddings[k]});
        }
        DenseMatrix fused(bsz, sys.total_embedding_dim());
        for (std::size_t k = 0; k < parties; ++k)
            paste_cols(fused, embeddings[k], sys.partition.embedding_offset(k));
        if (hooks.on_embeddings) hooks.on_embeddings(epoch, ids, fused);

        // Active party: fuse, score, backprop.
        ForwardCache top_cache;
        const DenseMatrix logits = mlp_forward(sys.top, fused, &top_cache);
        const SoftmaxCE ce = softmax_cross_entropy(logits, batch_labels);
        const double batch_loss = ce.mean_loss();
        if (!std::isfinite(batch_loss))
            throw DivergedError(epoch, static_cast<int>(begin / batch_size));
        loss_sum += batch_loss * static_cast<double>(bsz);

        std::vector<double> scale(bsz, 1.0);
        if (hooks.loss_scale) {
            scale = hooks.loss_scale(epoch, ids, ce.losses);
            if (scale.size() != bsz) throw InternalError("loss_scale hook returned wrong count");
        }
        DenseMatrix upstream(bsz, static_cast<std::size_t>(sys.num_classes));
        const double inv_b = 1.0 / static_cast<double>(bsz);
        for (std::size_t i = 0; i < bsz; ++i)
            for (std::size_t c = 0; c < upstream.cols; ++c)
                upstream.at(i, c) = ce.error.at(i, c) * scale[i] * inv_b;

        Gradients top_grads = mlp_backward(sys.top, top_cache, upstream);

        // Down: transform the per-sample returned gradients, then slice.
        DenseMatrix returned = top_grads.input_grad;
        if (hooks.gradient_transform) {
            hooks.gradient_transform(epoch, returned);
            if (!returned.same_shape(top_grads.input_grad))
                throw InternalError("gradient transform changed the exchange shape");
        }
        for (std::size_t k = 0; k < parties; ++k) {
            DenseMatrix up_k = slice_embedding(returned, sys.partition, k);
            if (hooks.attacker && k == hooks.attacker_party) {
                hooks.attacker->on_gradient({epoch, ids, up_k});
                // Rows the attacker replaced never went through its bottom
                // model; their gradients belong to the injected embedding.
                for (std::size_t r : poisoned_rows)
                    for (std::size_t c = 0; c < up_k.cols; ++c) up_k.at(r, c) = 0.0;
            }
            const Gradients g = mlp_backward(sys.parties[k].bottom, caches[k], up_k);
            sgd_step(sys.parties[k].bottom, g, sys.parties[k].schedule.lr());
            sys.parties[k].schedule.advance();
        }
        sgd_step(sys.top, top_grads, sys.top_schedule.lr());
        sys.top_schedule.advance();

        stats.batches += 1;
        stats.poisoned_rows += poisoned_rows.size();
        if (hooks.event_log)
            (*hooks.event_log) << "epoch=" << epoch << "\tbatch=" << (stats.batches - 1)
                               << "\tloss=" << batch_loss << "\tpoisoned=" << poisoned_rows.size()
                               << "\n";
    }
    if (hooks.attacker) hooks.attacker->on_epoch_end(epoch);
    stats.mean_loss = loss_sum / static_cast<double>(n);
    return stats;
}

/// Concatenated embeddings for full-width feature rows (no caches, no grads).
inline DenseMatrix system_embeddings(const VFLSystem& sys, const DenseMatrix& features) {
    if (features.cols != sys.partition.feature_slices.back().end)
        throw InputError("system_embeddings: feature width != partition");
    DenseMatrix fused(features.rows, sys.total_embedding_dim());
    for (std::size_t k = 0; k < sys.party_count(); ++k) {
        const auto& fs = sys.partition.feature_slices[k];
        const DenseMatrix hk = mlp_forward(sys.parties[k].bottom, slice_cols(features, fs.begin, fs.end));
        paste_cols(fused, hk, sys.partition.embedding_offset(k));
    }
    return fused;
}

inline std::vector<int> predict_from_embeddings(const MLPModel& top, const DenseMatrix& fused) {
    return argmax_rows(mlp_forward(top, fused));
}

inline std::vector<int> predict(const VFLSystem& sys, const DenseMatrix& features) {
    return predict_from_embeddings(sys.top, system_embeddings(sys, features));
}

struct EvalResult {
    double accuracy = 0.0;
    double f1 = 0.0;   // class-1 F1 (binary tasks; 0 when degenerate)
    double mta = 0.0;  // main-task metric: F1 for binary, accuracy otherwise
};

inline EvalResult score_predictions(std::span<const int> predicted, std::span<const int> truth,
                                   int num_classes) {
    if (predicted.size() != truth.size() || predicted.empty())
        throw InputError("score_predictions: prediction/label mismatch");
    std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] == truth[i]) ++correct;
        if (predicted[i] == 1 && truth[i] == 1) ++tp;
        if (predicted[i] == 1 && truth[i] != 1) ++fp;
        if (predicted[i] != 1 && truth[i] == 1) ++fn;
    }
    EvalResult r;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
    const double denom = static_cast<double>(2 * tp + fp + fn);
    r.f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    r.mta = num_classes == 2 ? r.f1 : r.accuracy;
    return r;
}

inline EvalResult evaluate(const VFLSystem& sys, const LabeledDataset& test) {
    test.validate("evaluate");
    return score_predictions(predict(sys, test.features), test.labels, sys.num_classes);
}

/// Checkpoint: partition geometry plus every model's weights.
inline void save_checkpoint(const VFLSystem& sys, const std::string& path) {
    std::vector<EnvelopeSection> sections;
    DenseMatrix meta(1, 2);
    meta.data[0] = static_cast<double>(sys.party_count());
    meta.data[1] = static_cast<double>(sys.num_classes);
    sections.push_back({"meta", meta});
    DenseMatrix slices(sys.party_count(), 2), emb(1, sys.party_count());
    for (std::size_t k = 0; k < sys.party_count(); ++k) {
        slices.at(k, 0) = static_cast<double>(sys.partition.feature_slices[k].begin);
        slices.at(k, 1) = static_cast<double>(sys.partition.feature_slices[k].end);
        emb.data[k] = static_cast<double>(sys.partition.embedding_dims[k]);
    }
    sections.push_back({"partition/slices", slices});
    sections.push_back({"partition/embedding_dims", emb});
    auto push_model = [&sections](const std::string& prefix, const MLPModel& m) {
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            sections.push_back({prefix + "/layer" + std::to_string(l) + "/w", m.layers[l].w});
            DenseMatrix b(1, m.layers[l].b.size());
            std::copy(m.layers[l].b.begin(), m.layers[l].b.end(), b.data.begin());
            sections.push_back({prefix + "/layer" + std::to_string(l) + "/b", b});
        }
    };
    for (std::size_t k = 0; k < sys.party_count(); ++k)
        push_model("party" + std::to_string(k), sys.parties[k].bottom);
    push_model("top", sys.top);
    write_envelope(path, kDatasetMagic, sections);
}

inline VFLSystem load_checkpoint(const std::string& path) {
    const auto sections = read_envelope(path, kDatasetMagic);
    const DenseMatrix& meta = find_section(sections, "meta");
    const std::size_t parties = static_cast<std::size_t>(meta.data.at(0));
    VFLSystem sys;
    sys.num_classes = static_cast<int>(meta.data.at(1));
    const DenseMatrix& slices = find_section(sections, "partition/slices");
    const DenseMatrix& emb = find_section(sections, "partition/embedding_dims");
    for (std::size_t k = 0; k < parties; ++k) {
        sys.partition.feature_slices.push_back({static_cast<std::size_t>(slices.at(k, 0)),
                                                static_cast<std::size_t>(slices.at(k, 1))});
        sys.partition.embedding_dims.push_back(static_cast<std::size_t>(emb.data[k]));
    }
    auto pull_model = [&sections](const std::string& prefix) {
        MLPModel m;
        for (std::size_t l = 0;; ++l) {
            const std::string base = prefix + "/layer" + std::to_string(l);
            bool found = false;
            for (const auto& s : sections)
                if (s.name == base + "/w") found = true;
            if (!found) break;
            Layer layer;
            layer.w = find_section(sections, base + "/w");
            const DenseMatrix& b = find_section(sections, base + "/b");
            layer.b.assign(b.data.begin(), b.data.end());
            m.layers.push_back(std::move(layer));
        }
        if (m.layers.empty()) throw IoError("checkpoint has no layers for '" + prefix + "'");
        return m;
    };
    for (std::size_t k = 0; k < parties; ++k)
        sys.parties.push_back({pull_model("party" + std::to_string(k)), SGDSchedule(0.0, 1)});
    sys.top = pull_model("top");
    sys.top_schedule = SGDSchedule(0.0, 1);
    sys.validate();
    return sys;
}

} // namespace vflbed

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "vflbed/defenses.hpp"
#include "vflbed/errors.hpp"
#include "vflbed/lia.hpp"
#include "vflbed/matrix.hpp"
#include "vflbed/mlp.hpp"
#include "vflbed/protocol.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

// ---------------------------------------------------------------------------
// Self-supervised pretraining of the adversary's bottom model (contrastive,
// corrupted-view positives over tabular features).
// ---------------------------------------------------------------------------

struct SSLConfig {
    double corruption_rate = 0.6;   // per-feature probability of marginal resampling
    double temperature = 0.07;
    std::size_t projection_dim = 16;
    int epochs = 50;
    std::size_t batch_size = 128;
    double learning_rate = 0.05;

    void validate() const {
        if (corruption_rate < 0.0 || corruption_rate > 1.0)
            throw ConfigError("ssl: corruption_rate must be in [0,1]");
        if (temperature <= 0.0) throw ConfigError("ssl: temperature must be positive");
        if (projection_dim == 0) throw ConfigError("ssl: projection_dim must be positive");
        if (epochs < 1) throw ConfigError("ssl: epochs must be >= 1");
        if (batch_size < 4) throw ConfigError("ssl: batch_size must be >= 4 for in-batch negatives");
        if (learning_rate <= 0.0) throw ConfigError("ssl: learning_rate must be positive");
    }
};

/// Corrupted view: each feature is independently resampled from the empirical
/// marginal (a uniformly random row of `marginal_source`) with probability
/// `rate`.
inline DenseMatrix corrupt_view(const DenseMatrix& anchors, const DenseMatrix& marginal_source,
                                double rate, Rng& rng) {
    if (anchors.cols != marginal_source.cols) throw InputError("corrupt_view: width mismatch");
    if (marginal_source.rows == 0) throw InputError("corrupt_view: empty marginal source");
    DenseMatrix out = anchors;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j)
            if (rng.uniform() < rate) out.at(i, j) = marginal_source.at(rng.uniform_index(marginal_source.rows), j);
    return out;
}

struct SSLBatchResult {
    double mean_loss = 0.0;
    Gradients enc_anchor, enc_view;    // encoder grads through each path
    Gradients head_anchor, head_view;  // projection-head grads through each path
};

/// InfoNCE over one batch: anchors are clean rows, candidates their corrupted
/// views; similarity is temperature-scaled cosine of projections; negatives
/// are the other in-batch views. Computes the loss and full backprop through
/// both paths (caller sums the per-path grads before stepping shared weights).
inline SSLBatchResult ssl_infonce_batch(const MLPModel& encoder, const MLPModel& head,
                                        const DenseMatrix& anchors, const DenseMatrix& views,
                                        double temperature) {
    if (!anchors.same_shape(views)) throw InputError("ssl: anchors/views shape mismatch");
    if (anchors.rows < 2) throw InputError("ssl: need at least 2 rows for negatives");
    const std::size_t b = anchors.rows;
    constexpr double kNormFloor = 1e-12;

    ForwardCache ce_a, ce_v, ch_a, ch_v;
    const DenseMatrix ea = mlp_forward(encoder, anchors, &ce_a);
    const DenseMatrix ev = mlp_forward(encoder, views, &ce_v);
    const DenseMatrix za = mlp_forward(head, ea, &ch_a);
    const DenseMatrix zv = mlp_forward(head, ev, &ch_v);

    const std::size_t p = za.cols;
    std::vector<double> na(b), nv(b);
    DenseMatrix ua(b, p), uv(b, p);
    for (std::size_t i = 0; i < b; ++i) {
        na[i] = std::max(norm(za.row(i)), kNormFloor);
        nv[i] = std::max(norm(zv.row(i)), kNormFloor);
        for (std::size_t j = 0; j < p; ++j) {
            ua.at(i, j) = za.at(i, j) / na[i];
            uv.at(i, j) = zv.at(i, j) / nv[i];
        }
    }
    DenseMatrix s = matmul_a_bt(ua, uv);
    for (double& v : s.data) v /= temperature;

    SSLBatchResult out;
    DenseMatrix ds(b, b);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double* si = s.data.data() + i * b;
        double smax = si[0];
        for (std::size_t j = 1; j < b; ++j) smax = std::max(smax, si[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < b; ++j) sum += std::exp(si[j] - smax);
        const double lse = smax + std::log(sum);
        out.mean_loss += (lse - si[i]) * inv_b;
        for (std::size_t j = 0; j < b; ++j)
            ds.at(i, j) = (std::exp(si[j] - lse) - (i == j ? 1.0 : 0.0)) * inv_b;
    }

    // dL/d(unit vectors), then back through the normalization.
    DenseMatrix gu = matmul(ds, uv);
    DenseMatrix gv = matmul_at_b(ds, ua);
    for (double& v : gu.data) v /= temperature;
    for (double& v : gv.data) v /= temperature;
    DenseMatrix dza(b, p), dzv(b, p);
    for (std::size_t i = 0; i < b; ++i) {
        const double pa = dot(ua.row(i), gu.row(i));
        const double pv = dot(uv.row(i), gv.row(i));
        for (std::size_t j = 0; j < p; ++j) {
            dza.at(i, j) = (gu.at(i, j) - ua.at(i, j) * pa) / na[i];
            dzv.at(i, j) = (gv.at(i, j) - uv.at(i, j) * pv) / nv[i];
        }
    }

    out.head_anchor = mlp_backward(head, ch_a, dza);
    out.head_view = mlp_backward(head, ch_v, dzv);
    out.enc_anchor = mlp_backward(encoder, ce_a, out.head_anchor.input_grad);
    out.enc_view = mlp_backward(encoder, ce_v, out.head_view.input_grad);
    return out;
}

namespace detail {

inline void accumulate(Gradients& into, const Gradients& from) {
    for (std::size_t l = 0; l < into.layers.size(); ++l) {
        for (std::size_t i = 0; i < into.layers[l].dw.size(); ++i)
            into.layers[l].dw.data[i] += from.layers[l].dw.data[i];
        for (std::size_t i = 0; i < into.layers[l].db.size(); ++i)
            into.layers[l].db[i] += from.layers[l].db[i];
    }
}

} // namespace detail

struct SSLResult {
    MLPModel encoder;
    double initial_loss = 0.0;
    double final_epoch_loss = 0.0;
};

/// Pretrain an encoder of shape `encoder_dims` on `features`. The projection
/// head is trained jointly and discarded. Batches with fewer than 4 rows
/// (tail of an epoch) are skipped. Deterministic in `root`.
inline SSLResult ssl_pretrain(const DenseMatrix& features, const std::vector<std::size_t>& encoder_dims,
                              const SSLConfig& cfg, const Rng& root) {
    cfg.validate();
    if (features.rows < cfg.batch_size && features.rows < 8)
        throw InputError("ssl_pretrain: too few rows");
    if (encoder_dims.front() != features.cols)
        throw ConfigError("ssl_pretrain: encoder input dim != feature width");

    MLPModel encoder = MLPModel::init(encoder_dims, root.stream("encoder-init"));
    MLPModel head = MLPModel::init({encoder_dims.back(), cfg.projection_dim, cfg.projection_dim},
                                   root.stream("head-init"));
    const std::size_t n = features.rows;
    const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    SGDSchedule sched(cfg.learning_rate, static_cast<std::size_t>(cfg.epochs) * batches_per_epoch);
    Rng order_rng = root.stream("order");
    Rng corrupt_rng = root.stream("corruption");

    SSLResult out;
    bool first = true;
    for (int e = 0; e < cfg.epochs; ++e) {
        const std::vector<std::size_t> order = order_rng.permutation(n);
        double epoch_loss = 0.0;
        std::size_t counted = 0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, n - begin);
            if (bsz < 4) continue;
            const std::span<const std::size_t> ids(order.data() + begin, bsz);
            const DenseMatrix anchors = gather_rows(features, ids);
            const DenseMatrix views = corrupt_view(anchors, features, cfg.corruption_rate, corrupt_rng);
            SSLBatchResult r = ssl_infonce_batch(encoder, head, anchors, views, cfg.temperature);
            if (!std::isfinite(r.mean_loss)) throw DivergedError(e + 1, static_cast<int>(begin / cfg.batch_size));
            if (first) {
                out.initial_loss = r.mean_loss;
                first = false;
            }
            epoch_loss += r.mean_loss * static_cast<double>(bsz);
            counted += bsz;
            detail::accumulate(r.enc_anchor, r.enc_view);
            detail::accumulate(r.head_anchor, r.head_view);
            const double lr = sched.lr();
            sgd_step(encoder, r.enc_anchor, lr);
            sgd_step(head, r.head_anchor, lr);
            sched.advance();
        }
        if (counted > 0) out.final_epoch_loss = epoch_loss / static_cast<double>(counted);
    }
    out.encoder = std::move(encoder);
    return out;
}

// ---------------------------------------------------------------------------
// Adversarial embedding state and the attack controller.
// ---------------------------------------------------------------------------

/// The injected embedding. Updated by descending the returned gradients at
/// poisoned positions; clipped scale-down-only so its norm never exceeds
/// norm_cap (the mean clean embedding norm of the previous full pass).
struct AdversarialEmbedding {
    std::vector<double> value;
    double norm_cap = 0.0;
    bool initialized = false;
    std::size_t updates = 0;

    void clip() {
        const double n = norm(value);
        if (n > norm_cap && n > 0.0) {
            const double f = norm_cap / n;
            for (double& v : value) v *= f;
        }
    }

    /// value -= mean over the given gradient rows, then clip.
    void update(const DenseMatrix& grad_rows, std::span<const std::size_t> rows) {
        if (!initialized) throw InputError("adv update: not initialized");
        if (rows.empty()) throw InputError("adv update: no poisoned rows");
        const double inv = 1.0 / static_cast<double>(rows.size());
        for (std::size_t r : rows) {
            if (r >= grad_rows.rows) throw InputError("adv update: row out of range");
            auto g = grad_rows.row(r);
            for (std::size_t j = 0; j < value.size(); ++j) value[j] -= inv * g[j];
        }
        clip();
        ++updates;
    }
};

enum class AttackMode { kNone, kReplace, kGrad, kSslGrad };

inline bool is_training_time_attack(AttackMode m) {
    return m == AttackMode::kGrad || m == AttackMode::kSslGrad;
}

struct AttackPlan {
    AttackMode mode = AttackMode::kNone;
    int target_class = 1;
    std::size_t known_id = 0;      // one train sample the adversary knows to be target-class
    int attack_epoch = 2;          // E_a: listen through this epoch, poison after
    int filter_ratio = 8;          // r: quota = floor(n / (classes * r))
    ScoringMode scoring = ScoringMode::kAveraged;

    void validate(int total_epochs, std::size_t n_train) const {
        if (mode == AttackMode::kNone) return;
        if (known_id >= n_train) throw ConfigError("attack: known_id out of range");
        if (attack_epoch < 2) throw ConfigError("attack: attack_epoch must be >= 2 (epoch 1 is skipped)");
        if (attack_epoch >= total_epochs)
            throw ConfigError("attack: attack_epoch must leave at least one poisoning epoch");
        if (filter_ratio < 1) throw ConfigError("attack: filter_ratio must be >= 1");
    }
};

/// The adversary. Lives entirely behind the passive-party interface: it sees
/// sample ids, its own embeddings (which it may overwrite) and its own
/// returned gradient slice — nothing else.
class AttackController : public AttackerHook {
public:
    AttackController(const AttackPlan& plan, std::size_t n_train, std::size_t embedding_dim,
                     int num_classes, std::function<std::vector<double>()> embed_known)
        : plan_(plan), n_(n_train), dim_(embedding_dim), classes_(num_classes),
          embed_known_(std::move(embed_known)) {
        if (plan.mode == AttackMode::kNone) throw ConfigError("AttackController: mode is none");
        if (is_training_time_attack(plan.mode))
            trace_.emplace(n_train, embedding_dim, plan.attack_epoch);
        selected_mask_.assign(n_train, false);
    }

    /// Test hook: run the whole machinery but never substitute.
    void disable_poisoning() { poison_enabled_ = false; }

    std::vector<std::size_t> on_submit(AttackerSubmitView view) override {
        if (view.own_embeddings.cols != dim_) throw InternalError("attack: embedding width drifted");
        for (std::size_t i = 0; i < view.own_embeddings.rows; ++i) {
            norm_sum_ += norm(view.own_embeddings.row(i));
            norm_count_ += 1;
        }
        std::vector<std::size_t> poisoned;
        if (view.epoch > plan_.attack_epoch) {
            if (!adv_.initialized && plan_.mode == AttackMode::kReplace) init_adv();
            if (is_training_time_attack(plan_.mode) && poison_enabled_) {
                for (std::size_t i = 0; i < view.ids.size(); ++i) {
                    if (!selected_mask_[view.ids[i]]) continue;
                    if (!adv_.initialized) init_adv();
                    std::copy(adv_.value.begin(), adv_.value.end(), view.own_embeddings.row(i).begin());
                    poisoned.push_back(i);
                }
            }
        }
        last_poisoned_ = poisoned;
        return poisoned;
    }

    void on_gradient(AttackerGradientView view) override {
        if (trace_) trace_->record(view.epoch, view.ids, view.own_gradients);
        if (view.epoch > plan_.attack_epoch && !last_poisoned_.empty())
            adv_.update(view.own_gradients, last_poisoned_);
    }

    void on_epoch_end(int epoch) override {
        if (norm_count_ > 0) {
            last_epoch_mean_norm_ = norm_sum_ / static_cast<double>(norm_count_);
            norm_sum_ = 0.0;
            norm_count_ = 0;
        }
        // The cap is a running quantity: mean clean norm of the last full
        // pass, so it follows the bottom model as its embeddings grow.
        // Updates clip against the refreshed value; the frozen replace-mode
        // vector is never re-clipped.
        if (adv_.initialized && is_training_time_attack(plan_.mode))
            adv_.norm_cap = last_epoch_mean_norm_;
        if (trace_ && epoch == plan_.attack_epoch) {
            const ScoreResult scores = score_samples(*trace_, plan_.known_id, plan_.scoring);
            selected_ = select_targets(scores.scores, classes_, plan_.filter_ratio);
            degenerate_ids_ = scores.degenerate_ids;
            for (std::size_t id : selected_) selected_mask_[id] = true;
            if (!selected_mask_[plan_.known_id])
                throw InternalError("attack: known sample fell out of the selected set");
        }
    }

    const std::vector<std::size_t>& selected() const { return selected_; }
    const std::vector<std::size_t>& degenerate_ids() const { return degenerate_ids_; }
    const AdversarialEmbedding& adv() const { return adv_; }
    const GradientTrace& trace() const {
        if (!trace_) throw InputError("attack: no trace in this mode");
        return *trace_;
    }
    bool is_selected(std::size_t id) const { return id < n_ && selected_mask_[id]; }

private:
    void init_adv() {
        adv_.value = embed_known_();
        if (adv_.value.size() != dim_) throw InternalError("attack: known embedding width drifted");
        adv_.norm_cap = last_epoch_mean_norm_;
        adv_.initialized = true;
    }

    AttackPlan plan_;
    std::size_t n_, dim_;
    int classes_;
    std::function<std::vector<double>()> embed_known_;
    std::optional<GradientTrace> trace_;
    std::vector<bool> selected_mask_;
    std::vector<std::size_t> selected_, degenerate_ids_, last_poisoned_;
    AdversarialEmbedding adv_;
    double norm_sum_ = 0.0;
    std::size_t norm_count_ = 0;
    double last_epoch_mean_norm_ = 0.0;
    bool poison_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Evaluation under substitution, defended prediction, feature saliency.
// ---------------------------------------------------------------------------

/// Inference-time defense chain: purify, then norm-constrain, then noisy vote.
/// Any stage may be absent. When the norm guard is present its constrained
/// fusion model replaces the trained one.
struct InferencePipeline {
    const MAEPurifier* mae = nullptr;
    const LimitGuard* limit = nullptr;
    const EPVote* ep = nullptr;
    double ep_z = 1.0;
    int ep_trials = 100;
    std::size_t suspected_party = 1;
    std::size_t batch_size = 32;

    bool empty() const { return !mae && !limit && !ep; }
};

inline std::vector<int> pipeline_predict(const VFLSystem& sys, const DenseMatrix& fused,
                                         const InferencePipeline& pipe, Rng ep_rng) {
    const MLPModel& top = pipe.limit ? pipe.limit->constrained_top() : sys.top;
    std::vector<int> out;
    out.reserve(fused.rows);
    for (std::size_t begin = 0; begin < fused.rows; begin += pipe.batch_size) {
        const std::size_t bsz = std::min(pipe.batch_size, fused.rows - begin);
        DenseMatrix block(bsz, fused.cols);
        std::copy(fused.data.begin() + static_cast<std::ptrdiff_t>(begin * fused.cols),
                  fused.data.begin() + static_cast<std::ptrdiff_t>((begin + bsz) * fused.cols),
                  block.data.begin());
        if (pipe.mae) block = pipe.mae->purify(block);
        if (pipe.limit) block = pipe.limit->rescale(block);
        std::vector<int> pred;
        if (pipe.ep)
            pred = pipe.ep->predict(top, block, sys.partition, pipe.suspected_party, pipe.ep_z,
                                    pipe.ep_trials, ep_rng.stream(begin));
        else
            pred = predict_from_embeddings(top, block);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

/// Main-task metric with the defense chain in the prediction path.
inline EvalResult evaluate_defended(const VFLSystem& sys, const LabeledDataset& test,
                                    const InferencePipeline& pipe, Rng ep_rng) {
    const DenseMatrix fused = system_embeddings(sys, test.features);
    return score_predictions(pipeline_predict(sys, fused, pipe, ep_rng), test.labels, sys.num_classes);
}

/// Attack success rate: over test samples whose label differs from the target
/// class, substitute the adversary's block with h_adv and count predictions
/// equal to the target class.
inline double evaluate_asr(const VFLSystem& sys, const LabeledDataset& test, std::size_t adversary,
                           std::span<const double> h_adv, int target_class,
                           const InferencePipeline& pipe = {}, Rng ep_rng = Rng(0)) {
    if (adversary == 0 || adversary >= sys.party_count())
        throw ConfigError("evaluate_asr: adversary must be a passive party");
    if (h_adv.size() != sys.partition.embedding_dims[adversary])
        throw InputError("evaluate_asr: h_adv width != adversary embedding dim");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (test.labels[i] != target_class) rows.push_back(i);
    if (rows.empty()) throw InputError("evaluate_asr: every test sample already has the target label");

    DenseMatrix fused = system_embeddings(sys, gather_rows(test.features, rows));
    const std::size_t off = sys.partition.embedding_offset(adversary);
    for (std::size_t i = 0; i < fused.rows; ++i)
        std::copy(h_adv.begin(), h_adv.end(), fused.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    const std::vector<int> pred = pipeline_predict(sys, fused, pipe, ep_rng);
    std::size_t hits = 0;
    for (int p : pred)
        if (p == target_class) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Mean per-party saliency: || d(logit of the true class)/d h_k ⊙ h_k ||
/// averaged over samples. Measures how much the fusion model leans on each
/// party's block.
inline std::vector<double> saliency_by_party(const VFLSystem& sys, const DenseMatrix& features,
                                             std::span<const int> labels) {
    if (features.rows != labels.size()) throw InputError("saliency: label count mismatch");
    const DenseMatrix fused = system_embeddings(sys, features);
    ForwardCache cache;
    const DenseMatrix logits = mlp_forward(sys.top, fused, &cache);
    DenseMatrix upstream(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
            throw InputError("saliency: label out of range");
        upstream.at(i, static_cast<std::size_t>(y)) = 1.0;
    }
    const Gradients g = mlp_backward(sys.top, cache, upstream);
    std::vector<double> out(sys.party_count(), 0.0);
    for (std::size_t k = 0; k < sys.party_count(); ++k) {
        const std::size_t off = sys.partition.embedding_offset(k);
        const std::size_t w = sys.partition.embedding_dims[k];
        for (std::size_t i = 0; i < fused.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < w; ++j) {
                const double v = g.input_grad.at(i, off + j) * fused.at(i, off + j);
                s += v * v;
            }
            out[k] += std::sqrt(s);
        }
        out[k] /= static_cast<double>(fused.rows);
    }
    return out;
}

} // namespace vflbed

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "vflbed/errors.hpp"
#include "vflbed/linalg.hpp"
#include "vflbed/matrix.hpp"
#include "vflbed/mlp.hpp"
#include "vflbed/protocol.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

// ---------------------------------------------------------------------------
// Training-time gradient transforms (applied to each returned per-sample
// gradient before it is sliced and sent back).
// ---------------------------------------------------------------------------

/// Clip the row to norm `clip`, then add isotropic Gaussian noise of scale
/// `sigma`. sigma = 0 reduces to pure norm clipping; clip = +inf to pure
/// noising. A zero row is left at zero before noising.
inline void dpsgd_row(std::span<double> row, double clip, double sigma, Rng& rng) {
    if (clip <= 0.0) throw ConfigError("dpsgd: clip must be positive");
    if (sigma < 0.0) throw ConfigError("dpsgd: sigma must be non-negative");
    const double n = norm(row);
    if (n > clip) {
        const double f = clip / n;
        for (double& v : row) v *= f;
    }
    if (sigma > 0.0)
        for (double& v : row) v += sigma * rng.normal();
}

inline void dpsgd_transform(DenseMatrix& dh, double clip, double sigma, Rng& rng) {
    for (std::size_t i = 0; i < dh.rows; ++i) dpsgd_row(dh.row(i), clip, sigma, rng);
}

/// Gradient compression: keep the ceil(lambda * len) largest-magnitude
/// entries, zero the rest. Magnitude ties resolve in favor of the lower
/// index. lambda = 1 keeps everything and is an exact no-op.
inline void gc_row(std::span<double> row, double lambda) {
    if (lambda <= 0.0 || lambda > 1.0) throw ConfigError("gc: lambda must be in (0, 1]");
    if (lambda == 1.0) return;
    const std::size_t keep =
        static_cast<std::size_t>(std::ceil(lambda * static_cast<double>(row.size())));
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&row](std::size_t a, std::size_t b) {
        const double ma = std::abs(row[a]), mb = std::abs(row[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    for (std::size_t i = keep; i < order.size(); ++i) row[order[i]] = 0.0;
}

inline void gc_transform(DenseMatrix& dh, double lambda) {
    for (std::size_t i = 0; i < dh.rows; ++i) gc_row(dh.row(i), lambda);
}

// ---------------------------------------------------------------------------
// Anti-backdoor loss shaping.
// ---------------------------------------------------------------------------

/// Two-phase loss shaping. During epochs 1..flag_epoch each per-sample loss l
/// is reshaped to |l - gamma| + gamma, which pushes suspiciously easy samples
/// (l < gamma) back up toward the floor; its gradient factor is sign(l -
/// gamma), zero exactly at the floor. Samples whose loss stayed below gamma in
/// *every* shaping epoch are flagged; from epoch flag_epoch+1 on their loss
/// gradient is sign-inverted (unlearning) while everything else trains
/// normally.
class ABLShaper {
public:
    ABLShaper(std::size_t sample_count, double gamma, int flag_epoch)
        : gamma_(gamma), flag_epoch_(flag_epoch), below_all_(sample_count, true),
          below_this_(sample_count, false) {
        if (gamma <= 0.0) throw ConfigError("abl: gamma must be positive");
        if (flag_epoch < 1) throw ConfigError("abl: flag epoch must be >= 1");
    }

    std::vector<double> loss_scale(int epoch, std::span<const std::size_t> ids,
                                   const std::vector<double>& losses) {
        roll_epoch(epoch);
        std::vector<double> scale(ids.size(), 1.0);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t id = ids[i];
            if (id >= below_all_.size()) throw InputError("abl: sample id out of range");
            if (epoch <= flag_epoch_) {
                const double d = losses[i] - gamma_;
                scale[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (losses[i] < gamma_) below_this_[id] = true;
            } else {
                scale[i] = flagged_[id] ? -1.0 : 1.0;
            }
        }
        return scale;
    }

    /// Samples flagged as persistently low-loss. Valid once the shaping phase
    /// is over (any call with epoch > flag_epoch finalizes it), or on demand.
    const std::vector<bool>& flagged() {
        finalize();
        return flagged_;
    }

    std::size_t flagged_count() {
        finalize();
        return static_cast<std::size_t>(std::count(flagged_.begin(), flagged_.end(), true));
    }

private:
    void roll_epoch(int epoch) {
        if (epoch == current_epoch_) return;
        if (current_epoch_ >= 1 && current_epoch_ <= flag_epoch_) {
            for (std::size_t i = 0; i < below_all_.size(); ++i)
                below_all_[i] = below_all_[i] && below_this_[i];
            ++shaping_epochs_seen_;
        }
        std::fill(below_this_.begin(), below_this_.end(), false);
        current_epoch_ = epoch;
        if (epoch > flag_epoch_) finalize();
    }

    void finalize() {
        if (finalized_) return;
        if (current_epoch_ >= 1 && current_epoch_ <= flag_epoch_) {
            for (std::size_t i = 0; i < below_all_.size(); ++i)
                below_all_[i] = below_all_[i] && below_this_[i];
            ++shaping_epochs_seen_;
        }
        // No shaping epoch observed -> nothing is flagged.
        flagged_ = shaping_epochs_seen_ > 0 ? below_all_
                                            : std::vector<bool>(below_all_.size(), false);
        finalized_ = true;
    }

    double gamma_;
    int flag_epoch_;
    int current_epoch_ = 0;
    int shaping_epochs_seen_ = 0;
    bool finalized_ = false;
    std::vector<bool> below_all_, below_this_, flagged_;
};

// ---------------------------------------------------------------------------
// Adversarial neuron pruning on the fusion model.
// ---------------------------------------------------------------------------

struct ANPReport {
    std::vector<double> masks;           // final mask per hidden neuron (layer order)
    std::vector<std::size_t> pruned;     // global hidden-neuron indices zeroed
    double final_loss = 0.0;
};

namespace detail {

struct ANPPass {
    double loss;
    std::vector<double> grad_mask;
    std::vector<double> grad_delta;
};

/// Forward/backward of the fusion model with per-hidden-neuron multiplicative
/// perturbation (1 + delta) on pre-activations and mask m on activations.
inline ANPPass anp_pass(const MLPModel& top, const DenseMatrix& h, std::span<const int> labels,
                        std::span<const double> mask, std::span<const double> delta) {
    const std::size_t hidden_layers = top.layers.size() - 1;
    std::vector<DenseMatrix> inputs(top.layers.size());
    std::vector<DenseMatrix> preacts(hidden_layers);
    std::vector<std::size_t> offsets(hidden_layers);
    DenseMatrix cur = h;
    std::size_t off = 0;
    for (std::size_t l = 0; l < top.layers.size(); ++l) {
        inputs[l] = cur;
        DenseMatrix z = matmul(cur, top.layers[l].w);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) z.at(i, j) += top.layers[l].b[j];
        if (l < hidden_layers) {
            offsets[l] = off;
            preacts[l] = z;
            DenseMatrix a(z.rows, z.cols);
            for (std::size_t i = 0; i < z.rows; ++i)
                for (std::size_t j = 0; j < z.cols; ++j) {
                    const double zp = (1.0 + delta[off + j]) * z.at(i, j);
                    a.at(i, j) = mask[off + j] * (zp > 0.0 ? zp : 0.0);
                }
            off += z.cols;
            cur = std::move(a);
        } else {
            cur = std::move(z);
        }
    }

    const SoftmaxCE ce = softmax_cross_entropy(cur, labels);
    ANPPass out;
    out.loss = ce.mean_loss();
    out.grad_mask.assign(mask.size(), 0.0);
    out.grad_delta.assign(delta.size(), 0.0);

    const double inv_b = 1.0 / static_cast<double>(h.rows);
    DenseMatrix dact = ce.error;
    for (double& v : dact.data) v *= inv_b;
    for (std::size_t l = top.layers.size(); l-- > 0;) {
        DenseMatrix dz;
        if (l == top.layers.size() - 1) {
            dz = std::move(dact);
        } else {
            const DenseMatrix& z = preacts[l];
            const std::size_t o = offsets[l];
            dz = DenseMatrix(z.rows, z.cols);
            for (std::size_t i = 0; i < z.rows; ++i)
                for (std::size_t j = 0; j < z.cols; ++j) {
                    const double zp = (1.0 + delta[o + j]) * z.at(i, j);
                    const double relu = zp > 0.0 ? zp : 0.0;
                    const double da = dact.at(i, j);
                    out.grad_mask[o + j] += da * relu;
                    if (zp > 0.0) {
                        out.grad_delta[o + j] += da * mask[o + j] * z.at(i, j);
                        dz.at(i, j) = da * mask[o + j] * (1.0 + delta[o + j]);
                    }
                }
        }
        if (l > 0) dact = matmul_a_bt(dz, top.layers[l].w);
    }
    return out;
}

} // namespace detail

/// Robust-mask search followed by pruning. Alternates a gradient *ascent*
/// step on the perturbation (budget [-eps, eps]) with a descent step on the
/// mask (clamped to [0,1]), then permanently zeroes the incoming weights and
/// bias of the `n_prune` hidden neurons with the smallest final mask.
inline ANPReport anp_prune(MLPModel& top, const DenseMatrix& h, std::span<const int> labels,
                           double eps, std::size_t n_prune, Rng rng, int steps = 200,
                           double lr = 0.1) {
    if (top.layers.size() < 2)
        throw ConfigError("anp: fusion model has no hidden neurons to prune");
    if (eps < 0.0) throw ConfigError("anp: perturbation budget must be non-negative");
    if (h.rows == 0) throw InputError("anp: empty calibration set");
    std::size_t hidden_total = 0;
    for (std::size_t l = 0; l + 1 < top.layers.size(); ++l) hidden_total += top.layers[l].w.cols;
    if (n_prune >= hidden_total)
        throw ConfigError("anp: cannot prune " + std::to_string(n_prune) + " of " +
                          std::to_string(hidden_total) + " hidden neurons");

    std::vector<double> mask(hidden_total, 1.0);
    std::vector<double> delta(hidden_total);
    for (double& d : delta) d = rng.uniform(-eps, eps);

    ANPReport report;
    for (int s = 0; s < steps; ++s) {
        const auto up = detail::anp_pass(top, h, labels, mask, delta);
        for (std::size_t j = 0; j < hidden_total; ++j)
            delta[j] = std::clamp(delta[j] + lr * up.grad_delta[j], -eps, eps);
        const auto down = detail::anp_pass(top, h, labels, mask, delta);
        for (std::size_t j = 0; j < hidden_total; ++j)
            mask[j] = std::clamp(mask[j] - lr * down.grad_mask[j], 0.0, 1.0);
        report.final_loss = down.loss;
    }

    std::vector<std::size_t> order(hidden_total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&mask](std::size_t a, std::size_t b) {
        if (mask[a] != mask[b]) return mask[a] < mask[b];
        return a < b;
    });
    report.masks = mask;
    report.pruned.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_prune));
    std::sort(report.pruned.begin(), report.pruned.end());
    for (std::size_t g : report.pruned) {
        std::size_t l = 0, j = g;
        while (j >= top.layers[l].w.cols) {
            j -= top.layers[l].w.cols;
            ++l;
        }
        for (std::size_t i = 0; i < top.layers[l].w.rows; ++i) top.layers[l].w.at(i, j) = 0.0;
        top.layers[l].b[j] = 0.0;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Reconstruction-based purification of submitted embeddings.
// ---------------------------------------------------------------------------

/// One masked autoencoder per party: reconstruct party p's block from the
/// other parties' blocks. At inference a block whose reconstruction error
/// exceeds its fitted mean + 3*std threshold is replaced by the
/// reconstruction; all decisions use the original (unpurified) inputs.
class MAEPurifier {
public:
    struct FitStats {
        std::vector<double> threshold;  // per party
        std::vector<double> dev_mean;
        std::vector<double> dev_std;
    };

    void fit(const DenseMatrix& embeddings, const PartitionSpec& spec, const Rng& root,
             int epochs = 100, std::size_t hidden = 64, std::size_t batch_size = 128,
             double base_lr = 0.05) {
        if (embeddings.cols != spec.total_embedding_dim())
            throw InputError("mae fit: embedding width != partition");
        if (embeddings.rows < 2) throw InputError("mae fit: need at least 2 rows");
        spec_ = spec;
        nets_.clear();
        const std::size_t n = embeddings.rows;
        const std::size_t steps = static_cast<std::size_t>(epochs) * ((n + batch_size - 1) / batch_size);
        for (std::size_t p = 0; p < spec.parties(); ++p) {
            nets_.push_back(MLPModel::init({spec.total_embedding_dim(), hidden, spec.embedding_dims[p]},
                                           root.stream("mae").stream(p)));
        }
        std::vector<SGDSchedule> sched(spec.parties(), SGDSchedule(base_lr, std::max<std::size_t>(steps, 1)));
        Rng shuffle_rng = root.stream("mae-shuffle");
        for (int e = 0; e < epochs; ++e) {
            const std::vector<std::size_t> order = shuffle_rng.permutation(n);
            for (std::size_t begin = 0; begin < n; begin += batch_size) {
                const std::size_t bsz = std::min(batch_size, n - begin);
                const std::span<const std::size_t> ids(order.data() + begin, bsz);
                const DenseMatrix batch = gather_rows(embeddings, ids);
                for (std::size_t p = 0; p < spec.parties(); ++p) {
                    const DenseMatrix in = masked(batch, p);
                    const DenseMatrix target = slice_embedding(batch, spec_, p);
                    ForwardCache cache;
                    const DenseMatrix recon = mlp_forward(nets_[p], in, &cache);
                    DenseMatrix up(recon.rows, recon.cols);
                    const double scale = 2.0 / static_cast<double>(recon.size());
                    for (std::size_t i = 0; i < recon.size(); ++i)
                        up.data[i] = scale * (recon.data[i] - target.data[i]);
                    const Gradients g = mlp_backward(nets_[p], cache, up);
                    sgd_step(nets_[p], g, sched[p].lr());
                    sched[p].advance();
                }
            }
        }

        // Nets are trained; mark fitted so the threshold pass below can reuse
        // the public deviation path.
        fitted_ = true;

        // Thresholds from the training deviations.
        stats_.threshold.assign(spec.parties(), 0.0);
        stats_.dev_mean.assign(spec.parties(), 0.0);
        stats_.dev_std.assign(spec.parties(), 0.0);
        for (std::size_t p = 0; p < spec.parties(); ++p) {
            const std::vector<double> devs = deviations(embeddings, p);
            double mean = 0.0;
            for (double d : devs) mean += d;
            mean /= static_cast<double>(devs.size());
            double var = 0.0;
            for (double d : devs) var += (d - mean) * (d - mean);
            var /= static_cast<double>(devs.size());
            stats_.dev_mean[p] = mean;
            stats_.dev_std[p] = std::sqrt(var);
            stats_.threshold[p] = mean + 3.0 * std::sqrt(var);
        }
    }

    bool fitted() const { return fitted_; }
    const FitStats& stats() const { return stats_; }

    /// Reconstruction of party p's block from the other blocks.
    DenseMatrix reconstruct(const DenseMatrix& embeddings, std::size_t p) const {
        require_fitted();
        return mlp_forward(nets_.at(p), masked(embeddings, p));
    }

    /// Per-row reconstruction error for party p's block.
    std::vector<double> deviations(const DenseMatrix& embeddings, std::size_t p) const {
        require_fitted();
        const DenseMatrix recon = reconstruct(embeddings, p);
        const DenseMatrix block = slice_embedding(embeddings, spec_, p);
        std::vector<double> out(embeddings.rows);
        for (std::size_t i = 0; i < embeddings.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < block.cols; ++j) {
                const double d = recon.at(i, j) - block.at(i, j);
                s += d * d;
            }
            out[i] = std::sqrt(s);
        }
        return out;
    }

    /// Purified copy; optionally reports how many rows were flagged per party.
    DenseMatrix purify(const DenseMatrix& embeddings, std::vector<std::size_t>* flag_counts = nullptr) const {
        require_fitted();
        DenseMatrix out = embeddings;
        if (flag_counts) flag_counts->assign(spec_.parties(), 0);
        for (std::size_t p = 0; p < spec_.parties(); ++p) {
            const DenseMatrix recon = reconstruct(embeddings, p);
            const std::vector<double> devs = deviations(embeddings, p);
            const std::size_t off = spec_.embedding_offset(p);
            for (std::size_t i = 0; i < embeddings.rows; ++i) {
                if (devs[i] > stats_.threshold[p]) {
                    if (flag_counts) ++(*flag_counts)[p];
                    for (std::size_t j = 0; j < recon.cols; ++j) out.at(i, off + j) = recon.at(i, j);
                }
            }
        }
        return out;
    }

private:
    DenseMatrix masked(const DenseMatrix& embeddings, std::size_t p) const {
        DenseMatrix in = embeddings;
        const std::size_t off = spec_.embedding_offset(p);
        for (std::size_t i = 0; i < in.rows; ++i)
            for (std::size_t j = 0; j < spec_.embedding_dims[p]; ++j) in.at(i, off + j) = 0.0;
        return in;
    }

    void require_fitted() const {
        if (!fitted_) throw InputError("mae: fit() must run first");
    }

    PartitionSpec spec_;
    std::vector<MLPModel> nets_;
    FitStats stats_;
    bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Embedding-perturbation vote at inference.
// ---------------------------------------------------------------------------

/// Repeats prediction under Gaussian noise on the suspected party's block
/// (noise scale = z * per-dimension std of that party's clean training
/// embeddings) and returns the modal class per row. z = 0 bypasses the vote
/// and is bit-identical to plain prediction.
class EPVote {
public:
    void fit(const DenseMatrix& clean_party_embeddings) {
        if (clean_party_embeddings.rows < 2) throw InputError("ep fit: need at least 2 rows");
        const MeanCov mc = mean_covariance(clean_party_embeddings);
        dim_std_.resize(clean_party_embeddings.cols);
        for (std::size_t j = 0; j < dim_std_.size(); ++j) dim_std_[j] = std::sqrt(mc.cov.at(j, j));
        fitted_ = true;
    }

    bool fitted() const { return fitted_; }
    const std::vector<double>& dim_std() const { return dim_std_; }

    std::vector<int> predict(const MLPModel& top, const DenseMatrix& fused, const PartitionSpec& spec,
                             std::size_t party, double z, int trials, Rng rng) const {
        if (!fitted_) throw InputError("ep: fit() must run first");
        if (z < 0.0) throw ConfigError("ep: z must be non-negative");
        if (trials < 1) throw ConfigError("ep: trials must be >= 1");
        if (spec.embedding_dims.at(party) != dim_std_.size())
            throw InputError("ep: fitted dimension != party embedding dim");
        if (z == 0.0) return predict_from_embeddings(top, fused);
        const std::size_t off = spec.embedding_offset(party);
        DenseMatrix votes(fused.rows, top.out_dim());
        DenseMatrix noisy = fused;
        for (int t = 0; t < trials; ++t) {
            for (std::size_t i = 0; i < fused.rows; ++i)
                for (std::size_t j = 0; j < dim_std_.size(); ++j)
                    noisy.at(i, off + j) = fused.at(i, off + j) + z * dim_std_[j] * rng.normal();
            const std::vector<int> pred = predict_from_embeddings(top, noisy);
            for (std::size_t i = 0; i < pred.size(); ++i)
                votes.at(i, static_cast<std::size_t>(pred[i])) += 1.0;
        }
        return argmax_rows(votes);  // modal class, ties to the lowest class
    }

private:
    std::vector<double> dim_std_;
    bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Norm-parity constraint between the suspected party and the active party.
// ---------------------------------------------------------------------------

/// Equalizes the suspected party's influence with the active party's: its
/// first-layer weight block is rescaled once to the active block's Frobenius
/// norm, and at inference its embedding norms are rescaled per batch so their
/// mean matches the active party's mean. Directions are preserved.
class LimitGuard {
public:
    void fit(const VFLSystem& sys, std::size_t suspected_party) {
        if (suspected_party == 0 || suspected_party >= sys.party_count())
            throw ConfigError("limit: suspected party must be a passive party");
        spec_ = sys.partition;
        party_ = suspected_party;
        top_ = sys.top;
        DenseMatrix& w0 = top_.layers[0].w;
        const double f_active = block_frobenius(w0, 0);
        const double f_party = block_frobenius(w0, party_);
        if (f_party > 0.0) {
            const double scale = f_active / f_party;
            const std::size_t off = spec_.embedding_offset(party_);
            for (std::size_t i = 0; i < spec_.embedding_dims[party_]; ++i)
                for (std::size_t j = 0; j < w0.cols; ++j) w0.at(off + i, j) *= scale;
        }
        fitted_ = true;
    }

    bool fitted() const { return fitted_; }
    const MLPModel& constrained_top() const {
        if (!fitted_) throw InputError("limit: fit() must run first");
        return top_;
    }

    /// Per-batch norm equalization of the suspected party's block.
    DenseMatrix rescale(const DenseMatrix& fused) const {
        if (!fitted_) throw InputError("limit: fit() must run first");
        if (fused.cols != spec_.total_embedding_dim()) throw InputError("limit: width mismatch");
        double mean_active = 0.0, mean_party = 0.0;
        const std::size_t off_a = spec_.embedding_offset(0), w_a = spec_.embedding_dims[0];
        const std::size_t off_p = spec_.embedding_offset(party_), w_p = spec_.embedding_dims[party_];
        for (std::size_t i = 0; i < fused.rows; ++i) {
            mean_active += norm(fused.row(i).subspan(off_a, w_a));
            mean_party += norm(fused.row(i).subspan(off_p, w_p));
        }
        DenseMatrix out = fused;
        if (mean_party > 0.0) {
            const double scale = mean_active / mean_party;
            for (std::size_t i = 0; i < out.rows; ++i)
                for (std::size_t j = 0; j < w_p; ++j) out.at(i, off_p + j) *= scale;
        }
        return out;
    }

private:
    double block_frobenius(const DenseMatrix& w0, std::size_t party) const {
        const std::size_t off = spec_.embedding_offset(party);
        double s = 0.0;
        for (std::size_t i = 0; i < spec_.embedding_dims[party]; ++i)
            for (std::size_t j = 0; j < w0.cols; ++j) s += w0.at(off + i, j) * w0.at(off + i, j);
        return std::sqrt(s);
    }

    PartitionSpec spec_;
    std::size_t party_ = 1;
    MLPModel top_;
    bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Anomaly scoring of submitted embeddings.
// ---------------------------------------------------------------------------

/// Reconstruction error against the principal subspace holding >= var_fraction
/// of the population variance.
class PCADetector {
public:
    void fit(const DenseMatrix& population, double var_fraction = 0.95) {
        if (population.rows < 2) throw InputError("pca fit: need at least 2 rows");
        if (var_fraction <= 0.0 || var_fraction > 1.0)
            throw ConfigError("pca: var fraction must be in (0, 1]");
        const MeanCov mc = mean_covariance(population);
        mean_ = mc.mean;
        const SymmetricEigen eig = symmetric_eigen(mc.cov);
        double total = 0.0;
        for (double v : eig.values) total += std::max(v, 0.0);
        std::size_t k = eig.values.size();
        if (total > 0.0) {
            double cum = 0.0;
            for (std::size_t i = 0; i < eig.values.size(); ++i) {
                cum += std::max(eig.values[i], 0.0);
                if (cum / total >= var_fraction) {
                    k = i + 1;
                    break;
                }
            }
        }
        k_ = k;
        components_ = DenseMatrix(mean_.size(), k);
        for (std::size_t r = 0; r < mean_.size(); ++r)
            for (std::size_t c = 0; c < k; ++c) components_.at(r, c) = eig.vectors.at(r, c);
        fitted_ = true;
    }

    std::size_t components() const { return k_; }

    double score(std::span<const double> e) const {
        if (!fitted_) throw InputError("pca: fit() must run first");
        if (e.size() != mean_.size()) throw InputError("pca: dimension mismatch");
        std::vector<double> c(e.size());
        for (std::size_t j = 0; j < e.size(); ++j) c[j] = e[j] - mean_[j];
        std::vector<double> proj(k_, 0.0);
        for (std::size_t i = 0; i < k_; ++i)
            for (std::size_t j = 0; j < c.size(); ++j) proj[i] += components_.at(j, i) * c[j];
        double s = 0.0;
        for (std::size_t j = 0; j < c.size(); ++j) {
            double recon = 0.0;
            for (std::size_t i = 0; i < k_; ++i) recon += components_.at(j, i) * proj[i];
            const double r = c[j] - recon;
            s += r * r;
        }
        return std::sqrt(s);
    }

private:
    std::vector<double> mean_;
    DenseMatrix components_;
    std::size_t k_ = 0;
    bool fitted_ = false;
};

/// Mahalanobis distance with a relative ridge (1e-6 * trace(cov)/d) for
/// numerical stability.
class MahalanobisDetector {
public:
    void fit(const DenseMatrix& population) {
        if (population.rows < 2) throw InputError("mahalanobis fit: need at least 2 rows");
        const MeanCov mc = mean_covariance(population);
        fit_direct(mc.mean, mc.cov);
    }

    /// Direct construction from known statistics.
    void fit_direct(std::vector<double> mean, DenseMatrix cov) {
        if (cov.rows != cov.cols || cov.rows != mean.size())
            throw InputError("mahalanobis: mean/cov shape mismatch");
        mean_ = std::move(mean);
        double trace = 0.0;
        for (std::size_t j = 0; j < cov.rows; ++j) trace += cov.at(j, j);
        if (trace <= 0.0) throw InputError("mahalanobis: degenerate population (zero variance)");
        const double ridge = 1e-6 * trace / static_cast<double>(cov.rows);
        for (std::size_t j = 0; j < cov.rows; ++j) cov.at(j, j) += ridge;
        chol_ = cholesky(cov);
        fitted_ = true;
    }

    double score(std::span<const double> e) const {
        if (!fitted_) throw InputError("mahalanobis: fit() must run first");
        if (e.size() != mean_.size()) throw InputError("mahalanobis: dimension mismatch");
        std::vector<double> c(e.size());
        for (std::size_t j = 0; j < e.size(); ++j) c[j] = e[j] - mean_[j];
        const std::vector<double> x = cholesky_solve(chol_, c);
        return std::sqrt(std::max(dot(c, x), 0.0));
    }

private:
    std::vector<double> mean_;
    DenseMatrix chol_;
    bool fitted_ = false;
};

/// Population-vs-suspect score summary for one detector.
struct DetectorStats {
    double pop_mean = 0.0;
    double pop_std = 0.0;
    double suspect_mean = 0.0;
    double suspect_max = 0.0;
    std::size_t suspect_count = 0;
};

template <typename Detector>
DetectorStats detector_stats(const Detector& det, const DenseMatrix& population,
                             const DenseMatrix& suspects) {
    DetectorStats out;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < population.rows; ++i) {
        const double s = det.score(population.row(i));
        sum += s;
        sum2 += s * s;
    }
    const double n = static_cast<double>(population.rows);
    out.pop_mean = sum / n;
    out.pop_std = std::sqrt(std::max(sum2 / n - out.pop_mean * out.pop_mean, 0.0));
    out.suspect_count = suspects.rows;
    for (std::size_t i = 0; i < suspects.rows; ++i) {
        const double s = det.score(suspects.row(i));
        out.suspect_mean += s;
        out.suspect_max = std::max(out.suspect_max, s);
    }
    if (suspects.rows > 0) out.suspect_mean /= static_cast<double>(suspects.rows);
    return out;
}

} // namespace vflbed

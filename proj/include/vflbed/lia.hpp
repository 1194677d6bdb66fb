#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vflbed/envelope.hpp"
#include "vflbed/errors.hpp"
#include "vflbed/matrix.hpp"

namespace vflbed {

/// Per-sample returned-gradient history on the adversary's slice. Epoch 1 is
/// never recorded: the first pass's gradients predate any useful signal, so
/// the window is [2, last_epoch].
class GradientTrace {
public:
    GradientTrace(std::size_t sample_count, std::size_t dim, int last_epoch)
        : n_(sample_count), dim_(dim), first_epoch_(2), last_epoch_(last_epoch) {
        if (sample_count == 0 || dim == 0) throw ConfigError("GradientTrace: empty shape");
        if (last_epoch < first_epoch_)
            throw ConfigError("GradientTrace: last epoch must be >= 2 (epoch 1 is skipped)");
        const std::size_t epochs = static_cast<std::size_t>(last_epoch_ - first_epoch_ + 1);
        store_.assign(epochs, DenseMatrix(n_, dim_));
        seen_.assign(epochs, std::vector<bool>(n_, false));
    }

    std::size_t sample_count() const { return n_; }
    std::size_t dim() const { return dim_; }
    int first_epoch() const { return first_epoch_; }
    int last_epoch() const { return last_epoch_; }
    std::size_t recorded_epochs() const { return store_.size(); }

    bool in_window(int epoch) const { return epoch >= first_epoch_ && epoch <= last_epoch_; }

    /// Record one batch worth of gradient rows. Calls outside the window are
    /// ignored (the attacker simply listens every epoch). Recording the same
    /// sample twice within an epoch is a protocol violation.
    void record(int epoch, std::span<const std::size_t> ids, const DenseMatrix& rows) {
        if (!in_window(epoch)) return;
        if (rows.rows != ids.size() || rows.cols != dim_)
            throw InputError("GradientTrace::record: shape mismatch");
        const std::size_t e = static_cast<std::size_t>(epoch - first_epoch_);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t id = ids[i];
            if (id >= n_) throw InputError("GradientTrace::record: sample id out of range");
            if (seen_[e][id])
                throw InputError("GradientTrace::record: duplicate sample " + std::to_string(id) +
                                 " in epoch " + std::to_string(epoch));
            seen_[e][id] = true;
            std::copy(rows.row(i).begin(), rows.row(i).end(), store_[e].row(id).begin());
        }
    }

    bool epoch_complete(int epoch) const {
        if (!in_window(epoch)) return false;
        const auto& s = seen_[static_cast<std::size_t>(epoch - first_epoch_)];
        return std::all_of(s.begin(), s.end(), [](bool b) { return b; });
    }

    bool complete() const {
        for (int e = first_epoch_; e <= last_epoch_; ++e)
            if (!epoch_complete(e)) return false;
        return true;
    }

    std::span<const double> gradient(int epoch, std::size_t id) const {
        if (!in_window(epoch)) throw InputError("GradientTrace::gradient: epoch outside window");
        if (id >= n_) throw InputError("GradientTrace::gradient: id out of range");
        return store_[static_cast<std::size_t>(epoch - first_epoch_)].row(id);
    }

    const DenseMatrix& epoch_matrix(int epoch) const {
        if (!in_window(epoch)) throw InputError("GradientTrace::epoch_matrix: epoch outside window");
        return store_[static_cast<std::size_t>(epoch - first_epoch_)];
    }

private:
    std::size_t n_, dim_;
    int first_epoch_, last_epoch_;
    std::vector<DenseMatrix> store_;
    std::vector<std::vector<bool>> seen_;
};

enum class ScoringMode {
    kAveraged,     // mean cosine over every recorded epoch
    kSingleEpoch,  // last recorded epoch only (ablation)
};

struct ScoreResult {
    std::vector<double> scores;               // per sample id
    std::vector<std::size_t> degenerate_ids;  // samples with a zero-norm epoch contribution
};

/// Similarity of every sample's gradient direction to the known sample's.
/// A zero-norm gradient contributes 0 for that epoch and flags the sample.
/// score(known_id) is exactly 1.0.
inline ScoreResult score_samples(const GradientTrace& trace, std::size_t known_id, ScoringMode mode) {
    if (known_id >= trace.sample_count()) throw InputError("score_samples: known_id out of range");
    if (!trace.complete())
        throw InputError("score_samples: trace incomplete; every sample must appear in every epoch");
    const int begin = mode == ScoringMode::kSingleEpoch ? trace.last_epoch() : trace.first_epoch();
    ScoreResult out;
    out.scores.assign(trace.sample_count(), 0.0);
    std::vector<bool> degenerate(trace.sample_count(), false);
    const double inv_epochs = 1.0 / static_cast<double>(trace.last_epoch() - begin + 1);
    for (int e = begin; e <= trace.last_epoch(); ++e) {
        const auto known = trace.gradient(e, known_id);
        for (std::size_t i = 0; i < trace.sample_count(); ++i) {
            bool flag = false;
            out.scores[i] += inv_epochs * cosine_similarity(known, trace.gradient(e, i), &flag);
            if (flag) degenerate[i] = true;
        }
    }
    for (std::size_t i = 0; i < trace.sample_count(); ++i)
        if (degenerate[i]) out.degenerate_ids.push_back(i);
    return out;
}

/// Target-set quota: floor(n / (classes * filter_ratio)).
inline std::size_t target_quota(std::size_t n, int classes, int filter_ratio) {
    if (classes < 2) throw ConfigError("target_quota: need at least 2 classes");
    if (filter_ratio < 1) throw ConfigError("target_quota: filter_ratio must be >= 1");
    const std::size_t q = n / (static_cast<std::size_t>(classes) * static_cast<std::size_t>(filter_ratio));
    if (q == 0) throw ConfigError("target_quota: quota is zero; lower filter_ratio or add samples");
    return q;
}

/// Top-quota ids by score, ties broken by ascending id. Returned ids are
/// sorted ascending for stable downstream iteration.
inline std::vector<std::size_t> select_targets(std::span<const double> scores, int classes,
                                               int filter_ratio) {
    const std::size_t quota = target_quota(scores.size(), classes, filter_ratio);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(quota));
    std::sort(selected.begin(), selected.end());
    return selected;
}

/// Fraction of selected ids whose true label is the target class. Ground
/// truth is used for evaluation only; the attack itself never sees it.
inline double selection_precision(std::span<const std::size_t> selected, std::span<const int> labels,
                                  int target_class) {
    if (selected.empty()) throw InputError("selection_precision: empty selection");
    std::size_t hits = 0;
    for (std::size_t id : selected) {
        if (id >= labels.size()) throw InputError("selection_precision: id out of range");
        if (labels[id] == target_class) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(selected.size());
}

/// Per-depth precision table; `run` maps a fusion-model depth to a precision.
template <typename RunFn>
std::vector<std::pair<int, double>> precision_by_depth(RunFn&& run, std::span<const int> depths) {
    std::vector<std::pair<int, double>> table;
    table.reserve(depths.size());
    for (int d : depths) table.emplace_back(d, run(d));
    return table;
}

/// Trace export for offline analysis: one id-ordered section per epoch.
inline void export_trace(const GradientTrace& trace, const std::string& path) {
    std::vector<EnvelopeSection> sections;
    DenseMatrix meta(1, 4);
    meta.data = {static_cast<double>(trace.first_epoch()), static_cast<double>(trace.last_epoch()),
                 static_cast<double>(trace.sample_count()), static_cast<double>(trace.dim())};
    sections.push_back({"meta", meta});
    for (int e = trace.first_epoch(); e <= trace.last_epoch(); ++e)
        sections.push_back({"epoch" + std::to_string(e) + "/gradients", trace.epoch_matrix(e)});
    write_envelope(path, kTraceMagic, sections);
}

inline GradientTrace import_trace(const std::string& path) {
    const auto sections = read_envelope(path, kTraceMagic);
    const DenseMatrix& meta = find_section(sections, "meta");
    const int first = static_cast<int>(meta.data.at(0));
    const int last = static_cast<int>(meta.data.at(1));
    const std::size_t n = static_cast<std::size_t>(meta.data.at(2));
    const std::size_t dim = static_cast<std::size_t>(meta.data.at(3));
    if (first != 2) throw IoError("trace file: unexpected first epoch");
    GradientTrace trace(n, dim, last);
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    for (int e = first; e <= last; ++e)
        trace.record(e, ids, find_section(sections, "epoch" + std::to_string(e) + "/gradients"));
    return trace;
}

} // namespace vflbed

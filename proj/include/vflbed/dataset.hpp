#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "vflbed/envelope.hpp"
#include "vflbed/errors.hpp"
#include "vflbed/matrix.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

struct LabeledDataset {
    DenseMatrix features;    // n x d
    std::vector<int> labels; // n, values in [0, num_classes)
    int num_classes = 0;

    std::size_t size() const { return features.rows; }
    std::size_t dim() const { return features.cols; }

    void validate(const char* who) const {
        if (features.rows != labels.size())
            throw InputError(std::string(who) + ": feature rows != label count");
        if (num_classes < 2) throw InputError(std::string(who) + ": need at least 2 classes");
        for (int y : labels)
            if (y < 0 || y >= num_classes)
                throw InputError(std::string(who) + ": label out of range");
        if (!features.all_finite()) throw InputError(std::string(who) + ": non-finite feature");
    }
};

struct TrainTest {
    LabeledDataset train;
    LabeledDataset test;
};

/// Per-column zero-mean / unit-variance using *train* statistics only; the
/// same affine map is applied to the test split. Constant columns are centered
/// and left unscaled.
/// Z-score columns on train statistics. When `columns` is given, only the
/// flagged columns are touched; the rest keep their raw values. That matters
/// for one-hot indicators: a category present in p of the rows standardizes
/// to sqrt((1-p)/p), so a 0.2% category would become a ~22-sigma spike.
/// Leaving indicators at 0/1 keeps every encoded row at a comparable scale.
inline void standardize(TrainTest& data, const std::vector<bool>* columns = nullptr) {
    const std::size_t d = data.train.dim();
    if (data.test.dim() != d) throw InputError("standardize: train/test dims differ");
    if (columns && columns->size() != d)
        throw InputError("standardize: column mask size != feature dim");
    const std::size_t n = data.train.size();
    if (n == 0) throw InputError("standardize: empty train split");
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = data.train.features.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = data.train.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    std::vector<double> inv_std(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(n));
        inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    for (DenseMatrix* m : {&data.train.features, &data.test.features})
        for (std::size_t i = 0; i < m->rows; ++i) {
            auto row = m->row(i);
            for (std::size_t j = 0; j < d; ++j) {
                if (columns && !(*columns)[j]) continue;
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
}

/// Gaussian blobs with equidistant cluster means (scaled one-hot corners, all
/// pairwise distances sqrt(2)) and balanced labels (class counts differ by at
/// most one). Test split is one fifth of n, at least one sample per class.
/// Deterministic in `seed`; splits are standardized with train statistics.
inline TrainTest synth_blobs(std::size_t n, int classes, std::size_t dim, double cluster_std,
                             std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synth_blobs: need at least 2 classes");
    if (dim < static_cast<std::size_t>(classes))
        throw ConfigError("synth_blobs: dim must be >= classes for equidistant means");
    if (n < static_cast<std::size_t>(classes)) throw ConfigError("synth_blobs: n smaller than class count");
    if (cluster_std < 0.0) throw ConfigError("synth_blobs: negative cluster_std");

    Rng root(seed);
    auto make_split = [&](std::size_t count, Rng rng) {
        LabeledDataset d_out;
        d_out.num_classes = classes;
        d_out.features = DenseMatrix(count, dim);
        d_out.labels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
            d_out.labels[i] = y;
            auto row = d_out.features.row(i);
            for (std::size_t j = 0; j < dim; ++j) row[j] = cluster_std * rng.normal();
            row[static_cast<std::size_t>(y)] += 1.0;
        }
        return d_out;
    };
    const std::size_t n_test = std::max<std::size_t>(static_cast<std::size_t>(classes),
                                                     (n + 2) / 5);
    TrainTest out{make_split(n, root.stream("train")), make_split(n_test, root.stream("test"))};
    standardize(out);
    return out;
}

/// Contiguous column range owned by one party.
struct FeatureSlice {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t width() const { return end - begin; }
};

/// Vertical split geometry: which feature columns each party holds and how
/// wide its submitted embedding is. Slices are contiguous, non-overlapping and
/// cover [0, feature_dim).
struct PartitionSpec {
    std::vector<FeatureSlice> feature_slices;
    std::vector<std::size_t> embedding_dims;

    std::size_t parties() const { return feature_slices.size(); }

    std::size_t total_embedding_dim() const {
        return std::accumulate(embedding_dims.begin(), embedding_dims.end(), std::size_t{0});
    }

    /// Column offset of party k's block inside the concatenated embedding.
    std::size_t embedding_offset(std::size_t k) const {
        std::size_t off = 0;
        for (std::size_t i = 0; i < k; ++i) off += embedding_dims[i];
        return off;
    }
};

namespace detail {

/// First K-1 shares sized round(ratio * total), remainder to the last party.
inline std::vector<std::size_t> proportional_split(std::size_t total, const std::vector<double>& ratios,
                                                   const char* what) {
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) throw ConfigError(std::string(what) + ": ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(std::string(what) + ": ratios must sum to 1");
    std::vector<std::size_t> widths(ratios.size());
    std::size_t used = 0;
    for (std::size_t k = 0; k + 1 < ratios.size(); ++k) {
        widths[k] = static_cast<std::size_t>(std::llround(ratios[k] * static_cast<double>(total)));
        used += widths[k];
    }
    if (used >= total) throw ConfigError(std::string(what) + ": split leaves nothing for the last party");
    widths.back() = total - used;
    for (std::size_t w : widths)
        if (w == 0) throw ConfigError(std::string(what) + ": a party would receive an empty share");
    return widths;
}

} // namespace detail

/// Build the vertical-partition geometry. With `proportional_embeddings` the
/// concatenated embedding keeps the same total width (parties * base dim) but
/// is divided by the same ratios as the features; otherwise every party
/// submits `base_embedding_dim` values.
inline PartitionSpec make_partition(std::size_t feature_dim, const std::vector<double>& ratios,
                                    std::size_t base_embedding_dim, bool proportional_embeddings = false) {
    if (ratios.size() < 2) throw ConfigError("make_partition: need at least 2 parties");
    if (base_embedding_dim == 0) throw ConfigError("make_partition: zero embedding dim");
    PartitionSpec spec;
    const std::vector<std::size_t> widths = detail::proportional_split(feature_dim, ratios, "feature split");
    std::size_t begin = 0;
    for (std::size_t w : widths) {
        spec.feature_slices.push_back({begin, begin + w});
        begin += w;
    }
    if (proportional_embeddings) {
        spec.embedding_dims =
            detail::proportional_split(ratios.size() * base_embedding_dim, ratios, "embedding split");
    } else {
        spec.embedding_dims.assign(ratios.size(), base_embedding_dim);
    }
    return spec;
}

/// Equal split helper: K parties, equal ratios.
inline PartitionSpec make_equal_partition(std::size_t feature_dim, std::size_t parties,
                                          std::size_t base_embedding_dim) {
    if (parties < 2) throw ConfigError("make_equal_partition: need at least 2 parties");
    std::vector<double> ratios(parties, 1.0 / static_cast<double>(parties));
    return make_partition(feature_dim, ratios, base_embedding_dim, false);
}

/// Party k's view of a row batch: only its own feature columns.
inline DenseMatrix party_features(const DenseMatrix& features, const PartitionSpec& spec, std::size_t k) {
    if (k >= spec.parties()) throw InputError("party_features: party index out of range");
    return slice_cols(features, spec.feature_slices[k].begin, spec.feature_slices[k].end);
}

/// Dataset cache. Reload with load_dataset_cache for fast reruns.
inline void save_dataset_cache(const std::string& path, const TrainTest& data) {
    auto labels_row = [](const std::vector<int>& ys) {
        DenseMatrix m(1, ys.size());
        for (std::size_t i = 0; i < ys.size(); ++i) m.data[i] = static_cast<double>(ys[i]);
        return m;
    };
    DenseMatrix meta(1, 1);
    meta.data[0] = static_cast<double>(data.train.num_classes);
    write_envelope(path, kDatasetMagic,
                   {{"meta/classes", meta},
                    {"train/features", data.train.features},
                    {"train/labels", labels_row(data.train.labels)},
                    {"test/features", data.test.features},
                    {"test/labels", labels_row(data.test.labels)}});
}

inline TrainTest load_dataset_cache(const std::string& path) {
    const auto sections = read_envelope(path, kDatasetMagic);
    auto to_labels = [](const DenseMatrix& m) {
        std::vector<int> ys(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) ys[i] = static_cast<int>(m.data[i]);
        return ys;
    };
    TrainTest out;
    const int classes = static_cast<int>(find_section(sections, "meta/classes").data.at(0));
    out.train.features = find_section(sections, "train/features");
    out.train.labels = to_labels(find_section(sections, "train/labels"));
    out.train.num_classes = classes;
    out.test.features = find_section(sections, "test/features");
    out.test.labels = to_labels(find_section(sections, "test/labels"));
    out.test.num_classes = classes;
    out.train.validate("dataset cache (train)");
    out.test.validate("dataset cache (test)");
    return out;
}

} // namespace vflbed

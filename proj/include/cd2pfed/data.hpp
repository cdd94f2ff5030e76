#pragma once

// Dataset container, synthetic source, IDX/CSV loaders, and the non-IID
// partitioners: s-class label skew, per-client feature skew, and
// per-client label-permutation concept shift.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cd2pfed/nn.hpp"

namespace cd2pfed::data {

struct Dataset {
    int num_classes = 0;
    nn::ActShape shape;  // per-sample input shape
    Matrix inputs;       // N x shape.size()
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }

    Dataset select(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.num_classes = num_classes;
        out.shape = shape;
        out.inputs = Matrix(idx.size(), inputs.cols);
        out.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy(inputs.row(idx[i]), inputs.row(idx[i]) + inputs.cols, out.inputs.row(i));
            out.labels[i] = labels[idx[i]];
        }
        return out;
    }
};

inline void validate(const Dataset& ds) {
    if (ds.num_classes < 1) throw ConfigError("dataset: num_classes must be >= 1");
    if (ds.inputs.rows != ds.labels.size()) throw ConfigError("dataset: inputs/labels length mismatch");
    if (ds.inputs.cols != static_cast<std::size_t>(ds.shape.size()))
        throw ConfigError("dataset: input width does not match shape");
    for (int y : ds.labels)
        if (y < 0 || y >= ds.num_classes) throw ConfigError("dataset: label out of range");
}

enum class Heterogeneity { label_skew, feature_skew, concept_shift };

/// Index lists into a source pool, one per client.
using Assignment = std::vector<std::vector<std::size_t>>;

namespace detail {
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

inline Assignment deal_uniform(std::size_t n, int clients, std::mt19937_64& rng) {
    auto idx = shuffled_indices(n, rng);
    Assignment out(clients);
    for (std::size_t i = 0; i < idx.size(); ++i) out[i % clients].push_back(idx[i]);
    return out;
}
}  // namespace detail

/// s-class shard assignment: each class's samples are cut into seeded
/// shards, the shard pool is shuffled, and every client draws s shards,
/// so no client sees more than s distinct labels. Sizes may be unbalanced.
inline Assignment partition_label_skew(const Dataset& ds, int clients, int s, std::uint64_t seed) {
    if (s < 1 || s > ds.num_classes) throw ConfigError("label skew: s must be in [1, num_classes]");
    const int total_shards = s * clients;
    if (total_shards < ds.num_classes)
        throw ConfigError("label skew: s*K shard slots cannot cover all classes");

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    for (auto& cls : by_class) {
        if (cls.empty()) throw ConfigError("label skew: a class has no samples");
        std::shuffle(cls.begin(), cls.end(), rng);
    }

    // shard quota per class: even split of the s*K slots, remainder to a
    // seeded-random subset of classes
    std::vector<int> quota(ds.num_classes, total_shards / ds.num_classes);
    std::vector<std::size_t> order = detail::shuffled_indices(ds.num_classes, rng);
    for (int r = 0; r < total_shards % ds.num_classes; ++r) ++quota[order[r]];

    std::vector<std::vector<std::size_t>> shards;
    for (int c = 0; c < ds.num_classes; ++c) {
        const auto& cls = by_class[c];
        int q = quota[c];
        for (int j = 0; j < q; ++j) {
            std::size_t lo = cls.size() * j / q;
            std::size_t hi = cls.size() * (j + 1) / q;
            shards.emplace_back(cls.begin() + lo, cls.begin() + hi);
        }
    }
    std::shuffle(shards.begin(), shards.end(), rng);

    Assignment out(clients);
    for (int k = 0; k < clients; ++k)
        for (int j = 0; j < s; ++j) {
            const auto& sh = shards[static_cast<std::size_t>(k) * s + j];
            out[k].insert(out[k].end(), sh.begin(), sh.end());
        }
    return out;
}

/// Uniform split with a per-client affine input shift (scale and offset
/// scale with `strength`); labels untouched. The transform is applied by
/// apply_feature_shift when shards are materialized.
inline Assignment partition_feature_skew(const Dataset& ds, int clients, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return detail::deal_uniform(ds.size(), clients, rng);
}

struct AffineShift {
    double scale = 1.0;
    double offset = 0.0;
};

inline AffineShift client_feature_shift(double strength, std::uint64_t seed, int client_id) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(client_id + 1)));
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    return {1.0 + strength * u(rng), strength * u(rng)};
}

inline void apply_feature_shift(Dataset& ds, const AffineShift& t) {
    for (auto& x : ds.inputs.data) x = t.scale * x + t.offset;
}

/// Per-client label permutation (identity for client 0), deterministic in
/// (seed, client_id).
inline std::vector<int> concept_permutation(int num_classes, std::uint64_t seed, int client_id) {
    std::vector<int> perm(num_classes);
    std::iota(perm.begin(), perm.end(), 0);
    if (client_id > 0) {
        std::mt19937_64 rng(seed ^ (0xbf58476d1ce4e5b9ULL * static_cast<std::uint64_t>(client_id)));
        std::shuffle(perm.begin(), perm.end(), rng);
    }
    return perm;
}

inline Assignment partition_concept_shift(const Dataset& ds, int clients, std::uint64_t seed) {
    if (ds.num_classes < 2) throw ConfigError("concept shift: needs at least 2 classes");
    std::mt19937_64 rng(seed);
    return detail::deal_uniform(ds.size(), clients, rng);
}

inline void apply_label_permutation(Dataset& ds, const std::vector<int>& perm) {
    for (auto& y : ds.labels) y = perm[y];
}

/// Seeded Gaussian class clusters; cluster means live in [0.25, 0.75] per
/// dimension and samples are clamped to [0, 1]. Linearly separable as the
/// spread goes to zero.
inline Dataset synth_generate(int num_classes, int dims, int per_class, double spread,
                              std::uint64_t seed) {
    if (num_classes < 2 || dims < 1 || per_class < 1)
        throw ConfigError("synth: invalid generator parameters");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mean_dist(0.25, 0.75);
    std::normal_distribution<double> noise(0.0, spread);

    Dataset ds;
    ds.num_classes = num_classes;
    ds.shape = {dims, 0, 0};
    ds.inputs = Matrix(static_cast<std::size_t>(num_classes) * per_class, dims);
    ds.labels.resize(ds.inputs.rows);

    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dims));
    for (auto& m : means)
        for (auto& v : m) v = mean_dist(rng);

    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i, ++row) {
            Scalar* x = ds.inputs.row(row);
            for (int d = 0; d < dims; ++d)
                x[d] = std::clamp(means[c][d] + noise(rng), 0.0, 1.0);
            ds.labels[row] = c;
        }

    // seeded reshuffle so class blocks are not contiguous
    auto order = detail::shuffled_indices(ds.size(), rng);
    return ds.select(order);
}

namespace detail {
inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ConfigError(path + ": truncated IDX header at byte " + std::to_string(in.tellg()));
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}
}  // namespace detail

/// Standard IDX pair (big-endian magic + dims, ubyte payload). Pixel
/// values are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ConfigError(images_path + ": cannot open");
    std::uint32_t magic = detail::read_be32(img, images_path);
    if ((magic & 0xFFFFFF00) != 0x00000800)
        throw ConfigError(images_path + ": bad IDX magic at byte 0");
    int ndims = magic & 0xFF;
    if (ndims < 1 || ndims > 4) throw ConfigError(images_path + ": unsupported IDX rank");
    std::vector<std::uint32_t> dims(ndims);
    for (auto& d : dims) d = detail::read_be32(img, images_path);

    Dataset ds;
    std::size_t n = dims[0];
    if (ndims == 1) throw ConfigError(images_path + ": image file has rank 1");
    if (ndims == 2) ds.shape = {static_cast<int>(dims[1]), 0, 0};
    else if (ndims == 3) ds.shape = {1, static_cast<int>(dims[1]), static_cast<int>(dims[2])};
    else ds.shape = {static_cast<int>(dims[3]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};

    std::size_t per = static_cast<std::size_t>(ds.shape.size());
    std::vector<unsigned char> buf(n * per);
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw ConfigError(images_path + ": truncated IDX payload at byte " + std::to_string(img.tellg()));
    ds.inputs = Matrix(n, per);
    for (std::size_t i = 0; i < buf.size(); ++i) ds.inputs.data[i] = buf[i] / 255.0;

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ConfigError(labels_path + ": cannot open");
    std::uint32_t lmagic = detail::read_be32(lab, labels_path);
    if (lmagic != 0x00000801) throw ConfigError(labels_path + ": bad IDX label magic at byte 0");
    std::uint32_t ln = detail::read_be32(lab, labels_path);
    if (ln != n) throw ConfigError(labels_path + ": label count differs from image count");
    std::vector<unsigned char> lbuf(n);
    if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n)))
        throw ConfigError(labels_path + ": truncated IDX payload at byte " + std::to_string(lab.tellg()));
    ds.labels.assign(lbuf.begin(), lbuf.end());
    ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    validate(ds);
    return ds;
}

/// CSV rows of `label,feature,...`; feature width taken from the first row.
inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> vals;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": bad numeric cell '" + cell + "'");
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (vals.size() < 2)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": row needs a label and at least one feature");
        if (!rows.empty() && vals.size() != rows[0].size() + 1)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": inconsistent column count");
        double lv = vals[0];
        if (lv < 0 || lv != std::floor(lv))
            throw ConfigError(path + ":" + std::to_string(lineno) + ": label must be a non-negative integer");
        labels.push_back(static_cast<int>(lv));
        rows.push_back({vals.begin() + 1, vals.end()});
    }
    if (rows.empty()) throw ConfigError(path + ": empty dataset");

    Dataset ds;
    ds.shape = {static_cast<int>(rows[0].size()), 0, 0};
    ds.inputs = Matrix(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), ds.inputs.row(i));
    ds.labels = std::move(labels);
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    validate(ds);
    return ds;
}

// ---- full shard pipeline --------------------------------------------------

struct HeterogeneityConfig {
    Heterogeneity kind = Heterogeneity::label_skew;
    int label_classes_per_client = 2;  // s
    double feature_strength = 0.5;
    int clients = 4;
    std::uint64_t seed = 0;
    double local_test_fraction = 0.2;
    double new_test_fraction = 0.2;
    bool with_external = false;
    double external_strength = 1.0;  // shift applied to the external pool
};

struct ClientShard {
    Dataset train;
    Dataset local_test;
    std::vector<std::size_t> train_src;       // indices into the source dataset
    std::vector<std::size_t> local_test_src;  // for the partition manifest
};

struct ShardSet {
    std::vector<ClientShard> clients;
    Dataset new_test;
    Dataset external_test;  // empty unless requested
    std::vector<std::size_t> new_test_src;
    std::vector<std::size_t> external_src;
};

/// Split off global pools, run the configured partitioner on the rest,
/// then carve each client's local test split. Client-level transforms
/// (feature shift, concept permutation) apply to train and local-test
/// alike; global pools keep the source distribution.
inline ShardSet build_shards(const Dataset& source, const HeterogeneityConfig& cfg) {
    validate(source);
    if (cfg.clients < 1) throw ConfigError("partition: need at least one client");
    if (source.size() < static_cast<std::size_t>(cfg.clients))
        throw ConfigError("partition: fewer samples than clients");
    if (cfg.local_test_fraction <= 0.0 || cfg.local_test_fraction >= 1.0 ||
        cfg.new_test_fraction <= 0.0 || cfg.new_test_fraction >= 1.0)
        throw ConfigError("partition: split fractions must be in (0,1)");

    std::mt19937_64 rng(cfg.seed);
    auto order = detail::shuffled_indices(source.size(), rng);

    std::size_t n_new = std::max<std::size_t>(1, static_cast<std::size_t>(source.size() * cfg.new_test_fraction));
    std::size_t n_ext = cfg.with_external
                            ? std::max<std::size_t>(1, static_cast<std::size_t>(source.size() * cfg.new_test_fraction))
                            : 0;

    ShardSet out;
    out.new_test_src.assign(order.begin(), order.begin() + n_new);
    out.new_test = source.select(out.new_test_src);
    if (cfg.with_external) {
        out.external_src.assign(order.begin() + n_new, order.begin() + n_new + n_ext);
        out.external_test = source.select(out.external_src);
        AffineShift shift{1.0 + 0.3 * cfg.external_strength, 0.2 * cfg.external_strength};
        apply_feature_shift(out.external_test, shift);
    }

    std::vector<std::size_t> pool(order.begin() + n_new + n_ext, order.end());
    Dataset train_pool = source.select(pool);

    Assignment assign;
    switch (cfg.kind) {
        case Heterogeneity::label_skew:
            assign = partition_label_skew(train_pool, cfg.clients, cfg.label_classes_per_client,
                                          cfg.seed + 1);
            break;
        case Heterogeneity::feature_skew:
            assign = partition_feature_skew(train_pool, cfg.clients, cfg.seed + 1);
            break;
        case Heterogeneity::concept_shift:
            assign = partition_concept_shift(train_pool, cfg.clients, cfg.seed + 1);
            break;
    }

    for (int k = 0; k < cfg.clients; ++k) {
        auto& idx = assign[k];
        if (idx.empty()) throw ConfigError("partition: client " + std::to_string(k) + " received no samples");
        std::mt19937_64 crng(cfg.seed + 1000 + static_cast<std::uint64_t>(k));
        std::shuffle(idx.begin(), idx.end(), crng);
        std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(idx.size() * cfg.local_test_fraction));
        if (n_test >= idx.size()) n_test = idx.size() - 1;

        ClientShard shard;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t src = pool[idx[i]];
            if (i < n_test) shard.local_test_src.push_back(src);
            else shard.train_src.push_back(src);
        }
        shard.local_test = train_pool.select({idx.begin(), idx.begin() + n_test});
        shard.train = train_pool.select({idx.begin() + n_test, idx.end()});

        if (cfg.kind == Heterogeneity::feature_skew) {
            AffineShift t = client_feature_shift(cfg.feature_strength, cfg.seed, k);
            apply_feature_shift(shard.train, t);
            apply_feature_shift(shard.local_test, t);
        } else if (cfg.kind == Heterogeneity::concept_shift) {
            auto perm = concept_permutation(source.num_classes, cfg.seed, k);
            apply_label_permutation(shard.train, perm);
            apply_label_permutation(shard.local_test, perm);
        }
        out.clients.push_back(std::move(shard));
    }
    return out;
}

}  // namespace cd2pfed::data

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "retlab/common.hpp"
#include "retlab/corpus.hpp"
#include "retlab/encoder.hpp"

namespace retlab {

enum class IndexMode { exact, ivf };

struct IvfParams {
    int n_clusters = 64;
    int n_probe = 8;
    int kmeans_iters = 10;
};

/// Flat store of document embeddings with exact or IVF (k-means coarse
/// quantizer + cluster probing) top-k search by dot product.
struct DenseIndex {
    std::vector<std::string> ids;  // corpus order
    int dim = 0;
    std::vector<float> embeddings;  // n x dim, row-major
    IndexMode mode = IndexMode::exact;
    IvfParams ivf;
    std::vector<float> centroids;                  // n_clusters x dim
    std::vector<std::vector<int>> cluster_members;  // doc row indices per cluster
    std::uint64_t model_fingerprint = 0;

    std::size_t size() const { return ids.size(); }

    std::span<const float> row(std::size_t i) const {
        return {&embeddings[i * std::size_t(dim)], std::size_t(dim)};
    }
};

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

inline double sqdist(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s;
}

// k-means++ seeding, fixed iteration count, empty clusters reseeded from the
// globally farthest point
inline void kmeans(const DenseIndex& index, int n_clusters, int iters, std::uint64_t seed,
                   std::vector<float>& centroids, std::vector<int>& assignment) {
    std::size_t n = index.size();
    std::size_t dim = std::size_t(index.dim);
    Rng rng(derive_seed(seed, fnv1a("kmeans")));

    centroids.assign(std::size_t(n_clusters) * dim, 0.f);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    auto set_centroid = [&](int c, std::size_t from_row) {
        std::copy_n(&index.embeddings[from_row * dim], dim, &centroids[std::size_t(c) * dim]);
    };
    set_centroid(0, rng.below(n));
    for (int c = 1; c < n_clusters; ++c) {
        std::span<const float> prev{&centroids[std::size_t(c - 1) * dim], dim};
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            min_d2[i] = std::min(min_d2[i], sqdist(index.row(i), prev));
            total += min_d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total, acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        set_centroid(c, pick);
    }

    assignment.assign(n, 0);
    for (int it = 0; it < iters; ++it) {
        // assign
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < n_clusters; ++c) {
                double d = sqdist(index.row(i), {&centroids[std::size_t(c) * dim], dim});
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }
        // update
        std::vector<double> sums(std::size_t(n_clusters) * dim, 0.0);
        std::vector<int> counts(std::size_t(n_clusters), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[std::size_t(assignment[i])];
            auto r = index.row(i);
            for (std::size_t e = 0; e < dim; ++e)
                sums[std::size_t(assignment[i]) * dim + e] += double(r[e]);
        }
        for (int c = 0; c < n_clusters; ++c) {
            if (counts[std::size_t(c)] == 0) {
                // reseed from the point farthest from its own centroid
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = sqdist(index.row(i),
                                      {&centroids[std::size_t(assignment[i]) * dim], dim});
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                set_centroid(c, far);
            } else {
                for (std::size_t e = 0; e < dim; ++e)
                    centroids[std::size_t(c) * dim + e] =
                        float(sums[std::size_t(c) * dim + e] / double(counts[std::size_t(c)]));
            }
        }
    }
    // final assignment against the updated centroids
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < n_clusters; ++c) {
            double d = sqdist(index.row(i), {&centroids[std::size_t(c) * dim], dim});
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
    }
}

}  // namespace detail

inline DenseIndex build_index(const EncoderModel& model, const std::vector<Document>& corpus,
                              IndexMode mode = IndexMode::exact, IvfParams ivf = {},
                              std::uint64_t seed = 0) {
    if (corpus.empty()) throw DataError("cannot build a dense index over an empty corpus");
    DenseIndex index;
    index.dim = model.cfg.out_dim;
    index.mode = mode;
    index.ivf = ivf;
    index.model_fingerprint = model_fingerprint(model);
    index.ids.reserve(corpus.size());
    index.embeddings.reserve(corpus.size() * std::size_t(index.dim));
    for (const auto& d : corpus) {
        index.ids.push_back(d.id);
        auto v = encode(model, hash_tokens(d.text, model.cfg.vocab_hash_size));
        index.embeddings.insert(index.embeddings.end(), v.begin(), v.end());
    }
    if (mode == IndexMode::ivf) {
        if (ivf.n_clusters < 1 || ivf.n_probe < 1 || ivf.n_probe > ivf.n_clusters)
            throw ConfigError("ivf: need 1 <= n_probe <= n_clusters");
        int n_clusters = std::min(ivf.n_clusters, int(corpus.size()));
        index.ivf.n_clusters = n_clusters;
        index.ivf.n_probe = std::min(ivf.n_probe, n_clusters);
        std::vector<int> assignment;
        detail::kmeans(index, n_clusters, ivf.kmeans_iters, seed, index.centroids, assignment);
        index.cluster_members.assign(std::size_t(n_clusters), {});
        for (std::size_t i = 0; i < assignment.size(); ++i)
            index.cluster_members[std::size_t(assignment[i])].push_back(int(i));
    }
    return index;
}

/// Top-k by dot product, ties by ascending doc id; excluded ids never appear.
/// IVF mode scans only the n_probe clusters whose centroids score highest
/// against the probe.
inline std::vector<std::pair<std::string, double>> topk(const DenseIndex& index,
                                                        std::span<const float> probe, int k,
                                                        const std::set<std::string>& exclude = {}) {
    if (k < 1) throw ConfigError("topk: k must be >= 1");
    if (int(probe.size()) != index.dim) throw ConfigError("topk: probe dimension mismatch");

    std::vector<std::pair<std::string, double>> scored;
    auto consider = [&](std::size_t row) {
        const auto& id = index.ids[row];
        if (exclude.count(id)) return;
        scored.emplace_back(id, detail::dot(probe, index.row(row)));
    };

    if (index.mode == IndexMode::exact) {
        for (std::size_t i = 0; i < index.size(); ++i) consider(i);
    } else {
        std::vector<std::pair<double, int>> cluster_rank;
        std::size_t dim = std::size_t(index.dim);
        for (int c = 0; c < index.ivf.n_clusters; ++c)
            cluster_rank.emplace_back(
                detail::dot(probe, {&index.centroids[std::size_t(c) * dim], dim}), c);
        std::sort(cluster_rank.begin(), cluster_rank.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int p = 0; p < index.ivf.n_probe; ++p)
            for (int row : index.cluster_members[std::size_t(cluster_rank[std::size_t(p)].second)])
                consider(std::size_t(row));
    }

    auto cmp = [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    if (int(scored.size()) > k) {
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), cmp);
        scored.resize(std::size_t(k));
    } else {
        std::sort(scored.begin(), scored.end(), cmp);
    }
    return scored;
}

/// Mean over probes of |approx top-k ∩ exact top-k| / k.
inline double knn_recall(const DenseIndex& index_approx, const DenseIndex& index_exact,
                         const std::vector<std::vector<float>>& probes, int k) {
    if (index_approx.model_fingerprint != index_exact.model_fingerprint)
        throw ConfigError("knn_recall: indexes built from different models");
    if (probes.empty()) throw ConfigError("knn_recall: no probes");
    double total = 0.0;
    for (const auto& p : probes) {
        auto approx = topk(index_approx, p, k);
        auto exact = topk(index_exact, p, k);
        std::set<std::string> exact_ids;
        for (const auto& [id, s] : exact) exact_ids.insert(id);
        int hits = 0;
        for (const auto& [id, s] : approx) hits += exact_ids.count(id) ? 1 : 0;
        total += double(hits) / double(k);
    }
    return total / double(probes.size());
}

// ---------------------------------------------------------------------------
// persistence: magic "RLDI" | u32 version=1 | u8 mode | u32 dim | u64 n
//   | u64 model fingerprint | ids (u32 len + bytes each) | f32 rows
//   | ivf only: u32 n_clusters, u32 n_probe, f32 centroids, u32 assignment[n]
// ---------------------------------------------------------------------------

inline void save_index(const DenseIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    out.write("RLDI", 4);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint8_t>(out, index.mode == IndexMode::exact ? 0 : 1);
    detail::write_pod<std::uint32_t>(out, std::uint32_t(index.dim));
    detail::write_pod<std::uint64_t>(out, index.size());
    detail::write_pod<std::uint64_t>(out, index.model_fingerprint);
    for (const auto& id : index.ids) {
        detail::write_pod<std::uint32_t>(out, std::uint32_t(id.size()));
        detail::write_raw(out, id.data(), id.size());
    }
    detail::write_raw(out, index.embeddings.data(), index.embeddings.size() * sizeof(float));
    if (index.mode == IndexMode::ivf) {
        detail::write_pod<std::uint32_t>(out, std::uint32_t(index.ivf.n_clusters));
        detail::write_pod<std::uint32_t>(out, std::uint32_t(index.ivf.n_probe));
        detail::write_raw(out, index.centroids.data(), index.centroids.size() * sizeof(float));
        std::vector<std::uint32_t> assignment(index.size(), 0);
        for (std::size_t c = 0; c < index.cluster_members.size(); ++c)
            for (int row : index.cluster_members[c]) assignment[std::size_t(row)] = std::uint32_t(c);
        detail::write_raw(out, assignment.data(), assignment.size() * sizeof(std::uint32_t));
    }
    if (!out) throw FormatError("index: write failed: " + path);
}

inline DenseIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    char magic[4];
    detail::read_raw(in, magic, 4);
    if (std::memcmp(magic, "RLDI", 4) != 0) throw FormatError("not a dense index file: " + path);
    if (detail::read_pod<std::uint32_t>(in) != 1)
        throw FormatError("unsupported index version in " + path);
    DenseIndex index;
    index.mode = detail::read_pod<std::uint8_t>(in) == 0 ? IndexMode::exact : IndexMode::ivf;
    index.dim = int(detail::read_pod<std::uint32_t>(in));
    auto n = detail::read_pod<std::uint64_t>(in);
    index.model_fingerprint = detail::read_pod<std::uint64_t>(in);
    index.ids.resize(n);
    for (auto& id : index.ids) {
        auto len = detail::read_pod<std::uint32_t>(in);
        id.resize(len);
        detail::read_raw(in, id.data(), len);
    }
    index.embeddings.resize(n * std::uint64_t(index.dim));
    detail::read_raw(in, index.embeddings.data(), index.embeddings.size() * sizeof(float));
    if (index.mode == IndexMode::ivf) {
        index.ivf.n_clusters = int(detail::read_pod<std::uint32_t>(in));
        index.ivf.n_probe = int(detail::read_pod<std::uint32_t>(in));
        index.centroids.resize(std::size_t(index.ivf.n_clusters) * std::size_t(index.dim));
        detail::read_raw(in, index.centroids.data(), index.centroids.size() * sizeof(float));
        std::vector<std::uint32_t> assignment(n);
        detail::read_raw(in, assignment.data(), assignment.size() * sizeof(std::uint32_t));
        index.cluster_members.assign(std::size_t(index.ivf.n_clusters), {});
        for (std::size_t i = 0; i < assignment.size(); ++i)
            index.cluster_members[assignment[i]].push_back(int(i));
    }
    return index;
}

}  // namespace retlab

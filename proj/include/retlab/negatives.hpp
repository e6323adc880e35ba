#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "retlab/common.hpp"
#include "retlab/corpus.hpp"
#include "retlab/dense_index.hpp"
#include "retlab/encoder.hpp"
#include "retlab/sparse.hpp"

namespace retlab {

enum class NegSource { bm25, query_ann, lookahead, momentum };

inline const char* to_string(NegSource s) {
    switch (s) {
        case NegSource::bm25: return "bm25";
        case NegSource::query_ann: return "query_ann";
        case NegSource::lookahead: return "lookahead";
        case NegSource::momentum: return "momentum";
    }
    return "?";
}

inline NegSource neg_source_from_string(const std::string& s) {
    if (s == "bm25") return NegSource::bm25;
    if (s == "query_ann") return NegSource::query_ann;
    if (s == "lookahead") return NegSource::lookahead;
    if (s == "momentum") return NegSource::momentum;
    throw DataError("unknown negative source: " + s);
}

struct NegativeRecord {
    std::string doc_id;
    NegSource source = NegSource::query_ann;
    int episode_introduced = 1;  // episode of the pool the record sits in
    int origin_episode = 1;      // episode where it first entered any pool
};

/// Per-query provenance-tagged negatives for one episode. Duplicates across
/// sources are retained; multiplicity acts as an implicit sampling weight.
struct NegativePool {
    int episode = 1;
    double alpha = 0.5;
    double beta = 0.5;
    std::map<std::string, std::vector<NegativeRecord>> negatives;  // query id -> records
};

using CandidateLists = std::map<std::string, std::vector<NegativeRecord>>;

namespace detail {

inline const std::set<std::string>& positives_of(const Qrels& qrels, const std::string& qid) {
    static const std::set<std::string> empty;
    auto it = qrels.find(qid);
    return it == qrels.end() ? empty : it->second;
}

inline void check_fingerprint(const DenseIndex& index, const EncoderModel& model) {
    if (index.model_fingerprint != model_fingerprint(model))
        throw ConfigError("dense index fingerprint does not match the mining model");
}

}  // namespace detail

/// ANCE-style query negatives: nearest neighbors of the query embedding,
/// positives excluded.
inline CandidateLists mine_query_negatives(const DenseIndex& index, const EncoderModel& model,
                                           const std::vector<Query>& queries, const Qrels& qrels,
                                           int depth, int episode = 1) {
    detail::check_fingerprint(index, model);
    if (depth < 1) throw ConfigError("mining depth must be >= 1");
    CandidateLists out;
    for (const auto& q : queries) {
        auto probe = encode(model, hash_tokens(q.text, model.cfg.vocab_hash_size));
        auto hits = topk(index, probe, depth, detail::positives_of(qrels, q.id));
        auto& recs = out[q.id];
        for (const auto& [did, s] : hits)
            recs.push_back({did, NegSource::query_ann, episode, episode});
    }
    return out;
}

/// Lookahead negatives: nearest neighbors of each positive document,
/// positives excluded, unioned over the query's positives.
inline CandidateLists mine_lookahead_negatives(const DenseIndex& index, const EncoderModel& model,
                                               const std::vector<Query>& queries,
                                               const std::vector<Document>& corpus,
                                               const Qrels& qrels, int depth, int episode = 1) {
    detail::check_fingerprint(index, model);
    if (depth < 1) throw ConfigError("mining depth must be >= 1");
    std::unordered_map<std::string, const Document*> by_id;
    for (const auto& d : corpus) by_id[d.id] = &d;
    CandidateLists out;
    for (const auto& q : queries) {
        const auto& pos = detail::positives_of(qrels, q.id);
        if (pos.empty()) {
            std::cerr << "warning: query " << q.id << " has no positives; skipping lookahead\n";
            continue;
        }
        std::set<std::string> seen;
        auto& recs = out[q.id];
        for (const auto& pid : pos) {
            auto it = by_id.find(pid);
            if (it == by_id.end()) throw DataError("qrels references unknown document: " + pid);
            auto probe = encode(model, hash_tokens(it->second->text, model.cfg.vocab_hash_size));
            for (const auto& [did, s] : topk(index, probe, depth, pos))
                if (seen.insert(did).second)
                    recs.push_back({did, NegSource::lookahead, episode, episode});
        }
    }
    return out;
}

inline CandidateLists mine_bm25_negatives(const SparseIndex& index,
                                          const std::vector<Query>& queries, const Qrels& qrels,
                                          int depth, int episode = 1) {
    if (depth < 1) throw ConfigError("mining depth must be >= 1");
    CandidateLists out;
    for (const auto& q : queries) {
        const auto& pos = detail::positives_of(qrels, q.id);
        auto& recs = out[q.id];
        // over-fetch so that the depth survives positive removal
        for (const auto& [did, s] : bm25_topk(index, q, depth + int(pos.size()))) {
            if (pos.count(did)) continue;
            recs.push_back({did, NegSource::bm25, episode, episode});
            if (int(recs.size()) == depth) break;
        }
    }
    return out;
}

/// Union of newly mined candidates with momentum copies of the whole
/// previous pool. Episode 1 starts from the empty pool, so its output has no
/// momentum records.
inline NegativePool build_tele_pool(const CandidateLists& new_query,
                                    const CandidateLists& new_lookahead,
                                    const NegativePool& previous_pool, double alpha, double beta,
                                    int episode) {
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0)
        throw ConfigError("alpha and beta must be in [0,1]");
    NegativePool pool;
    pool.episode = episode;
    pool.alpha = alpha;
    pool.beta = beta;
    for (const auto& [qid, recs] : new_query) {
        auto& dst = pool.negatives[qid];
        dst.insert(dst.end(), recs.begin(), recs.end());
    }
    for (const auto& [qid, recs] : new_lookahead) {
        auto& dst = pool.negatives[qid];
        dst.insert(dst.end(), recs.begin(), recs.end());
    }
    for (const auto& [qid, recs] : previous_pool.negatives) {
        auto& dst = pool.negatives[qid];
        for (auto rec : recs) {
            rec.source = NegSource::momentum;
            rec.episode_introduced = episode;  // origin_episode is preserved
            dst.push_back(rec);
        }
    }
    return pool;
}

/// Adds extra candidate lists (bm25 or query-only strategies) into a pool.
inline void add_candidates(NegativePool& pool, const CandidateLists& lists) {
    for (const auto& [qid, recs] : lists) {
        auto& dst = pool.negatives[qid];
        dst.insert(dst.end(), recs.begin(), recs.end());
    }
}

inline void check_no_positives(const NegativePool& pool, const Qrels& qrels) {
    for (const auto& [qid, recs] : pool.negatives) {
        const auto& pos = detail::positives_of(qrels, qid);
        for (const auto& r : recs)
            if (pos.count(r.doc_id))
                throw DataError("positive " + r.doc_id + " leaked into the pool of " + qid);
    }
}

/// Stratified draw of n_neg records for one query. Per slot: momentum with
/// probability alpha, otherwise a new record, which is lookahead with
/// probability beta and query-ann/bm25 otherwise. Within the chosen stratum
/// the draw is uniform without replacement; an exhausted stratum falls back
/// to the union of all remaining records. A pool smaller than n_neg is
/// sampled with replacement over the union (with a warning).
inline std::vector<NegativeRecord> sample_training_negatives(
    const std::vector<NegativeRecord>& pool_records, int n_neg, std::uint64_t rng_seed,
    double alpha = 0.5, double beta = 0.5, bool warn = true) {
    if (n_neg < 1) throw ConfigError("n_neg must be >= 1");
    if (pool_records.empty()) throw DataError("cannot sample from an empty pool");
    Rng rng(rng_seed);

    if (int(pool_records.size()) < n_neg) {
        if (warn)
            std::cerr << "warning: pool of " << pool_records.size() << " records < n_neg="
                      << n_neg << "; sampling with replacement\n";
        std::vector<NegativeRecord> out;
        for (int i = 0; i < n_neg; ++i)
            out.push_back(pool_records[rng.below(pool_records.size())]);
        return out;
    }

    // remaining record indices per stratum
    std::vector<std::size_t> momentum, lookahead, other;
    for (std::size_t i = 0; i < pool_records.size(); ++i) {
        switch (pool_records[i].source) {
            case NegSource::momentum: momentum.push_back(i); break;
            case NegSource::lookahead: lookahead.push_back(i); break;
            default: other.push_back(i); break;
        }
    }
    auto draw_from = [&](std::vector<std::size_t>& stratum) {
        std::size_t j = rng.below(stratum.size());
        std::size_t rec = stratum[j];
        stratum[j] = stratum.back();
        stratum.pop_back();
        return rec;
    };
    std::vector<NegativeRecord> out;
    std::vector<bool> taken(pool_records.size(), false);
    for (int slot = 0; slot < n_neg; ++slot) {
        std::vector<std::size_t>* stratum;
        if (rng.uniform() < alpha)
            stratum = &momentum;
        else
            stratum = rng.uniform() < beta ? &lookahead : &other;
        std::size_t rec;
        if (!stratum->empty()) {
            rec = draw_from(*stratum);
        } else {
            // fall back to the union of remaining records
            std::vector<std::size_t> remaining;
            for (std::size_t i = 0; i < pool_records.size(); ++i)
                if (!taken[i]) remaining.push_back(i);
            rec = remaining[rng.below(remaining.size())];
            for (auto* s : {&momentum, &lookahead, &other})
                std::erase(*s, rec);
        }
        taken[rec] = true;
        out.push_back(pool_records[rec]);
    }
    return out;
}

/// Drops duplicate doc ids per query, keeping the first record. Off by
/// default; multiplicity is an implicit weight.
inline NegativePool dedup_pool(const NegativePool& pool) {
    NegativePool out = pool;
    for (auto& [qid, recs] : out.negatives) {
        std::set<std::string> seen;
        std::vector<NegativeRecord> kept;
        for (const auto& r : recs)
            if (seen.insert(r.doc_id).second) kept.push_back(r);
        recs = std::move(kept);
    }
    return out;
}

// ---------------------------------------------------------------------------
// pool file format: JSONL, one object per query
//   {"query_id": ..., "episode": ..., "negatives":
//      [{"doc_id": ..., "source": ..., "origin_episode": ...}, ...]}
// An optional leading {"header": true, ...} object carries run metadata.
// ---------------------------------------------------------------------------

inline void save_pool(const NegativePool& pool, const std::string& path,
                      const std::string& config_hash = "") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    if (!config_hash.empty()) {
        nlohmann::json h{{"header", true}, {"config_hash", config_hash},
                         {"episode", pool.episode}, {"alpha", pool.alpha}, {"beta", pool.beta}};
        out << h.dump() << '\n';
    }
    for (const auto& [qid, recs] : pool.negatives) {
        nlohmann::json j;
        j["query_id"] = qid;
        j["episode"] = pool.episode;
        auto arr = nlohmann::json::array();
        for (const auto& r : recs)
            arr.push_back({{"doc_id", r.doc_id},
                           {"source", to_string(r.source)},
                           {"origin_episode", r.origin_episode}});
        j["negatives"] = std::move(arr);
        out << j.dump() << '\n';
    }
}

inline NegativePool load_pool(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    NegativePool pool;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed pool record");
        if (j.value("header", false)) {
            pool.alpha = j.value("alpha", pool.alpha);
            pool.beta = j.value("beta", pool.beta);
            if (j.contains("episode")) pool.episode = j["episode"].get<int>();
            continue;
        }
        pool.episode = j["episode"].get<int>();
        auto& recs = pool.negatives[j["query_id"].get<std::string>()];
        for (const auto& e : j["negatives"])
            recs.push_back({e["doc_id"].get<std::string>(),
                            neg_source_from_string(e["source"].get<std::string>()),
                            pool.episode, e["origin_episode"].get<int>()});
    }
    return pool;
}

}  // namespace retlab

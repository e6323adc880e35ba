#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "retlab/common.hpp"
#include "retlab/corpus.hpp"
#include "retlab/dense_index.hpp"
#include "retlab/encoder.hpp"

namespace retlab {

/// Retrieval quality of one model state. first_rank holds the rank (1-based)
/// of the first relevant document within the top K_eval, only for queries
/// where one was found.
struct EvalSnapshot {
    int episode = 0;
    std::map<std::string, int> first_rank;
    std::vector<std::string> query_ids;  // queries actually evaluated
    double mrr10 = 0.0;
    std::map<int, double> recall;  // cutoff -> recall@cutoff
    std::map<std::string, std::vector<std::string>> topk_ids;
};

/// Scores already-retrieved rankings: MRR@10 over the rank of the first
/// relevant document and Recall@k as the fraction of queries with a relevant
/// document in the top k. Queries absent from qrels are excluded with a
/// warning.
inline EvalSnapshot evaluate_rankings(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& rankings,
    const Qrels& qrels, const std::vector<int>& cutoffs) {
    EvalSnapshot snap;
    double mrr_sum = 0.0;
    std::map<int, int> recall_hits;
    for (const auto& [qid, ids] : rankings) {
        auto it = qrels.find(qid);
        if (it == qrels.end() || it->second.empty()) {
            std::cerr << "warning: query " << qid << " missing from qrels; excluded\n";
            continue;
        }
        snap.query_ids.push_back(qid);
        snap.topk_ids[qid] = ids;
        int rank = 0;
        for (std::size_t i = 0; i < ids.size() && rank == 0; ++i)
            if (it->second.count(ids[i])) rank = int(i) + 1;
        if (rank > 0) snap.first_rank[qid] = rank;
        if (rank > 0 && rank <= 10) mrr_sum += 1.0 / double(rank);
        for (int c : cutoffs)
            if (rank > 0 && rank <= c) ++recall_hits[c];
    }
    if (snap.query_ids.empty()) throw DataError("evaluate: no evaluable queries");
    double n = double(snap.query_ids.size());
    snap.mrr10 = mrr_sum / n;
    for (int c : cutoffs) snap.recall[c] = double(recall_hits[c]) / n;
    return snap;
}

inline EvalSnapshot evaluate(const DenseIndex& index, const EncoderModel& model,
                             const std::vector<Query>& queries, const Qrels& qrels, int k_eval,
                             const std::vector<int>& cutoffs) {
    if (index.model_fingerprint != model_fingerprint(model))
        throw ConfigError("evaluate: index fingerprint does not match the model");
    if (k_eval < 1) throw ConfigError("evaluate: K_eval must be >= 1");
    std::vector<std::pair<std::string, std::vector<std::string>>> rankings;
    for (const auto& q : queries) {
        auto probe = encode(model, hash_tokens(q.text, model.cfg.vocab_hash_size));
        std::vector<std::string> ids;
        for (const auto& [did, s] : topk(index, probe, k_eval)) ids.push_back(did);
        rankings.emplace_back(q.id, std::move(ids));
    }
    return evaluate_rankings(rankings, qrels, cutoffs);
}

struct ForgettingReport {
    int episode = 0;
    int k_learn = 10;
    std::set<std::string> learned_prev;
    std::set<std::string> forgotten;
    double rate = 0.0;              // |forgotten| / |learned_prev|
    double rate_all_queries = 0.0;  // |forgotten| / |all queries|
    bool empty_denominator = false;
};

/// A query is "learned" when its first relevant document ranks within
/// k_learn. Forgetting compares two consecutive snapshots over the same
/// query set.
inline ForgettingReport forgetting(const EvalSnapshot& prev, const EvalSnapshot& cur,
                                   int k_learn = 10) {
    if (prev.query_ids != cur.query_ids)
        throw ConfigError("forgetting: snapshots cover different query sets");
    ForgettingReport rep;
    rep.episode = cur.episode;
    rep.k_learn = k_learn;
    auto learned = [&](const EvalSnapshot& s, const std::string& qid) {
        auto it = s.first_rank.find(qid);
        return it != s.first_rank.end() && it->second <= k_learn;
    };
    for (const auto& qid : prev.query_ids) {
        if (!learned(prev, qid)) continue;
        rep.learned_prev.insert(qid);
        if (!learned(cur, qid)) rep.forgotten.insert(qid);
    }
    if (rep.learned_prev.empty()) {
        rep.empty_denominator = true;
        rep.rate = 0.0;
    } else {
        rep.rate = double(rep.forgotten.size()) / double(rep.learned_prev.size());
    }
    rep.rate_all_queries =
        prev.query_ids.empty() ? 0.0 : double(rep.forgotten.size()) / double(prev.query_ids.size());
    return rep;
}

/// Per-query document sets per episode; label "bm25" marks lists that came
/// from sparse retrieval, everything else is labeled "epi-<i>".
struct NegSetEpisode {
    std::string label;
    std::map<std::string, std::set<std::string>> sets;  // query id -> doc ids
};

struct CompositionReport {
    int episode = 0;
    std::map<std::string, int> histogram;  // first-encounter label -> count
    double new_fraction = 0.0;
    double lookahead_coverage = 0.0;
};

/// Labels every (query, doc) pair of the current hard-negative set by its
/// earliest appearance in history. Pairs unseen before get the current
/// episode's label and count toward new_fraction; lookahead_coverage is the
/// share of those new pairs already present in the previous episode's
/// positive-neighbor lists.
inline CompositionReport composition(
    int episode, const std::string& current_label,
    const std::map<std::string, std::set<std::string>>& current,
    const std::vector<NegSetEpisode>& history,
    const std::map<std::string, std::set<std::string>>& prev_lookahead = {}) {
    CompositionReport rep;
    rep.episode = episode;
    int total = 0, fresh = 0, covered = 0;
    for (const auto& [qid, docs] : current) {
        for (const auto& did : docs) {
            ++total;
            std::string label;
            for (const auto& epi : history) {
                auto it = epi.sets.find(qid);
                if (it != epi.sets.end() && it->second.count(did)) {
                    label = epi.label;
                    break;
                }
            }
            if (label.empty()) {
                label = current_label;
                ++fresh;
                auto it = prev_lookahead.find(qid);
                if (it != prev_lookahead.end() && it->second.count(did)) ++covered;
            }
            ++rep.histogram[label];
        }
    }
    rep.new_fraction = total == 0 ? 0.0 : double(fresh) / double(total);
    rep.lookahead_coverage = fresh == 0 ? 0.0 : double(covered) / double(fresh);
    return rep;
}

struct SwingReport {
    // (query id, doc id) -> membership bits per episode
    std::map<std::pair<std::string, std::string>, std::vector<char>> membership;
    std::map<std::pair<std::string, std::string>, int> events;
    int total_events = 0;
    double swing_rate = 0.0;  // events per query
    // synthetic data: episode-major mean presence per group_tag
    std::map<std::string, std::vector<double>> group_presence;
};

/// Counts swing events in a membership sequence: any 3-episode window whose
/// membership flips twice (present-absent-present or the reverse), windows
/// overlapping.
inline int count_swing_events(const std::vector<char>& seq) {
    int n = 0;
    for (std::size_t t = 0; t + 2 < seq.size(); ++t)
        if (seq[t] != seq[t + 1] && seq[t + 1] != seq[t + 2]) ++n;
    return n;
}

inline SwingReport swing(const std::vector<std::map<std::string, std::set<std::string>>>& history,
                         const std::map<std::string, std::string>& group_tags = {}) {
    if (history.size() < 3) throw ConfigError("swing: need at least 3 episodes of history");
    SwingReport rep;
    std::set<std::string> queries;
    for (const auto& epi : history)
        for (const auto& [qid, docs] : epi) {
            queries.insert(qid);
            for (const auto& did : docs) rep.membership[{qid, did}];  // touch
        }
    for (auto& [key, seq] : rep.membership) {
        seq.resize(history.size(), 0);
        for (std::size_t e = 0; e < history.size(); ++e) {
            auto it = history[e].find(key.first);
            seq[e] = (it != history[e].end() && it->second.count(key.second)) ? 1 : 0;
        }
        int ev = count_swing_events(seq);
        rep.events[key] = ev;
        rep.total_events += ev;
    }
    rep.swing_rate = queries.empty() ? 0.0 : double(rep.total_events) / double(queries.size());

    if (!group_tags.empty()) {
        // per-group mean membership per episode
        std::map<std::string, std::vector<double>> sums;
        std::map<std::string, int> counts;
        for (const auto& [key, seq] : rep.membership) {
            auto it = group_tags.find(key.second);
            if (it == group_tags.end()) continue;
            auto& acc = sums[it->second];
            acc.resize(history.size(), 0.0);
            for (std::size_t e = 0; e < seq.size(); ++e) acc[e] += double(seq[e]);
            ++counts[it->second];
        }
        for (auto& [tag, acc] : sums) {
            for (auto& v : acc) v /= double(counts[tag]);
            rep.group_presence[tag] = acc;
        }
    }
    return rep;
}

/// Writes "<id><TAB>f32 f32 ..." rows preceded by a one-line header.
inline void dump_embeddings(const EncoderModel& model,
                            const std::vector<std::pair<std::string, std::string>>& items,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    out << "# retlab-embeddings v1 dim=" << model.cfg.out_dim << '\n';
    out.precision(9);
    for (const auto& [id, text] : items) {
        auto v = encode(model, hash_tokens(text, model.cfg.vocab_hash_size));
        out << id;
        for (float x : v) out << '\t' << x;
        out << '\n';
    }
}

}  // namespace retlab

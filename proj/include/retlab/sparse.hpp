#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "retlab/common.hpp"
#include "retlab/corpus.hpp"

namespace retlab {

/// Okapi BM25 inverted index.
struct SparseIndex {
    // token -> (doc id, term frequency), sorted by doc id
    std::map<std::string, std::vector<std::pair<std::string, int>>> postings;
    std::unordered_map<std::string, int> doc_lengths;
    double avg_doc_length = 0.0;
    int n_docs = 0;
    double k1 = 0.9;
    double b = 0.4;
};

inline SparseIndex build_sparse_index(const std::vector<Document>& corpus, double k1 = 0.9,
                                      double b = 0.4) {
    if (corpus.empty()) throw DataError("cannot build a sparse index over an empty corpus");
    if (k1 < 0.0 || b < 0.0 || b > 1.0) throw ConfigError("bm25 parameters out of range");
    SparseIndex index;
    index.k1 = k1;
    index.b = b;
    index.n_docs = int(corpus.size());
    double total_len = 0.0;
    for (const auto& doc : corpus) {
        auto toks = tokenize(doc.text);
        index.doc_lengths[doc.id] = int(toks.size());
        total_len += double(toks.size());
        std::map<std::string, int> tf;
        for (const auto& t : toks) ++tf[t];
        for (const auto& [t, f] : tf) index.postings[t].emplace_back(doc.id, f);
    }
    index.avg_doc_length = total_len / double(index.n_docs);
    for (auto& [t, plist] : index.postings)
        std::sort(plist.begin(), plist.end(),
                  [](const auto& a, const auto& b2) { return a.first < b2.first; });
    return index;
}

/// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); the +1 inside the log keeps
/// scores non-negative on tiny corpora.
inline double bm25_idf(int n_docs, int df) {
    return std::log(1.0 + (double(n_docs) - double(df) + 0.5) / (double(df) + 0.5));
}

inline double bm25_term_score(const SparseIndex& index, int tf, int df, int doc_len) {
    double norm = 1.0 - index.b + index.b * double(doc_len) / index.avg_doc_length;
    return bm25_idf(index.n_docs, df) * double(tf) / (double(tf) + index.k1 * norm);
}

/// Top-k documents by BM25; ties broken by ascending doc id. Only documents
/// with positive score are returned, so the list may be shorter than k.
inline std::vector<std::pair<std::string, double>> bm25_topk(const SparseIndex& index,
                                                             const Query& query, int k) {
    if (k < 1) throw ConfigError("bm25_topk: k must be >= 1");
    std::map<std::string, double> scores;
    std::map<std::string, int> seen;  // collapse repeated query terms
    for (const auto& t : tokenize(query.text)) ++seen[t];
    for (const auto& [t, qtf] : seen) {
        auto it = index.postings.find(t);
        if (it == index.postings.end()) continue;
        int df = int(it->second.size());
        for (const auto& [did, tf] : it->second)
            scores[did] += double(qtf) * bm25_term_score(index, tf, df, index.doc_lengths.at(did));
    }
    std::vector<std::pair<std::string, double>> ranked;
    for (const auto& [did, s] : scores)
        if (s > 0.0) ranked.emplace_back(did, s);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b2) {
        if (a.second != b2.second) return a.second > b2.second;
        return a.first < b2.first;
    });
    if (int(ranked.size()) > k) ranked.resize(std::size_t(k));
    return ranked;
}

inline void save_sparse_index(const SparseIndex& index, const std::string& path,
                              const std::string& config_hash = "") {
    nlohmann::json j;
    j["format"] = "retlab-sparse-index";
    j["version"] = 1;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    j["k1"] = index.k1;
    j["b"] = index.b;
    j["n_docs"] = index.n_docs;
    j["avg_doc_length"] = index.avg_doc_length;
    j["doc_lengths"] = nlohmann::json::object();
    for (const auto& [did, len] : std::map<std::string, int>(index.doc_lengths.begin(),
                                                             index.doc_lengths.end()))
        j["doc_lengths"][did] = len;
    j["postings"] = nlohmann::json::object();
    for (const auto& [t, plist] : index.postings) {
        auto arr = nlohmann::json::array();
        for (const auto& [did, tf] : plist) arr.push_back({did, tf});
        j["postings"][t] = std::move(arr);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    out << j.dump() << '\n';
}

inline SparseIndex load_sparse_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("format", "") != "retlab-sparse-index")
        throw FormatError("not a sparse index file: " + path);
    if (j.value("version", 0) != 1)
        throw FormatError("unsupported sparse index version in " + path);
    SparseIndex index;
    index.k1 = j["k1"].get<double>();
    index.b = j["b"].get<double>();
    index.n_docs = j["n_docs"].get<int>();
    index.avg_doc_length = j["avg_doc_length"].get<double>();
    for (const auto& [did, len] : j["doc_lengths"].items())
        index.doc_lengths[did] = len.get<int>();
    for (const auto& [t, arr] : j["postings"].items()) {
        auto& plist = index.postings[t];
        for (const auto& e : arr)
            plist.emplace_back(e[0].get<std::string>(), e[1].get<int>());
    }
    return index;
}

}  // namespace retlab

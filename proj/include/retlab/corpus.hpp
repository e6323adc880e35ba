#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "retlab/common.hpp"

namespace retlab {

struct Document {
    std::string id;
    std::string text;
    std::string group_tag;  // synthetic data only: "positive", "group-N", "filler"
};

struct Query {
    std::string id;
    std::string text;
};

/// query id -> set of relevant document ids
using Qrels = std::map<std::string, std::set<std::string>>;

enum class CorpusFormat { tsv, jsonl };

/// Lowercased word tokens: splits on anything that is not an ASCII
/// alphanumeric byte; non-ASCII bytes are kept as word characters.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        bool word = std::isalnum(c) != 0 || c >= 0x80;
        if (word) {
            cur.push_back(char(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {

inline void check_duplicate_ids(const std::vector<Document>& docs) {
    std::unordered_set<std::string> seen;
    for (const auto& d : docs) {
        if (!seen.insert(d.id).second)
            throw DataError("duplicate document id: " + d.id);
    }
}

inline std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    return in;
}

inline std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

}  // namespace detail

inline std::vector<Document> load_corpus(const std::string& path, CorpusFormat format) {
    auto in = detail::open_for_read(path);
    std::vector<Document> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        if (format == CorpusFormat::tsv) {
            auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw DataError(path + ":" + std::to_string(lineno) + ": expected id<TAB>text");
            docs.push_back({line.substr(0, tab), line.substr(tab + 1), ""});
        } else {
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("text") ||
                !j["id"].is_string() || !j["text"].is_string())
                throw DataError(path + ":" + std::to_string(lineno) + ": malformed jsonl record");
            Document d{j["id"].get<std::string>(), j["text"].get<std::string>(), ""};
            if (j.contains("group_tag")) d.group_tag = j["group_tag"].get<std::string>();
            docs.push_back(std::move(d));
        }
        if (docs.back().text.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": empty document text");
    }
    detail::check_duplicate_ids(docs);
    return docs;
}

inline void save_corpus(const std::vector<Document>& docs, const std::string& path,
                        CorpusFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    for (const auto& d : docs) {
        if (format == CorpusFormat::tsv) {
            out << d.id << '\t' << d.text << '\n';
        } else {
            nlohmann::json j{{"id", d.id}, {"text", d.text}};
            if (!d.group_tag.empty()) j["group_tag"] = d.group_tag;
            out << j.dump() << '\n';
        }
    }
}

inline std::vector<Query> load_queries(const std::string& path) {
    auto in = detail::open_for_read(path);
    std::vector<Query> queries;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected id<TAB>text");
        Query q{line.substr(0, tab), line.substr(tab + 1)};
        if (q.text.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": empty query text");
        if (!seen.insert(q.id).second) throw DataError("duplicate query id: " + q.id);
        queries.push_back(std::move(q));
    }
    return queries;
}

inline void save_queries(const std::vector<Query>& queries, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    for (const auto& q : queries) out << q.id << '\t' << q.text << '\n';
}

/// TREC-style qrels: query_id <TAB> 0 <TAB> doc_id <TAB> relevance.
/// Lines with relevance >= 1 mark positives; others are ignored.
inline Qrels load_qrels(const std::string& path) {
    auto in = detail::open_for_read(path);
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string qid, zero, did, rel;
        if (!std::getline(ss, qid, '\t') || !std::getline(ss, zero, '\t') ||
            !std::getline(ss, did, '\t') || !std::getline(ss, rel, '\t'))
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected query_id<TAB>0<TAB>doc_id<TAB>relevance");
        int r = 0;
        try {
            r = std::stoi(rel);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad relevance: " + rel);
        }
        if (r >= 1) qrels[qid].insert(did);
    }
    return qrels;
}

inline void save_qrels(const Qrels& qrels, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    for (const auto& [qid, dids] : qrels)
        for (const auto& did : dids) out << qid << "\t0\t" << did << "\t1\n";
}

/// Parameters of the planted-distractor synthetic benchmark. Each query is
/// assigned `groups_per_query` disjoint aspect-token sets; its one positive
/// contains every aspect, while a group-g distractor contains only aspect g.
/// Filler documents contain noise tokens that never overlap any query.
struct SyntheticSpec {
    int n_queries = 50;
    int groups_per_query = 2;
    int docs_per_group = 5;
    int n_filler_docs = 500;
    int vocab_size = 4000;
    int aspect_tokens_per_query = 8;
    double noise_rate = 0.0;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_queries < 1 || groups_per_query < 1 || docs_per_group < 1 || n_filler_docs < 1 ||
            vocab_size < 1 || aspect_tokens_per_query < 1)
            throw ConfigError("synthetic spec: all counts must be >= 1");
        if (noise_rate < 0.0 || noise_rate > 1.0)
            throw ConfigError("synthetic spec: noise_rate must be in [0,1]");
        if (aspect_tokens_per_query < groups_per_query)
            throw ConfigError("synthetic spec: need at least one aspect token per group");
    }
};

struct SyntheticData {
    std::vector<Document> corpus;
    std::vector<Query> queries;
    Qrels qrels;
};

namespace detail {

inline std::string join(const std::vector<std::string>& toks) {
    std::string s;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) s.push_back(' ');
        s += toks[i];
    }
    return s;
}

}  // namespace detail

/// Deterministic generator for the synthetic benchmark. The vocabulary is
/// split in two halves: aspect tokens (drawn per query) and noise tokens
/// (fillers and the noise_rate injections), so fillers share zero tokens
/// with any query by construction.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    int n_aspect_vocab = spec.vocab_size / 2;
    int n_noise_vocab = spec.vocab_size - n_aspect_vocab;
    if (n_aspect_vocab < spec.aspect_tokens_per_query)
        throw ConfigError("synthetic spec: vocab too small for disjoint aspect sets");
    if (n_noise_vocab < 1) throw ConfigError("synthetic spec: vocab too small for noise tokens");

    auto aspect_token = [](int i) { return "asp" + std::to_string(i); };
    auto noise_token = [&](int i) { return "nse" + std::to_string(i); };

    Rng rng(derive_seed(spec.seed, fnv1a("synthetic")));
    SyntheticData data;

    auto add_noise = [&](std::vector<std::string>& toks) {
        std::size_t base = toks.size();
        for (std::size_t i = 0; i < base; ++i)
            if (rng.uniform() < spec.noise_rate)
                toks.push_back(noise_token(int(rng.below(std::uint64_t(n_noise_vocab)))));
    };

    for (int k = 0; k < spec.n_queries; ++k) {
        std::string qid = "q" + std::to_string(k);

        // sample disjoint aspect tokens for this query
        std::vector<std::string> aspects;
        std::set<int> used;
        while (int(aspects.size()) < spec.aspect_tokens_per_query) {
            int t = int(rng.below(std::uint64_t(n_aspect_vocab)));
            if (used.insert(t).second) aspects.push_back(aspect_token(t));
        }
        // partition round-robin into groups_per_query disjoint sets
        std::vector<std::vector<std::string>> group_tokens(std::size_t(spec.groups_per_query));
        for (std::size_t i = 0; i < aspects.size(); ++i)
            group_tokens[i % std::size_t(spec.groups_per_query)].push_back(aspects[i]);

        data.queries.push_back({qid, detail::join(aspects)});

        std::vector<std::string> pos_toks = aspects;
        add_noise(pos_toks);
        std::string pos_id = qid + "-pos";
        data.corpus.push_back({pos_id, detail::join(pos_toks), "positive"});
        data.qrels[qid].insert(pos_id);

        for (int g = 0; g < spec.groups_per_query; ++g) {
            for (int j = 0; j < spec.docs_per_group; ++j) {
                std::vector<std::string> toks = group_tokens[std::size_t(g)];
                add_noise(toks);
                data.corpus.push_back({qid + "-g" + std::to_string(g) + "-" + std::to_string(j),
                                       detail::join(toks),
                                       "group-" + std::to_string(g)});
            }
        }
    }

    int filler_len = std::max(2, spec.aspect_tokens_per_query);
    for (int j = 0; j < spec.n_filler_docs; ++j) {
        std::vector<std::string> toks;
        for (int i = 0; i < filler_len; ++i)
            toks.push_back(noise_token(int(rng.below(std::uint64_t(n_noise_vocab)))));
        data.corpus.push_back({"filler-" + std::to_string(j), detail::join(toks), "filler"});
    }

    return data;
}

}  // namespace retlab

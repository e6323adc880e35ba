#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "retlab/common.hpp"
#include "retlab/diagnostics.hpp"
#include "retlab/trainer.hpp"

namespace retlab {

/// Everything analyze needs from one persisted episode.
struct EpisodeSnapshotFile {
    int episode = 0;
    std::string config_hash;
    EvalSnapshot snapshot;
    std::string hard_negative_label;
    std::map<std::string, std::set<std::string>> hard_negatives;
    std::map<std::string, std::set<std::string>> lookahead;
};

inline EpisodeSnapshotFile load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open snapshot: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FormatError("malformed snapshot: " + path);
    EpisodeSnapshotFile s;
    s.episode = j["episode"].get<int>();
    s.config_hash = j.value("config_hash", "");
    s.snapshot.episode = s.episode;
    s.snapshot.mrr10 = j["mrr10"].get<double>();
    for (const auto& [c, r] : j["recall"].items()) s.snapshot.recall[std::stoi(c)] = r.get<double>();
    for (const auto& [qid, r] : j["first_rank"].items()) s.snapshot.first_rank[qid] = r.get<int>();
    for (const auto& qid : j["query_ids"]) s.snapshot.query_ids.push_back(qid.get<std::string>());
    s.hard_negative_label = j["hard_negative_label"].get<std::string>();
    s.hard_negatives = detail::sets_from_json(j["hard_negatives"]);
    s.lookahead = detail::sets_from_json(j["lookahead"]);
    return s;
}

inline std::vector<EpisodeSnapshotFile> load_run_snapshots(const std::string& run_dir) {
    namespace fs = std::filesystem;
    std::vector<EpisodeSnapshotFile> out;
    for (int i = 1;; ++i) {
        fs::path p = fs::path(run_dir) / ("epi-" + std::to_string(i)) / "snapshot.json";
        if (!fs::exists(p)) break;
        out.push_back(load_snapshot(p.string()));
    }
    if (out.empty()) throw DataError("no episode snapshots under " + run_dir);
    return out;
}

/// CSV contract written by the analyze stage (headers documented in the
/// README). All files start with a `# config_hash=` comment line.
struct AnalysisOutputs {
    std::vector<EvalSnapshot> snapshots;
    std::vector<ForgettingReport> forgetting_reports;  // episodes 2..E
    std::vector<CompositionReport> composition_reports;
    SwingReport swing_report;  // only valid when episodes >= 3
    bool has_swing = false;
};

inline AnalysisOutputs analyze_run(const std::vector<EpisodeSnapshotFile>& episodes, int k_learn,
                                   const std::map<std::string, std::string>& group_tags = {}) {
    AnalysisOutputs out;
    std::vector<NegSetEpisode> history;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto& epi = episodes[e];
        out.snapshots.push_back(epi.snapshot);
        if (e > 0)
            out.forgetting_reports.push_back(
                forgetting(episodes[e - 1].snapshot, epi.snapshot, k_learn));
        out.composition_reports.push_back(composition(
            epi.episode, epi.hard_negative_label, epi.hard_negatives, history,
            e > 0 ? episodes[e - 1].lookahead : std::map<std::string, std::set<std::string>>{}));
        history.push_back({epi.hard_negative_label, epi.hard_negatives});
    }
    if (episodes.size() >= 3) {
        std::vector<std::map<std::string, std::set<std::string>>> sets;
        for (const auto& epi : episodes) sets.push_back(epi.hard_negatives);
        out.swing_report = swing(sets, group_tags);
        out.has_swing = true;
    }
    return out;
}

inline void write_analysis_csvs(const AnalysisOutputs& a, const std::string& run_dir,
                                const std::string& config_hash) {
    namespace fs = std::filesystem;
    auto open = [&](const std::string& name) {
        std::ofstream out((fs::path(run_dir) / name).string(), std::ios::binary);
        if (!out) throw FormatError("cannot write " + name + " under " + run_dir);
        out << "# config_hash=" << config_hash << '\n';
        out.precision(10);
        return out;
    };

    {
        auto out = open("metrics.csv");
        out << "episode,mrr10";
        if (!a.snapshots.empty())
            for (const auto& [c, r] : a.snapshots.front().recall) out << ",recall@" << c;
        out << '\n';
        for (const auto& s : a.snapshots) {
            out << s.episode << ',' << s.mrr10;
            for (const auto& [c, r] : s.recall) out << ',' << r;
            out << '\n';
        }
    }
    {
        auto out = open("forgetting.csv");
        out << "episode,learned_prev,forgotten,rate,rate_all_queries,empty_denominator\n";
        for (const auto& f : a.forgetting_reports)
            out << f.episode << ',' << f.learned_prev.size() << ',' << f.forgotten.size() << ','
                << f.rate << ',' << f.rate_all_queries << ',' << (f.empty_denominator ? 1 : 0)
                << '\n';
    }
    {
        auto out = open("composition.csv");
        out << "episode,label,count,share\n";
        for (const auto& c : a.composition_reports) {
            int total = 0;
            for (const auto& [lbl, n] : c.histogram) total += n;
            for (const auto& [lbl, n] : c.histogram)
                out << c.episode << ',' << lbl << ',' << n << ','
                    << (total ? double(n) / double(total) : 0.0) << '\n';
            out << c.episode << ",new_fraction,0," << c.new_fraction << '\n';
            out << c.episode << ",lookahead_coverage,0," << c.lookahead_coverage << '\n';
        }
    }
    {
        auto out = open("swing.csv");
        out << "query_id,doc_id,membership,events\n";
        if (a.has_swing)
            for (const auto& [key, seq] : a.swing_report.membership) {
                out << key.first << ',' << key.second << ',';
                for (char b : seq) out << int(b);
                out << ',' << a.swing_report.events.at(key) << '\n';
            }
    }
    {
        auto out = open("swing_groups.csv");
        out << "episode,group_tag,mean_presence\n";
        if (a.has_swing)
            for (const auto& [tag, series] : a.swing_report.group_presence)
                for (std::size_t e = 0; e < series.size(); ++e)
                    out << (e + 1) << ',' << tag << ',' << series[e] << '\n';
    }
    {
        auto out = open("per_query_mrr.csv");
        out << "episode,query_id,reciprocal_rank\n";
        for (const auto& s : a.snapshots)
            for (const auto& qid : s.query_ids) {
                auto it = s.first_rank.find(qid);
                double rr = (it != s.first_rank.end() && it->second <= 10)
                                ? 1.0 / double(it->second)
                                : 0.0;
                out << s.episode << ',' << qid << ',' << rr << '\n';
            }
    }
}

}  // namespace retlab

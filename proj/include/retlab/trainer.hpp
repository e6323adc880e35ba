#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retlab/common.hpp"
#include "retlab/corpus.hpp"
#include "retlab/dense_index.hpp"
#include "retlab/diagnostics.hpp"
#include "retlab/encoder.hpp"
#include "retlab/negatives.hpp"
#include "retlab/sparse.hpp"

namespace retlab {

enum class Strategy {
    ance_bm25_warmup,  // bm25 negatives at episode 1, self negatives after
    tele,              // query + lookahead + momentum, no sparse dependency
    qneg_only,
    tele_no_momentum,
    tele_no_lookahead,
    tele_plus_bm25,
};

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::ance_bm25_warmup: return "ance_bm25_warmup";
        case Strategy::tele: return "tele";
        case Strategy::qneg_only: return "qneg_only";
        case Strategy::tele_no_momentum: return "tele_no_momentum";
        case Strategy::tele_no_lookahead: return "tele_no_lookahead";
        case Strategy::tele_plus_bm25: return "tele_plus_bm25";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    for (auto v : {Strategy::ance_bm25_warmup, Strategy::tele, Strategy::qneg_only,
                   Strategy::tele_no_momentum, Strategy::tele_no_lookahead,
                   Strategy::tele_plus_bm25})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown strategy: " + s);
}

enum class TrainMode { from_scratch, continue_training };

inline const char* to_string(TrainMode m) {
    return m == TrainMode::from_scratch ? "from_scratch" : "continue";
}

inline TrainMode mode_from_string(const std::string& s) {
    if (s == "from_scratch") return TrainMode::from_scratch;
    if (s == "continue") return TrainMode::continue_training;
    throw ConfigError("unknown mode: " + s);
}

inline const char* to_string(LrKind k) {
    switch (k) {
        case LrKind::constant: return "constant";
        case LrKind::linear_warmup_decay: return "linear_warmup_decay";
        case LrKind::cyclical: return "cyclical";
    }
    return "?";
}

inline LrKind lr_kind_from_string(const std::string& s) {
    for (auto v : {LrKind::constant, LrKind::linear_warmup_decay, LrKind::cyclical})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown schedule kind: " + s);
}

struct RunConfig {
    int episodes = 3;
    Strategy strategy = Strategy::tele;
    TrainMode mode = TrainMode::from_scratch;
    double refresh_fraction = 1.0;  // 0.1 reproduces the early-refresh recipe
    int epochs_per_episode = 3;
    int batch_queries = 8;
    int n_neg = 31;
    double alpha = 0.5;
    double beta = 0.5;
    double tau = 1.0;
    bool in_batch_negatives = false;
    bool dedup = false;
    LrKind schedule = LrKind::cyclical;
    double base_lr = 2e-3;
    double warmup_fraction = 0.1;
    int mine_depth = 200;
    int diag_depth = 20;  // hard-negative set size for composition/swing
    int k_eval = 100;
    std::vector<int> recall_cutoffs = {5, 10, 100};
    int k_learn = 10;
    double bm25_k1 = 0.9;
    double bm25_b = 0.4;
    EncoderConfig encoder;
    std::uint64_t seed = 42;

    void validate() const {
        if (episodes < 1) throw ConfigError("episodes must be >= 1");
        if (refresh_fraction <= 0.0 || refresh_fraction > 1.0)
            throw ConfigError("refresh_fraction must be in (0,1]");
        if (epochs_per_episode < 0) throw ConfigError("epochs_per_episode must be >= 0");
        if (batch_queries < 1) throw ConfigError("batch_queries must be >= 1");
        if (n_neg < 1) throw ConfigError("n_neg must be >= 1");
        if (alpha < 0 || alpha > 1 || beta < 0 || beta > 1)
            throw ConfigError("alpha and beta must be in [0,1]");
        if (tau <= 0) throw ConfigError("tau must be > 0");
        if (mine_depth < 1 || diag_depth < 1 || k_eval < 1 || k_learn < 1)
            throw ConfigError("depths and cutoffs must be >= 1");
        encoder.validate();
    }
};

inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream out;
    out << "episodes = " << c.episodes << '\n'
        << "strategy = " << to_string(c.strategy) << '\n'
        << "mode = " << to_string(c.mode) << '\n'
        << "refresh_fraction = " << c.refresh_fraction << '\n'
        << "epochs_per_episode = " << c.epochs_per_episode << '\n'
        << "batch_queries = " << c.batch_queries << '\n'
        << "n_neg = " << c.n_neg << '\n'
        << "alpha = " << c.alpha << '\n'
        << "beta = " << c.beta << '\n'
        << "tau = " << c.tau << '\n'
        << "in_batch_negatives = " << (c.in_batch_negatives ? "true" : "false") << '\n'
        << "dedup = " << (c.dedup ? "true" : "false") << '\n'
        << "schedule = " << to_string(c.schedule) << '\n'
        << "base_lr = " << c.base_lr << '\n'
        << "warmup_fraction = " << c.warmup_fraction << '\n'
        << "mine_depth = " << c.mine_depth << '\n'
        << "diag_depth = " << c.diag_depth << '\n'
        << "k_eval = " << c.k_eval << '\n'
        << "k_learn = " << c.k_learn << '\n'
        << "bm25_k1 = " << c.bm25_k1 << '\n'
        << "bm25_b = " << c.bm25_b << '\n'
        << "vocab_hash_size = " << c.encoder.vocab_hash_size << '\n'
        << "embed_dim = " << c.encoder.embed_dim << '\n'
        << "hidden_dim = " << c.encoder.hidden_dim << '\n'
        << "out_dim = " << c.encoder.out_dim << '\n'
        << "seed = " << c.seed << '\n';
    out << "recall_cutoffs = ";
    for (std::size_t i = 0; i < c.recall_cutoffs.size(); ++i)
        out << (i ? "," : "") << c.recall_cutoffs[i];
    out << '\n';
    return out.str();
}

inline std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(serialize_config(c))));
    return buf;
}

/// Parses the run config file: one `key = value` per line, `#` comments,
/// unknown keys rejected. This is the TOML subset the config files use.
inline RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        try {
            if (key == "episodes") c.episodes = std::stoi(val);
            else if (key == "strategy") c.strategy = strategy_from_string(val);
            else if (key == "mode") c.mode = mode_from_string(val);
            else if (key == "refresh_fraction") c.refresh_fraction = std::stod(val);
            else if (key == "epochs_per_episode") c.epochs_per_episode = std::stoi(val);
            else if (key == "batch_queries") c.batch_queries = std::stoi(val);
            else if (key == "n_neg") c.n_neg = std::stoi(val);
            else if (key == "alpha") c.alpha = std::stod(val);
            else if (key == "beta") c.beta = std::stod(val);
            else if (key == "tau") c.tau = std::stod(val);
            else if (key == "in_batch_negatives") c.in_batch_negatives = (val == "true");
            else if (key == "dedup") c.dedup = (val == "true");
            else if (key == "schedule") c.schedule = lr_kind_from_string(val);
            else if (key == "base_lr") c.base_lr = std::stod(val);
            else if (key == "warmup_fraction") c.warmup_fraction = std::stod(val);
            else if (key == "mine_depth") c.mine_depth = std::stoi(val);
            else if (key == "diag_depth") c.diag_depth = std::stoi(val);
            else if (key == "k_eval") c.k_eval = std::stoi(val);
            else if (key == "k_learn") c.k_learn = std::stoi(val);
            else if (key == "bm25_k1") c.bm25_k1 = std::stod(val);
            else if (key == "bm25_b") c.bm25_b = std::stod(val);
            else if (key == "vocab_hash_size") c.encoder.vocab_hash_size = std::stoi(val);
            else if (key == "embed_dim") c.encoder.embed_dim = std::stoi(val);
            else if (key == "hidden_dim") c.encoder.hidden_dim = std::stoi(val);
            else if (key == "out_dim") c.encoder.out_dim = std::stoi(val);
            else if (key == "seed") c.seed = std::stoull(val);
            else if (key == "recall_cutoffs") {
                c.recall_cutoffs.clear();
                std::istringstream vs(val);
                std::string tok;
                while (std::getline(vs, tok, ',')) c.recall_cutoffs.push_back(std::stoi(tok));
            } else {
                throw ConfigError("unknown config key: " + key);
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config line " + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

struct EpisodeResult {
    int episode = 0;
    EncoderModel final_model;
    EncoderModel refresh_model;
    AdamState final_opt;
    std::vector<std::pair<std::uint64_t, double>> loss_curve;  // (global step, loss)
};

namespace detail {

inline std::vector<std::uint32_t> hashed(const std::string& text, const EncoderConfig& cfg) {
    return hash_tokens(text, cfg.vocab_hash_size);
}

inline std::string dump_batch(const TrainBatch& batch) {
    std::ostringstream ss;
    for (const auto& ex : batch.examples) ss << ' ' << ex.query_id;
    return ss.str();
}

}  // namespace detail

/// Planned optimizer steps for one episode (epochs x ceil(queries / batch)).
inline std::uint64_t planned_steps(const RunConfig& config, std::size_t n_queries) {
    std::uint64_t per_epoch = (std::uint64_t(n_queries) + std::uint64_t(config.batch_queries) - 1) /
                              std::uint64_t(config.batch_queries);
    return std::uint64_t(config.epochs_per_episode) * per_epoch;
}

/// Runs one training episode over the given pool. Starts from theta_init
/// with fresh optimizer state; takes the refresh checkpoint after step
/// ceil(refresh_fraction * total_steps) and the final checkpoint at the end.
inline EpisodeResult run_episode(const RunConfig& config, int episode,
                                 const EncoderModel& theta_init, const NegativePool& pool,
                                 const std::vector<Query>& queries,
                                 const std::vector<Document>& corpus, const Qrels& qrels,
                                 const LrSchedule& schedule, std::uint64_t global_step_offset = 0) {
    config.validate();
    EpisodeResult result;
    result.episode = episode;
    EncoderModel model = theta_init;
    AdamState opt = AdamState::zeros_like(model);

    std::map<std::string, const Document*> by_id;
    for (const auto& d : corpus) by_id[d.id] = &d;
    auto doc_tokens = [&](const std::string& did) {
        auto it = by_id.find(did);
        if (it == by_id.end()) throw DataError("unknown document id: " + did);
        return detail::hashed(it->second->text, config.encoder);
    };

    // trainable queries: a positive in qrels and a non-empty pool entry
    std::vector<const Query*> usable;
    for (const auto& q : queries) {
        auto qit = qrels.find(q.id);
        if (qit == qrels.end() || qit->second.empty()) continue;
        auto pit = pool.negatives.find(q.id);
        if (pit != pool.negatives.end() && !pit->second.empty()) usable.push_back(&q);
    }
    if (usable.empty() && config.epochs_per_episode > 0)
        throw DataError("run_episode: no trainable queries (empty pools?)");

    std::uint64_t total_steps = planned_steps(config, usable.size());
    std::uint64_t refresh_step =
        total_steps == 0
            ? 0
            : std::uint64_t(std::ceil(config.refresh_fraction * double(total_steps)));

    result.refresh_model = model;  // overwritten unless epochs == 0
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < config.epochs_per_episode; ++epoch) {
        std::vector<const Query*> order = usable;
        Rng shuffle_rng(derive_seed(config.seed, fnv1a("shuffle"), std::uint64_t(episode),
                                    std::uint64_t(epoch)));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += std::size_t(config.batch_queries)) {
            std::size_t end = std::min(order.size(), start + std::size_t(config.batch_queries));
            TrainBatch batch;
            for (std::size_t qi = start; qi < end; ++qi) {
                const Query& q = *order[qi];
                auto sample = sample_training_negatives(
                    pool.negatives.at(q.id), config.n_neg,
                    derive_seed(config.seed, fnv1a("sample"),
                                std::uint64_t(episode) * 1000003ULL + step, fnv1a(q.id)),
                    pool.alpha, pool.beta, /*warn=*/false);
                TrainExample ex;
                ex.query_id = q.id;
                ex.query = detail::hashed(q.text, config.encoder);
                ex.positive = doc_tokens(*qrels.at(q.id).begin());
                ex.negatives.reserve(sample.size());
                for (const auto& rec : sample) ex.negatives.push_back(doc_tokens(rec.doc_id));
                batch.examples.push_back(std::move(ex));
            }
            if (config.in_batch_negatives && batch.examples.size() > 1) {
                // other queries' positives become extra negatives
                std::vector<std::vector<std::uint32_t>> positives;
                for (const auto& ex : batch.examples) positives.push_back(ex.positive);
                for (std::size_t i = 0; i < batch.examples.size(); ++i)
                    for (std::size_t j = 0; j < positives.size(); ++j)
                        if (j != i) batch.examples[i].negatives.push_back(positives[j]);
            }

            auto lr = lr_at(schedule, global_step_offset + step);
            LossResult lr_res;
            try {
                lr_res = loss_and_grad(model, batch, config.tau);
            } catch (const Error& e) {
                throw Error(std::string("episode ") + std::to_string(episode) + " step " +
                            std::to_string(step) + ": " + e.what() +
                            "; batch queries:" + detail::dump_batch(batch));
            }
            if (!std::isfinite(lr_res.loss))
                throw Error("episode " + std::to_string(episode) + " step " +
                            std::to_string(step) + ": non-finite loss; batch queries:" +
                            detail::dump_batch(batch));
            optimizer_step(model, lr_res.grads, opt, lr);
            ++step;
            result.loss_curve.emplace_back(global_step_offset + step - 1, lr_res.loss);
            if (step == refresh_step) result.refresh_model = model;
        }
    }
    if (refresh_step >= total_steps) result.refresh_model = model;
    result.final_model = std::move(model);
    result.final_opt = std::move(opt);
    return result;
}

/// One episode's worth of run-directory artifacts plus the in-memory
/// diagnostics inputs the analyze stage consumes.
struct EpisodeArtifacts {
    int episode = 0;
    std::string checkpoint_path;
    std::string refresh_path;
    std::string pool_path;
    std::string loss_path;
    std::string snapshot_path;
    EvalSnapshot snapshot;
    NegSetEpisode hard_negatives;                          // diagnostics candidate set
    std::map<std::string, std::set<std::string>> lookahead;  // d+ neighbor lists
    double final_loss = 0.0;
};

namespace detail {

inline std::map<std::string, std::set<std::string>> to_sets(const CandidateLists& lists) {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& [qid, recs] : lists)
        for (const auto& r : recs) out[qid].insert(r.doc_id);
    return out;
}

inline nlohmann::json sets_to_json(const std::map<std::string, std::set<std::string>>& sets) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [qid, docs] : sets) j[qid] = std::vector<std::string>(docs.begin(), docs.end());
    return j;
}

inline std::map<std::string, std::set<std::string>> sets_from_json(const nlohmann::json& j) {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& [qid, docs] : j.items())
        for (const auto& d : docs) out[qid].insert(d.get<std::string>());
    return out;
}

}  // namespace detail

/// Runs the full episodic mine -> train -> refresh loop and writes all run
/// artifacts under run_dir (pass an empty run_dir to keep everything in
/// memory only). Episode i mines with the refresh checkpoint of episode i-1
/// (episode 1 mines with the initial model).
inline std::vector<EpisodeArtifacts> run_experiment(const RunConfig& config,
                                                    const std::vector<Document>& corpus,
                                                    const std::vector<Query>& queries,
                                                    const Qrels& qrels,
                                                    const std::string& run_dir = "") {
    config.validate();
    namespace fs = std::filesystem;
    const std::string hash = config_hash(config);
    const bool persist = !run_dir.empty();
    if (persist) fs::create_directories(run_dir);

    const bool needs_sparse = config.strategy == Strategy::ance_bm25_warmup ||
                              config.strategy == Strategy::tele_plus_bm25;
    std::optional<SparseIndex> sparse;
    if (needs_sparse) sparse = build_sparse_index(corpus, config.bm25_k1, config.bm25_b);

    EncoderModel theta0 = init_model(config.encoder, config.seed);

    LrSchedule schedule;
    schedule.kind = config.schedule;
    schedule.base_lr = config.base_lr;
    schedule.warmup_fraction = config.warmup_fraction;
    std::uint64_t per_episode = planned_steps(config, queries.size());
    schedule.total_steps = std::max<std::uint64_t>(1, per_episode * std::uint64_t(config.episodes));
    for (int i = 1; i < config.episodes; ++i)
        schedule.episode_boundaries.push_back(per_episode * std::uint64_t(i));

    std::vector<EpisodeArtifacts> artifacts;
    EncoderModel prev_final = theta0;
    EncoderModel mining_model = theta0;  // theta_refresh of the previous episode
    NegativePool prev_pool;              // D_0 = empty

    for (int i = 1; i <= config.episodes; ++i) {
        // --- mine ---
        NegativePool pool;
        pool.episode = i;
        pool.alpha = config.alpha;
        pool.beta = config.beta;
        const bool want_query_ann =
            !(config.strategy == Strategy::ance_bm25_warmup && i == 1);
        const bool want_lookahead = config.strategy == Strategy::tele ||
                                    config.strategy == Strategy::tele_no_momentum ||
                                    config.strategy == Strategy::tele_plus_bm25;
        const bool want_momentum = config.strategy == Strategy::tele ||
                                   config.strategy == Strategy::tele_no_lookahead ||
                                   config.strategy == Strategy::tele_plus_bm25;
        const bool want_bm25 = (config.strategy == Strategy::ance_bm25_warmup && i == 1) ||
                               config.strategy == Strategy::tele_plus_bm25;

        std::optional<DenseIndex> mine_index;
        if (want_query_ann || want_lookahead)
            mine_index = build_index(mining_model, corpus, IndexMode::exact, {}, config.seed);

        CandidateLists qneg, laneg;
        if (want_query_ann)
            qneg = mine_query_negatives(*mine_index, mining_model, queries, qrels,
                                        config.mine_depth, i);
        if (want_lookahead)
            laneg = mine_lookahead_negatives(*mine_index, mining_model, queries, corpus, qrels,
                                             config.mine_depth, i);
        pool = build_tele_pool(qneg, laneg, want_momentum ? prev_pool : NegativePool{},
                               config.alpha, config.beta, i);
        if (want_bm25)
            add_candidates(pool, mine_bm25_negatives(*sparse, queries, qrels, config.mine_depth, i));
        if (config.dedup) pool = dedup_pool(pool);
        check_no_positives(pool, qrels);

        // --- train ---
        EncoderModel theta_init =
            config.mode == TrainMode::from_scratch || i == 1 ? theta0 : prev_final;
        auto epi = run_episode(config, i, theta_init, pool, queries, corpus, qrels, schedule,
                               per_episode * std::uint64_t(i - 1));

        // --- diagnostics snapshot under the final model ---
        EpisodeArtifacts art;
        art.episode = i;
        auto eval_index = build_index(epi.final_model, corpus, IndexMode::exact, {}, config.seed);
        art.snapshot = evaluate(eval_index, epi.final_model, queries, qrels, config.k_eval,
                                config.recall_cutoffs);
        art.snapshot.episode = i;
        art.hard_negatives.label = (config.strategy == Strategy::ance_bm25_warmup && i == 1)
                                       ? std::string("bm25")
                                       : "epi-" + std::to_string(i);
        // the episode's candidate set, trimmed to diag_depth so set sizes
        // stay comparable across episodes
        {
            std::map<std::string, std::set<std::string>> trimmed;
            if (want_query_ann)
                trimmed = detail::to_sets(mine_query_negatives(*mine_index, mining_model, queries,
                                                               qrels, config.diag_depth, i));
            if (want_bm25) {
                auto bm = detail::to_sets(
                    mine_bm25_negatives(*sparse, queries, qrels, config.diag_depth, i));
                for (auto& [qid, docs] : bm) trimmed[qid].insert(docs.begin(), docs.end());
            }
            art.hard_negatives.sets = std::move(trimmed);
        }
        // lookahead lists under the final model, for next-episode coverage
        art.lookahead = detail::to_sets(mine_lookahead_negatives(
            eval_index, epi.final_model, queries, corpus, qrels, config.diag_depth, i));
        art.final_loss = epi.loss_curve.empty() ? 0.0 : epi.loss_curve.back().second;

        // --- persist ---
        if (persist) {
            fs::path dir = fs::path(run_dir) / ("epi-" + std::to_string(i));
            fs::create_directories(dir);
            art.checkpoint_path = (dir / "checkpoint.bin").string();
            art.refresh_path = (dir / "refresh.bin").string();
            art.pool_path = (dir / "pool.jsonl").string();
            art.loss_path = (dir / "loss.csv").string();
            art.snapshot_path = (dir / "snapshot.json").string();
            save_checkpoint(epi.final_model, epi.final_opt, art.checkpoint_path);
            save_checkpoint(epi.refresh_model, AdamState::zeros_like(epi.refresh_model),
                            art.refresh_path);
            save_pool(pool, art.pool_path, hash);
            {
                std::ofstream out(art.loss_path, std::ios::binary);
                out << "# config_hash=" << hash << "\nstep,loss,lr\n";
                out.precision(12);
                for (const auto& [s, l] : epi.loss_curve)
                    out << s << ',' << l << ',' << lr_at(schedule, s) << '\n';
            }
            {
                nlohmann::json j;
                j["config_hash"] = hash;
                j["episode"] = i;
                j["mrr10"] = art.snapshot.mrr10;
                j["recall"] = nlohmann::json::object();
                for (const auto& [c, r] : art.snapshot.recall)
                    j["recall"][std::to_string(c)] = r;
                j["first_rank"] = nlohmann::json::object();
                for (const auto& [qid, r] : art.snapshot.first_rank)
                    j["first_rank"][qid] = r;
                j["query_ids"] = art.snapshot.query_ids;
                j["hard_negative_label"] = art.hard_negatives.label;
                j["hard_negatives"] = detail::sets_to_json(art.hard_negatives.sets);
                j["lookahead"] = detail::sets_to_json(art.lookahead);
                std::ofstream out(art.snapshot_path, std::ios::binary);
                out << j.dump(2) << '\n';
            }
        }

        artifacts.push_back(std::move(art));
        prev_final = epi.final_model;
        mining_model = epi.refresh_model;
        prev_pool = std::move(pool);
    }

    if (persist) {
        nlohmann::json rep;
        rep["config_hash"] = hash;
        rep["config"] = serialize_config(config);
        rep["strategy"] = to_string(config.strategy);
        rep["episodes"] = nlohmann::json::array();
        for (const auto& art : artifacts) {
            nlohmann::json e;
            e["episode"] = art.episode;
            e["mrr10"] = art.snapshot.mrr10;
            for (const auto& [c, r] : art.snapshot.recall)
                e["recall@" + std::to_string(c)] = r;
            e["final_loss"] = art.final_loss;
            rep["episodes"].push_back(std::move(e));
        }
        std::ofstream out((std::filesystem::path(run_dir) / "report.json").string(),
                          std::ios::binary);
        out << rep.dump(2) << '\n';
    }
    return artifacts;
}

}  // namespace retlab

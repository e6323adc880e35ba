// Command-line front end: gen-data | index | mine | train | eval | analyze.
//
// Exit codes: 0 success, 2 missing input, 3 invalid configuration,
// 4 data/format error, 5 internal error (CLI11 reports its own parse errors).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "retlab/retlab.hpp"

namespace fs = std::filesystem;
using namespace retlab;

namespace {

constexpr int kExitMissingInput = 2;
constexpr int kExitBadConfig = 3;
constexpr int kExitDataError = 4;
constexpr int kExitInternal = 5;

bool g_verbose = false;

struct MissingInput : Error {
    using Error::Error;
};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw MissingInput(what + " not found: " + path);
}

/// Exclusive ownership of a run directory for the process lifetime.
struct RunDirLock {
    fs::path lock_path;
    explicit RunDirLock(const std::string& run_dir) {
        fs::create_directories(run_dir);
        lock_path = fs::path(run_dir) / ".lock";
        std::FILE* f = std::fopen(lock_path.string().c_str(), "wx");
        if (!f) throw ConfigError("run directory is locked by another process: " + run_dir);
        std::fclose(f);
    }
    ~RunDirLock() {
        std::error_code ec;
        fs::remove(lock_path, ec);
    }
};

CorpusFormat format_from_string(const std::string& s) {
    if (s == "tsv") return CorpusFormat::tsv;
    if (s == "jsonl") return CorpusFormat::jsonl;
    throw ConfigError("unknown corpus format: " + s);
}

CorpusFormat guess_format(const std::string& path) {
    return path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl" ? CorpusFormat::jsonl
                                                                        : CorpusFormat::tsv;
}

std::vector<Document> load_corpus_auto(const std::string& path, const std::string& format) {
    require_file(path, "corpus");
    return load_corpus(path, format.empty() ? guess_format(path) : format_from_string(format));
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& out_dir) {
    auto data = generate_synthetic(spec);
    fs::create_directories(out_dir);
    save_corpus(data.corpus, (fs::path(out_dir) / "corpus.jsonl").string(), CorpusFormat::jsonl);
    save_queries(data.queries, (fs::path(out_dir) / "queries.tsv").string());
    save_qrels(data.qrels, (fs::path(out_dir) / "qrels.tsv").string());
    std::cout << "wrote " << data.corpus.size() << " docs, " << data.queries.size()
              << " queries to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Dense-retrieval training laboratory: iterative hard-negative mining with momentum "
        "and lookahead negatives, plus forgetting/composition/swing diagnostics."};
    app.require_subcommand(1);
    app.add_flag("--verbose", g_verbose, "print full error context");
    app.footer(
        "Exit codes: 0 ok, 2 missing input, 3 invalid configuration, 4 data/format error,\n"
        "5 internal error.\n"
        "File formats:\n"
        "  corpus    TSV `id<TAB>text` or JSONL {\"id\",\"text\",[\"group_tag\"]}\n"
        "  queries   TSV `id<TAB>text`\n"
        "  qrels     TREC TSV `query_id<TAB>0<TAB>doc_id<TAB>relevance` (relevance >= 1)\n"
        "  pool      JSONL {\"query_id\",\"episode\",\"negatives\":[{\"doc_id\",\"source\","
        "\"origin_episode\"}]}\n"
        "  config    `key = value` lines; see README for keys");

    // ---- gen-data ----
    SyntheticSpec spec;
    std::string gen_out = "data";
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark");
    gen->add_option("--queries", spec.n_queries, "number of queries");
    gen->add_option("--groups", spec.groups_per_query, "distractor groups per query");
    gen->add_option("--docs-per-group", spec.docs_per_group, "distractors per group");
    gen->add_option("--filler", spec.n_filler_docs, "shared filler documents");
    gen->add_option("--vocab", spec.vocab_size, "vocabulary size");
    gen->add_option("--aspect-tokens", spec.aspect_tokens_per_query, "aspect tokens per query");
    gen->add_option("--noise", spec.noise_rate, "noise token rate in [0,1]");
    gen->add_option("--seed", spec.seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");

    // ---- index ----
    std::string idx_type = "dense", idx_corpus, idx_corpus_format, idx_out = "index.bin",
                idx_ckpt, idx_mode = "exact";
    IvfParams idx_ivf;
    std::uint64_t idx_seed = 42;
    double idx_k1 = 0.9, idx_b = 0.4;
    auto* idx = app.add_subcommand("index", "build a dense or sparse index");
    idx->add_option("--type", idx_type, "dense | sparse")->check(CLI::IsMember({"dense", "sparse"}));
    idx->add_option("--corpus", idx_corpus, "corpus file")->required();
    idx->add_option("--format", idx_corpus_format, "tsv | jsonl (default: by extension)");
    idx->add_option("--out", idx_out, "output index file");
    idx->add_option("--checkpoint", idx_ckpt, "encoder checkpoint (dense)");
    idx->add_option("--mode", idx_mode, "exact | ivf")->check(CLI::IsMember({"exact", "ivf"}));
    idx->add_option("--clusters", idx_ivf.n_clusters, "ivf clusters");
    idx->add_option("--probe", idx_ivf.n_probe, "ivf probes");
    idx->add_option("--seed", idx_seed, "clustering seed");
    idx->add_option("--k1", idx_k1, "bm25 k1 (sparse)");
    idx->add_option("--b", idx_b, "bm25 b (sparse)");

    // ---- mine ----
    std::string mine_strategy = "query_ann", mine_corpus, mine_corpus_format, mine_queries,
                mine_qrels, mine_index_path, mine_sparse_path, mine_ckpt, mine_prev_pool,
                mine_out = "pool.jsonl";
    int mine_depth = 200, mine_episode = 1;
    double mine_alpha = 0.5, mine_beta = 0.5;
    auto* mine = app.add_subcommand("mine", "mine negatives into a pool file");
    mine->add_option("--strategy", mine_strategy, "bm25 | query_ann | lookahead | tele")
        ->check(CLI::IsMember({"bm25", "query_ann", "lookahead", "tele"}));
    mine->add_option("--corpus", mine_corpus, "corpus file (lookahead/tele)");
    mine->add_option("--format", mine_corpus_format, "corpus format");
    mine->add_option("--queries", mine_queries, "queries file")->required();
    mine->add_option("--qrels", mine_qrels, "qrels file")->required();
    mine->add_option("--index", mine_index_path, "dense index file");
    mine->add_option("--sparse-index", mine_sparse_path, "sparse index file (bm25)");
    mine->add_option("--checkpoint", mine_ckpt, "encoder checkpoint");
    mine->add_option("--prev-pool", mine_prev_pool, "previous episode pool (tele momentum)");
    mine->add_option("--k,--depth", mine_depth, "candidate depth");
    mine->add_option("--episode", mine_episode, "episode index");
    mine->add_option("--alpha", mine_alpha, "momentum sampling weight");
    mine->add_option("--beta", mine_beta, "lookahead sampling weight");
    mine->add_option("--out", mine_out, "output pool file");

    // ---- train ----
    std::string train_config, train_corpus, train_corpus_format, train_queries, train_qrels,
        train_run_dir = "run";
    std::optional<std::string> train_strategy;
    std::optional<int> train_episodes;
    std::optional<std::uint64_t> train_seed;
    auto* train = app.add_subcommand("train", "run the episodic training experiment");
    train->add_option("--config", train_config, "run config file");
    train->add_option("--corpus", train_corpus, "corpus file")->required();
    train->add_option("--format", train_corpus_format, "corpus format");
    train->add_option("--queries", train_queries, "queries file")->required();
    train->add_option("--qrels", train_qrels, "qrels file")->required();
    train->add_option("--run-dir", train_run_dir, "artifact directory");
    train->add_option("--strategy", train_strategy, "override strategy");
    train->add_option("--episodes", train_episodes, "override episode count");
    train->add_option("--seed", train_seed, "override seed");

    // ---- eval ----
    std::string eval_index, eval_ckpt, eval_queries, eval_qrels, eval_dump, eval_out;
    int eval_k = 100;
    std::vector<int> eval_cutoffs = {5, 10, 100};
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against an index");
    eval->add_option("--index", eval_index, "dense index file")->required();
    eval->add_option("--checkpoint", eval_ckpt, "encoder checkpoint")->required();
    eval->add_option("--queries", eval_queries, "queries file")->required();
    eval->add_option("--qrels", eval_qrels, "qrels file")->required();
    eval->add_option("--k", eval_k, "evaluation depth K_eval");
    eval->add_option("--cutoffs", eval_cutoffs, "recall cutoffs");
    eval->add_option("--dump-embeddings", eval_dump, "also dump query embeddings to this file");
    eval->add_option("--out", eval_out, "write metrics as json");

    // ---- analyze ----
    std::string an_run_dir, an_corpus, an_corpus_format;
    int an_k_learn = 10;
    auto* an = app.add_subcommand("analyze", "turn a run directory into the CSV suite");
    an->add_option("--run-dir", an_run_dir, "run directory")->required();
    an->add_option("--corpus", an_corpus, "corpus file (enables group_tag swing series)");
    an->add_option("--format", an_corpus_format, "corpus format");
    an->add_option("--k-learn", an_k_learn, "learned-query rank threshold");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_gen_data(spec, gen_out);

        if (*idx) {
            auto corpus = load_corpus_auto(idx_corpus, idx_corpus_format);
            if (idx_type == "sparse") {
                save_sparse_index(build_sparse_index(corpus, idx_k1, idx_b), idx_out);
            } else {
                if (idx_ckpt.empty())
                    throw MissingInput("dense index requires --checkpoint");
                require_file(idx_ckpt, "checkpoint");
                auto [model, opt] = load_checkpoint(idx_ckpt);
                auto mode = idx_mode == "ivf" ? IndexMode::ivf : IndexMode::exact;
                save_index(build_index(model, corpus, mode, idx_ivf, idx_seed), idx_out);
            }
            std::cout << "wrote " << idx_out << "\n";
            return 0;
        }

        if (*mine) {
            require_file(mine_queries, "queries");
            require_file(mine_qrels, "qrels");
            auto queries = load_queries(mine_queries);
            auto qrels = load_qrels(mine_qrels);
            NegativePool pool;
            pool.episode = mine_episode;
            pool.alpha = mine_alpha;
            pool.beta = mine_beta;
            if (mine_strategy == "bm25") {
                if (mine_sparse_path.empty())
                    throw MissingInput("mine --strategy bm25 requires --sparse-index");
                require_file(mine_sparse_path, "sparse index");
                auto sparse = load_sparse_index(mine_sparse_path);
                add_candidates(pool,
                               mine_bm25_negatives(sparse, queries, qrels, mine_depth, mine_episode));
            } else {
                if (mine_index_path.empty() || mine_ckpt.empty())
                    throw MissingInput("mine --strategy " + mine_strategy +
                                       " requires --index and --checkpoint");
                require_file(mine_index_path, "dense index");
                require_file(mine_ckpt, "checkpoint");
                auto index = load_index(mine_index_path);
                auto [model, opt] = load_checkpoint(mine_ckpt);
                if (mine_strategy == "query_ann") {
                    add_candidates(pool, mine_query_negatives(index, model, queries, qrels,
                                                              mine_depth, mine_episode));
                } else {
                    if (mine_corpus.empty())
                        throw MissingInput("mine --strategy " + mine_strategy +
                                           " requires --corpus");
                    auto corpus = load_corpus_auto(mine_corpus, mine_corpus_format);
                    auto la = mine_lookahead_negatives(index, model, queries, corpus, qrels,
                                                       mine_depth, mine_episode);
                    if (mine_strategy == "lookahead") {
                        add_candidates(pool, la);
                    } else {  // tele
                        auto qn = mine_query_negatives(index, model, queries, qrels, mine_depth,
                                                       mine_episode);
                        NegativePool prev;
                        if (!mine_prev_pool.empty()) {
                            require_file(mine_prev_pool, "previous pool");
                            prev = load_pool(mine_prev_pool);
                        }
                        pool = build_tele_pool(qn, la, prev, mine_alpha, mine_beta, mine_episode);
                    }
                }
            }
            check_no_positives(pool, qrels);
            save_pool(pool, mine_out);
            std::cout << "wrote " << mine_out << " (" << pool.negatives.size() << " queries)\n";
            return 0;
        }

        if (*train) {
            RunConfig config;
            if (!train_config.empty()) {
                require_file(train_config, "config");
                config = load_config(train_config);
            }
            if (train_strategy) config.strategy = strategy_from_string(*train_strategy);
            if (train_episodes) config.episodes = *train_episodes;
            if (train_seed) config.seed = *train_seed;
            config.validate();
            auto corpus = load_corpus_auto(train_corpus, train_corpus_format);
            require_file(train_queries, "queries");
            require_file(train_qrels, "qrels");
            auto queries = load_queries(train_queries);
            auto qrels = load_qrels(train_qrels);
            RunDirLock lock(train_run_dir);
            auto arts = run_experiment(config, corpus, queries, qrels, train_run_dir);
            for (const auto& a : arts)
                std::cout << "epi-" << a.episode << " mrr10=" << a.snapshot.mrr10
                          << " final_loss=" << a.final_loss << "\n";
            return 0;
        }

        if (*eval) {
            require_file(eval_index, "dense index");
            require_file(eval_ckpt, "checkpoint");
            require_file(eval_queries, "queries");
            require_file(eval_qrels, "qrels");
            auto index = load_index(eval_index);
            auto [model, opt] = load_checkpoint(eval_ckpt);
            auto queries = load_queries(eval_queries);
            auto qrels = load_qrels(eval_qrels);
            auto snap = evaluate(index, model, queries, qrels, eval_k, eval_cutoffs);
            std::cout << "mrr10=" << snap.mrr10;
            for (const auto& [c, r] : snap.recall) std::cout << " recall@" << c << "=" << r;
            std::cout << "\n";
            if (!eval_dump.empty()) {
                std::vector<std::pair<std::string, std::string>> items;
                for (const auto& q : queries) items.emplace_back(q.id, q.text);
                dump_embeddings(model, items, eval_dump);
            }
            if (!eval_out.empty()) {
                nlohmann::json j{{"mrr10", snap.mrr10}};
                for (const auto& [c, r] : snap.recall) j["recall@" + std::to_string(c)] = r;
                std::ofstream out(eval_out, std::ios::binary);
                out << j.dump(2) << '\n';
            }
            return 0;
        }

        if (*an) {
            require_file((fs::path(an_run_dir) / "report.json").string(), "run report");
            auto episodes = load_run_snapshots(an_run_dir);
            std::map<std::string, std::string> group_tags;
            if (!an_corpus.empty())
                for (const auto& d : load_corpus_auto(an_corpus, an_corpus_format))
                    if (!d.group_tag.empty()) group_tags[d.id] = d.group_tag;
            auto outputs = analyze_run(episodes, an_k_learn, group_tags);
            write_analysis_csvs(outputs, an_run_dir, episodes.front().config_hash);
            std::cout << "wrote metrics.csv forgetting.csv composition.csv swing.csv "
                         "swing_groups.csv per_query_mrr.csv under "
                      << an_run_dir << "\n";
            return 0;
        }
    } catch (const MissingInput& e) {
        std::cerr << "error: missing-input: " << e.what() << "\n";
        return kExitMissingInput;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitDataError;
    } catch (const FormatError& e) {
        std::cerr << "error: format: " << e.what() << "\n";
        return kExitDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        if (g_verbose) throw;
        return kExitInternal;
    }
    return 0;
}

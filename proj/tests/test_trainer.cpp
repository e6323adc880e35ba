#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "retlab/analyze.hpp"
#include "retlab/trainer.hpp"

using namespace retlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("retlab-trainer-" + std::to_string(std::rand()) + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig small_config() {
    RunConfig c;
    c.episodes = 3;
    c.epochs_per_episode = 2;
    c.batch_queries = 4;
    c.n_neg = 4;
    c.mine_depth = 10;
    c.diag_depth = 5;
    c.k_eval = 20;
    c.recall_cutoffs = {5, 10};
    c.base_lr = 0.01;
    c.encoder.vocab_hash_size = 512;
    c.encoder.embed_dim = 8;
    c.encoder.hidden_dim = 8;
    c.encoder.out_dim = 8;
    c.seed = 7;
    return c;
}

SyntheticData small_data() {
    SyntheticSpec spec;
    spec.n_queries = 6;
    spec.groups_per_query = 2;
    spec.docs_per_group = 2;
    spec.n_filler_docs = 20;
    spec.seed = 5;
    return generate_synthetic(spec);
}

std::map<NegSource, int> source_histogram(const NegativePool& pool) {
    std::map<NegSource, int> h;
    for (const auto& [qid, recs] : pool.negatives)
        for (const auto& r : recs) ++h[r.source];
    return h;
}

}  // namespace

TEST_CASE("config serializes and parses losslessly") {
    auto c = small_config();
    c.strategy = Strategy::tele_plus_bm25;
    c.mode = TrainMode::continue_training;
    c.in_batch_negatives = true;
    c.tau = 0.25;
    c.recall_cutoffs = {3, 7, 50};
    auto parsed = parse_config_text(serialize_config(c));
    CHECK(config_hash(parsed) == config_hash(c));
    CHECK(parsed.strategy == Strategy::tele_plus_bm25);
    CHECK(parsed.mode == TrainMode::continue_training);
    CHECK(parsed.in_batch_negatives);
    CHECK(parsed.recall_cutoffs == std::vector<int>{3, 7, 50});
}

TEST_CASE("config parser rejects unknown keys and bad values") {
    CHECK_THROWS_WITH(parse_config_text("no_such_key = 1\n"),
                      Catch::Matchers::ContainsSubstring("no_such_key"));
    CHECK_THROWS_WITH(parse_config_text("episodes = banana\n"),
                      Catch::Matchers::ContainsSubstring("line 1"));
    CHECK_THROWS_AS(parse_config_text("just some words\n"), ConfigError);
    // comments and blank lines are fine
    auto c = parse_config_text("# a comment\n\nepisodes = 5  # trailing\n");
    CHECK(c.episodes == 5);
}

TEST_CASE("config_hash changes with any field") {
    auto a = small_config();
    auto b = a;
    b.n_neg += 1;
    CHECK(config_hash(a) != config_hash(b));
    auto c = a;
    c.seed += 1;
    CHECK(config_hash(a) != config_hash(c));
    CHECK(config_hash(a) == config_hash(small_config()));
    CHECK(config_hash(a).size() == 16);
}

TEST_CASE("config validation catches out-of-range values") {
    auto c = small_config();
    c.refresh_fraction = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.tau = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("planned_steps is epochs times ceil(queries/batch)") {
    auto c = small_config();
    c.epochs_per_episode = 3;
    c.batch_queries = 4;
    CHECK(planned_steps(c, 10) == 3 * 3);  // ceil(10/4) = 3
    CHECK(planned_steps(c, 8) == 3 * 2);
    CHECK(planned_steps(c, 1) == 3);
    c.epochs_per_episode = 0;
    CHECK(planned_steps(c, 10) == 0);
}

TEST_CASE("run_episode is deterministic and records one loss per step") {
    auto config = small_config();
    auto data = small_data();
    auto model = init_model(config.encoder, config.seed);
    auto index = build_index(model, data.corpus);
    auto pool = build_tele_pool(
        mine_query_negatives(index, model, data.queries, data.qrels, config.mine_depth),
        {}, {}, 0.5, 0.5, 1);
    LrSchedule sched;
    sched.base_lr = config.base_lr;
    sched.total_steps = planned_steps(config, data.queries.size());
    auto a = run_episode(config, 1, model, pool, data.queries, data.corpus, data.qrels, sched);
    auto b = run_episode(config, 1, model, pool, data.queries, data.corpus, data.qrels, sched);
    CHECK(a.loss_curve.size() == planned_steps(config, data.queries.size()));
    CHECK(model_fingerprint(a.final_model) == model_fingerprint(b.final_model));
    REQUIRE(a.loss_curve.size() == b.loss_curve.size());
    for (std::size_t i = 0; i < a.loss_curve.size(); ++i)
        CHECK(a.loss_curve[i].second == b.loss_curve[i].second);
    // refresh_fraction = 1.0: refresh checkpoint equals the final model
    CHECK(model_fingerprint(a.refresh_model) == model_fingerprint(a.final_model));
}

TEST_CASE("an early refresh checkpoint differs from the final model") {
    auto config = small_config();
    config.refresh_fraction = 0.1;
    config.epochs_per_episode = 4;
    auto data = small_data();
    auto model = init_model(config.encoder, config.seed);
    auto index = build_index(model, data.corpus);
    auto pool = build_tele_pool(
        mine_query_negatives(index, model, data.queries, data.qrels, config.mine_depth),
        {}, {}, 0.5, 0.5, 1);
    LrSchedule sched;
    sched.base_lr = config.base_lr;
    sched.total_steps = planned_steps(config, data.queries.size());
    auto r = run_episode(config, 1, model, pool, data.queries, data.corpus, data.qrels, sched);
    CHECK(model_fingerprint(r.refresh_model) != model_fingerprint(r.final_model));
    CHECK(model_fingerprint(r.refresh_model) != model_fingerprint(model));  // it did train
}

TEST_CASE("training descends on a single-query fixture") {
    RunConfig config = small_config();
    config.epochs_per_episode = 100;  // 1 query -> 1 step per epoch
    config.batch_queries = 1;
    config.n_neg = 3;
    config.base_lr = 0.01;
    config.schedule = LrKind::constant;
    std::vector<Document> corpus{{"pos", "alpha beta gamma", ""},
                                 {"n1", "delta epsilon", ""},
                                 {"n2", "zeta eta", ""},
                                 {"n3", "theta iota", ""}};
    std::vector<Query> queries{{"q0", "alpha beta"}};
    Qrels qrels{{"q0", {"pos"}}};
    NegativePool pool;
    pool.negatives["q0"] = {{"n1", NegSource::query_ann, 1, 1},
                            {"n2", NegSource::query_ann, 1, 1},
                            {"n3", NegSource::query_ann, 1, 1}};
    LrSchedule sched;
    sched.base_lr = config.base_lr;
    sched.total_steps = planned_steps(config, 1);
    auto model = init_model(config.encoder, 3);
    auto r = run_episode(config, 1, model, pool, queries, corpus, qrels, sched);
    REQUIRE(r.loss_curve.size() == 100);
    double start = std::log(1.0 + 3.0);  // near-zero init scores start here
    CHECK(r.loss_curve.front().second == Catch::Approx(start).margin(0.05));
    CHECK(r.loss_curve.back().second < 0.5 * start);
}

TEST_CASE("run_episode refuses a run with no trainable queries") {
    auto config = small_config();
    auto data = small_data();
    auto model = init_model(config.encoder, config.seed);
    LrSchedule sched;
    sched.total_steps = 1;
    NegativePool empty;
    CHECK_THROWS_AS(
        run_episode(config, 1, model, empty, data.queries, data.corpus, data.qrels, sched),
        DataError);
}

TEST_CASE("tele experiment pools follow the episode structure") {
    auto config = small_config();
    config.strategy = Strategy::tele;
    auto data = small_data();
    TempDir dir;
    auto arts = run_experiment(config, data.corpus, data.queries, data.qrels, dir.path.string());
    REQUIRE(arts.size() == 3);
    std::vector<NegativePool> pools;
    for (int i = 1; i <= 3; ++i)
        pools.push_back(load_pool(dir.file("epi-" + std::to_string(i) + "/pool.jsonl")));

    auto h1 = source_histogram(pools[0]);
    CHECK(h1.count(NegSource::momentum) == 0);  // episode 1 starts from the empty pool
    CHECK(h1.count(NegSource::bm25) == 0);
    CHECK(h1[NegSource::query_ann] > 0);
    CHECK(h1[NegSource::lookahead] > 0);

    // momentum conservation: every pool-(i-1) record reappears in pool i
    for (int i = 1; i < 3; ++i) {
        for (const auto& [qid, recs] : pools[std::size_t(i - 1)].negatives) {
            std::multiset<std::string> momentum;
            for (const auto& r : pools[std::size_t(i)].negatives.at(qid))
                if (r.source == NegSource::momentum) momentum.insert(r.doc_id);
            std::multiset<std::string> want;
            for (const auto& r : recs) want.insert(r.doc_id);
            CHECK(momentum == want);
        }
    }
    for (const auto& pool : pools) CHECK_NOTHROW(check_no_positives(pool, data.qrels));

    // all artifact files exist
    for (const auto& art : arts) {
        CHECK(fs::exists(art.checkpoint_path));
        CHECK(fs::exists(art.refresh_path));
        CHECK(fs::exists(art.pool_path));
        CHECK(fs::exists(art.loss_path));
        CHECK(fs::exists(art.snapshot_path));
    }
    CHECK(fs::exists(dir.file("report.json")));
    auto loss = read_file(arts[0].loss_path);
    CHECK(loss.rfind("# config_hash=" + config_hash(config), 0) == 0);
    CHECK(loss.find("step,loss,lr") != std::string::npos);
}

TEST_CASE("strategy flags control which sources are mined") {
    auto data = small_data();
    TempDir dir;

    auto config = small_config();
    config.episodes = 2;
    config.strategy = Strategy::qneg_only;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("qneg"));
    for (int i = 1; i <= 2; ++i) {
        auto h = source_histogram(load_pool(dir.file("qneg/epi-" + std::to_string(i) + "/pool.jsonl")));
        CHECK(h.size() == 1);
        CHECK(h.count(NegSource::query_ann) == 1);
    }

    config.strategy = Strategy::ance_bm25_warmup;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("warmup"));
    auto h1 = source_histogram(load_pool(dir.file("warmup/epi-1/pool.jsonl")));
    CHECK(h1.size() == 1);
    CHECK(h1.count(NegSource::bm25) == 1);  // episode 1 is pure sparse retrieval
    auto h2 = source_histogram(load_pool(dir.file("warmup/epi-2/pool.jsonl")));
    CHECK(h2.count(NegSource::bm25) == 0);  // no momentum: warm-up negatives are dropped
    CHECK(h2.count(NegSource::query_ann) == 1);

    config.strategy = Strategy::tele_no_momentum;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("nomom"));
    for (int i = 1; i <= 2; ++i) {
        auto h = source_histogram(load_pool(dir.file("nomom/epi-" + std::to_string(i) + "/pool.jsonl")));
        CHECK(h.count(NegSource::momentum) == 0);
        CHECK(h.count(NegSource::lookahead) == 1);
    }

    config.strategy = Strategy::tele_no_lookahead;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("nola"));
    auto hn2 = source_histogram(load_pool(dir.file("nola/epi-2/pool.jsonl")));
    CHECK(hn2.count(NegSource::lookahead) == 0);
    CHECK(hn2.count(NegSource::momentum) == 1);

    config.strategy = Strategy::tele_plus_bm25;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("plus"));
    auto hp1 = source_histogram(load_pool(dir.file("plus/epi-1/pool.jsonl")));
    CHECK(hp1.count(NegSource::bm25) == 1);
    CHECK(hp1.count(NegSource::query_ann) == 1);
    CHECK(hp1.count(NegSource::lookahead) == 1);
}

TEST_CASE("continue mode produces a different trajectory than from_scratch") {
    auto data = small_data();
    auto config = small_config();
    config.episodes = 2;
    config.mode = TrainMode::from_scratch;
    auto a = run_experiment(config, data.corpus, data.queries, data.qrels);
    config.mode = TrainMode::continue_training;
    auto b = run_experiment(config, data.corpus, data.queries, data.qrels);
    // identical episode 1 (continue only differs from episode 2 on)
    CHECK(a[0].snapshot.mrr10 == b[0].snapshot.mrr10);
    bool differs = a[1].snapshot.mrr10 != b[1].snapshot.mrr10 ||
                   a[1].final_loss != b[1].final_loss;
    CHECK(differs);
}

TEST_CASE("experiments are deterministic end to end") {
    auto data = small_data();
    auto config = small_config();
    config.episodes = 2;
    TempDir dir;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("a"));
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.file("b"));
    for (const auto& name : {"epi-1/checkpoint.bin", "epi-2/checkpoint.bin", "epi-1/pool.jsonl",
                             "epi-2/loss.csv", "epi-2/snapshot.json", "report.json"})
        CHECK(read_file(dir.file(std::string("a/") + name)) ==
              read_file(dir.file(std::string("b/") + name)));
}

TEST_CASE("analyze_run consumes persisted snapshots and writes the CSV set") {
    auto data = small_data();
    auto config = small_config();
    config.strategy = Strategy::qneg_only;
    TempDir dir;
    run_experiment(config, data.corpus, data.queries, data.qrels, dir.path.string());
    auto episodes = load_run_snapshots(dir.path.string());
    REQUIRE(episodes.size() == 3);
    CHECK(episodes[0].config_hash == config_hash(config));
    CHECK(episodes[2].episode == 3);

    std::map<std::string, std::string> tags;
    for (const auto& d : data.corpus) tags[d.id] = d.group_tag;
    auto analysis = analyze_run(episodes, config.k_learn, tags);
    CHECK(analysis.snapshots.size() == 3);
    CHECK(analysis.forgetting_reports.size() == 2);
    CHECK(analysis.composition_reports.size() == 3);
    CHECK(analysis.has_swing);
    // episode 1 composition is all-new by definition
    CHECK(analysis.composition_reports[0].new_fraction == 1.0);

    write_analysis_csvs(analysis, dir.path.string(), config_hash(config));
    for (const auto& name : {"metrics.csv", "forgetting.csv", "composition.csv", "swing.csv",
                             "swing_groups.csv", "per_query_mrr.csv"}) {
        auto text = read_file(dir.file(name));
        CHECK(text.rfind("# config_hash=" + config_hash(config), 0) == 0);
    }
    auto forget = read_file(dir.file("forgetting.csv"));
    CHECK(forget.find("episode,learned_prev,forgotten,rate,rate_all_queries,empty_denominator") !=
          std::string::npos);
    auto comp = read_file(dir.file("composition.csv"));
    CHECK(comp.find("new_fraction") != std::string::npos);
    CHECK(comp.find("lookahead_coverage") != std::string::npos);
}
